"""End-to-end acceptance checks on synthetic data.

Each test prints one ``ACCEPTANCE <n> ... PASS|FAIL`` line with the measured
quantities, then asserts the criterion.
"""

import io
import os
import shutil
import time

import numpy as np
import pytest
from test_neural_field import GRAD_CONFIGS, _random_map, _smooth_points
from test_rotations import _fd_jacobian, _random_theta

from ncreg.cli import alignment_report, bench_paths, main, mean_ci
from ncreg.datasets import SyntheticCortex
from ncreg.fields import MeshField, NeuralField
from ncreg.geometry import SphericalMesh, make_icosphere, sample_sphere_uniform
from ncreg.io import (
    FeatureMap,
    read_csv_features,
    read_freesurfer_curv,
    read_freesurfer_surface,
    read_labels,
    read_off_mesh,
    write_csv_features,
    write_freesurfer_curv,
    write_freesurfer_surface,
    write_labels,
    write_off_mesh,
)
from ncreg.neural_field import evaluate_fit_fidelity
from ncreg.registration import EulerGridOracle, NCReg, energy, energy_gradient, sa_reset
from ncreg.rotations import (
    PARAMETRIZATIONS,
    Rotation,
    dist_R,
    dist_R_deg,
    get_parametrization,
    make_perturbation,
    rotate_point_jacobian,
    sample_rotation,
)

REG = dict(parametrization="quaternion", n_points=2048)


def announce(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})")


def subject_field(cortex, rotation):
    """The synthetic subject carried by ``rotation``, read through its mesh."""
    mesh = SphericalMesh(rotation.apply(cortex.mesh.vertices), cortex.mesh.faces)
    return MeshField(mesh, cortex.features_at(cortex.mesh.vertices))


# -- 1: fit fidelity --------------------------------------------------------------------------------------


def test_fit_fidelity(cortex, template_fit, capsys):
    model, seconds = template_fit
    eval_mesh = make_icosphere(6)
    fits = evaluate_fit_fidelity(model, eval_mesh, cortex.mesh, cortex.features_at(cortex.mesh.vertices))
    ok = eval_mesh.n_vertices == 40_962 and model.n_iter_ == 3000 and seconds <= 60.0
    ok &= all(f.r2 >= 0.99 and abs(f.slope - 1) <= 0.02 and abs(f.intercept) <= 0.02 for f in fits)
    detail = "; ".join(f"ch{i}: R2={f.r2:.5f} beta={f.slope:.4f} eps={f.intercept:+.4f}" for i, f in enumerate(fits))
    announce(capsys, 1, "fit fidelity", ok, f"{detail}; fit {seconds:.1f} s, {model.n_iter_} iterations")
    assert ok


# -- 2: rotation recovery -------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def recovery_trials(cortex, template_model):
    trials = []
    cases = [("perturbed", make_perturbation(seed)[0], seed) for seed in range(50)]
    cases += [("haar", sample_rotation(np.random.default_rng(1000 + k), "haar"), 1000 + k) for k in range(10)]
    for kind, rot, seed in cases:
        fixed = subject_field(cortex, rot)
        t0 = time.process_time()
        res = NCReg(reset="sa", n_iter=100, random_state=seed, **REG).fit(fixed, template_model).result_
        trials.append(dict(kind=kind, fixed=fixed, rotation=res.rotation, target=rot.inv(),
                           error=dist_R_deg(res.rotation, rot.inv()), cpu=time.process_time() - t0))
    return trials


def test_rotation_recovery(recovery_trials, capsys):
    rates = {}
    for kind in ("perturbed", "haar"):
        errs = np.array([t["error"] for t in recovery_trials if t["kind"] == kind])
        rates[kind] = (np.mean(errs < 1.0), len(errs), errs.max())
    cpu = sum(t["cpu"] for t in recovery_trials)
    ok = rates["perturbed"][0] >= 0.95 and rates["haar"][0] >= 0.90 and cpu <= 600.0
    detail = "; ".join(f"{k}: {r:.0%} of {n} under 1 deg, worst {w:.3f} deg" for k, (r, n, w) in rates.items())
    announce(capsys, 2, "rotation recovery", ok, f"{detail}; {cpu:.0f} s CPU")
    assert ok


# -- 3: strategy ordering -----------------------------------------------------------------------------------------


def test_strategy_ordering(cortex, template_model, capsys):
    strategies = ("none", "random", "sa")
    errors = {s: [] for s in strategies}
    for k in range(30):
        rot, _ = make_perturbation(100 + k)
        fixed = subject_field(cortex, rot)
        for s in strategies:
            res = NCReg(reset=s, n_iter=10, random_state=k, **REG).fit(fixed, template_model).result_
            errors[s].append(dist_R_deg(res.rotation, rot.inv()))
    success = {s: np.array(e) < 1.0 for s, e in errors.items()}
    rate = {s: v.mean() for s, v in success.items()}
    ok = rate["sa"] >= rate["random"] >= rate["none"] and not np.any(~success["sa"])
    parts = []
    for s in strategies:
        m, h = mean_ci(success[s].astype(float))
        parts.append(f"{s} success {m:.2f}+-{h:.2f}")
    for a, b in (("sa", "random"), ("random", "none")):
        m, h = mean_ci(success[a].astype(float) - success[b].astype(float))
        parts.append(f"{a}-{b} paired {m:+.2f}+-{h:.2f}")
    parts.append(f"sa failures {int(np.sum(~success['sa']))}/30")
    announce(capsys, 3, "strategy ordering", ok, "; ".join(parts))
    assert ok


# -- 4: baseline equivalence ----------------------------------------------------------------------------------------


def test_baseline_equivalence(cortex, template_model, capsys):
    mesh = cortex.mesh
    template_feats = cortex.features_at(mesh.vertices)
    labels = cortex.labels_at(mesh.vertices)
    worst_angle, worst_rel = 0.0, 0.0
    for k in range(10):
        # an unperturbed subject: the template plus an independent smooth deviation
        deviation = SyntheticCortex([4, 12], n_labels=16, level=5, seed=k + 1).features_at(mesh.vertices)
        subject_feats = template_feats + 0.1 * deviation
        fixed = MeshField(mesh, subject_feats)
        cfg = dict(reset="sa", n_iter=10, random_state=k, **REG)
        nc = NCReg(**cfg).fit(fixed, template_model).result_
        ip = NCReg(**cfg).fit(fixed, MeshField(mesh, template_feats)).result_
        worst_angle = max(worst_angle, dist_R_deg(nc.rotation, ip.rotation))
        reports = [alignment_report(mesh, subject_feats, mesh, template_feats, r.rotation, labels, labels)
                   for r in (nc, ip)]
        a, b = (np.concatenate([rep.mse, rep.pcc, [rep.dice]]) for rep in reports)
        worst_rel = max(worst_rel, np.max(np.abs(a - b) / np.abs(b)))
    ok = worst_angle <= 2.0 and worst_rel <= 0.02
    announce(capsys, 4, "baseline equivalence", ok,
             f"worst rotation gap {worst_angle:.4f} deg; worst metric gap {worst_rel:.3%} over 10 pairs")
    assert ok


# -- 5: oracle dominance ----------------------------------------------------------------------------------------------


def test_oracle_dominance(recovery_trials, template_model, capsys):
    points = sample_sphere_uniform(512, np.random.default_rng(7))
    oracle = EulerGridOracle(template_model, 10.0, points)
    gaps = []
    for t in recovery_trials:
        fv = t["fixed"].values(points)
        _, e_grid = oracle.search(fv)
        e_final = energy(t["fixed"], template_model, t["rotation"], points, fixed_values=fv)
        gaps.append(e_final - e_grid)
    gaps = np.array(gaps)
    ok = oracle.n_rotations == 24_624 and np.all(gaps <= 1e-6)
    announce(capsys, 5, "oracle dominance", ok,
             f"{len(gaps)} trials, {oracle.n_rotations} grid rotations, max(final - grid) = {gaps.max():.3e}")
    assert ok


# -- 6: gradient suites -------------------------------------------------------------------------------------------------


def _param_grad_error(config):
    cfg = dict(config)
    n_out = cfg.pop("n_out")
    seed = sum(cfg.values()) + n_out
    model = _random_map(seed, n_outputs=n_out, **cfg)
    rng = np.random.default_rng(seed)
    p = _smooth_points(model, 32, rng, margin=0.0)
    t = rng.normal(size=(32, n_out))
    _, grads = model.loss_and_gradients(p, t)
    h, worst = 1e-4, 0.0
    for name, block in model.parameter_blocks().items():
        flat, g = block.reshape(-1), grads[name].reshape(-1)
        picks = np.unique(np.concatenate([np.argsort(-np.abs(g))[:15], rng.integers(0, flat.size, 10)]))
        fd = np.empty(len(picks))
        for j, k in enumerate(picks):
            orig = flat[k]
            flat[k] = orig + h
            lp = model.loss_and_gradients(p, t)[0]
            flat[k] = orig - h
            lm = model.loss_and_gradients(p, t)[0]
            flat[k] = orig
            fd[j] = (lp - lm) / (2 * h)
        worst = max(worst, np.linalg.norm(g[picks] - fd) / max(np.linalg.norm(fd), 1e-12))
    return worst


def _input_grad_errors(seed):
    cfg = GRAD_CONFIGS[seed].copy()
    n_out = cfg.pop("n_out")
    model = _random_map(seed, n_outputs=n_out, **cfg)
    step = 1e-5
    p = _smooth_points(model, 50, np.random.default_rng(seed), max(1e-3, step * model.resolutions_.max()))
    jac = model.input_jacobian(p)
    fd = np.empty_like(jac)
    for d in range(3):
        e = np.zeros(3)
        e[d] = step
        fd[:, :, d] = (model.predict(p + e) - model.predict(p - e)) / (2 * step)
    return np.linalg.norm(jac - fd, axis=(1, 2)) / np.maximum(np.linalg.norm(fd, axis=(1, 2)), 1e-12)


def _rotation_jac_errors():
    rng = np.random.default_rng(42)
    names = sorted(PARAMETRIZATIONS)
    out = []
    for i in range(1000):
        name = names[i % len(names)]
        theta = _random_theta(name, rng)
        p = rng.normal(size=(1, 3))
        p /= np.linalg.norm(p)
        fd = _fd_jacobian(name, theta, p)
        out.append(np.linalg.norm(rotate_point_jacobian(name, theta, p) - fd) / max(np.linalg.norm(fd), 1e-12))
    return np.array(out)


def _energy_grad_errors(small_model, cortex):
    rng = np.random.default_rng(3)
    mesh = cortex.mesh
    fixed = MeshField(mesh, cortex.features_at(mesh.vertices))
    moving = NeuralField(small_model)
    out, h = [], 1e-6
    for name in sorted(PARAMETRIZATIONS):
        param = get_parametrization(name)
        for _ in range(5):
            theta = param.from_rotation(sample_rotation(rng, "haar")) + 0.05 * rng.normal(size=param.dim)
            # rotated points stay clear of grid planes and ReLU kinks over the difference step
            p = param.to_rotation(theta).inv().apply(_smooth_points(small_model, 512, rng, margin=1e-4))
            _, grad = energy_gradient(fixed, moving, name, theta, p)
            fd = np.array([(energy_gradient(fixed, moving, name, theta + h * e, p)[0]
                            - energy_gradient(fixed, moving, name, theta - h * e, p)[0]) / (2 * h)
                           for e in np.eye(param.dim)])
            out.append(np.linalg.norm(grad - fd) / np.linalg.norm(fd))
    return np.array(out)


def test_gradient_suites(small_model, cortex, capsys):
    params = max(_param_grad_error(c) for c in GRAD_CONFIGS)
    inputs = np.concatenate([_input_grad_errors(s) for s in range(20)])
    rots = _rotation_jac_errors()
    energies = _energy_grad_errors(small_model, cortex)
    ok = params < 1e-5 and inputs.max() < 1e-4 and rots.max() < 1e-6 and energies.max() < 1e-4
    announce(capsys, 6, "gradient suites", ok,
             f"params {params:.2e} (20 configs); input {inputs.max():.2e} ({len(inputs)} cases); "
             f"rotation {rots.max():.2e} ({len(rots)} cases); energy {energies.max():.2e} ({len(energies)} cases)")
    assert ok


# -- 7: metric axioms ----------------------------------------------------------------------------------------------------


def test_metric_axioms(capsys):
    rng = np.random.default_rng(0)
    worst = 0.0
    in_range = True
    for _ in range(1000):
        a, b, g = (sample_rotation(rng, "haar") for _ in range(3))
        d = dist_R(a, b)
        in_range &= 0.0 <= np.degrees(d) <= 90.0
        worst = max(worst, abs(dist_R(g * a, g * b) - d), abs(dist_R(a * g, b * g) - d),
                    abs(dist_R(a.q, -b.q) - d), abs(dist_R(b, a) - d))
    halves = []
    for theta in (30.0, 90.0, 180.0):
        r = Rotation.from_axis_angle(rng.normal(size=3), np.radians(theta))
        halves.append(abs(dist_R_deg(r, Rotation.identity()) - theta / 2))
    ok = in_range and worst < 1e-9 and max(halves) < 1e-9
    announce(capsys, 7, "metric axioms", ok,
             f"1000 cases, worst invariance gap {worst:.1e}; worst theta/2 gap {max(halves):.1e} deg")
    assert ok


# -- 8: SA acceptance law --------------------------------------------------------------------------------------------------


def test_sa_acceptance_law(capsys):
    pairs = [(0.01, 0.05), (0.05, 0.05), (0.02, 0.01), (0.001, 0.002), (0.1, 0.2)]
    rng = np.random.default_rng(0)
    worst = 0.0
    current = Rotation.identity()
    for delta, temp in pairs:
        accepted = 0
        for _ in range(10_000):
            _, acc, _ = sa_reset(lambda r: 1.0 + delta, current, 1.0, temp, rng, n_trials=1)
            accepted += acc
        worst = max(worst, abs(accepted / 10_000 - np.exp(-delta / temp)))
    ok = worst <= 0.02
    announce(capsys, 8, "SA acceptance law", ok, f"5 pairs x 10^4 trials, worst |freq - exp(-dL/T)| = {worst:.4f}")
    assert ok


# -- 9: performance direction ------------------------------------------------------------------------------------------------


def test_performance_direction(template_model, capsys):
    points = sample_sphere_uniform(4096, np.random.default_rng(0))
    rows = bench_paths(template_model, template_model.predict(points), points, [3, 4, 5, 6])
    neural = np.array([r["neural_s_per_iter"] for r in rows])
    interp = np.array([r["interp_s_per_iter"] for r in rows])
    spread = neural.max() / neural.min()
    ratio = rows[-1]["ratio"]
    ok = spread <= 1.2 and np.all(np.diff(interp) > 0) and ratio > 1.0
    detail = ", ".join(f"L{r['level']} {r['neural_s_per_iter'] * 1e3:.2f}/{r['interp_s_per_iter'] * 1e3:.2f} ms"
                       for r in rows)
    announce(capsys, 9, "performance direction", ok,
             f"neural/interp per iteration: {detail}; neural spread {spread:.3f}x; level-6 ratio {ratio:.2f}")
    assert ok


# -- 10: formats and determinism ------------------------------------------------------------------------------------------------


def _bytes(writer, *args, **kwargs):
    buf = io.BytesIO()
    writer(buf, *args, **kwargs)
    return buf.getvalue()


def _fuzz_formats(n=1000):
    rng = np.random.default_rng(2024)
    failures = 0
    for _ in range(n):
        base = make_icosphere(int(rng.integers(0, 3)))
        radii = rng.uniform(0.5, 120.0, size=(base.n_vertices, 1))
        mesh = SphericalMesh(Rotation(rng.normal(size=4)).apply(base.vertices) * radii, base.faces)
        data = _bytes(write_freesurfer_surface, mesh, comment=f"fuzz {rng.integers(1 << 30)}")
        back, text = read_freesurfer_surface(io.BytesIO(data), return_comment=True)
        failures += _bytes(write_freesurfer_surface, back, comment=text) != data
        data = _bytes(write_off_mesh, mesh)
        failures += _bytes(write_off_mesh, read_off_mesh(io.BytesIO(data))) != data
        vals = (rng.normal(size=base.n_vertices) * 10.0 ** rng.uniform(-6, 6)).astype(np.float32)
        data = _bytes(write_freesurfer_curv, vals)
        failures += _bytes(write_freesurfer_curv, read_freesurfer_curv(io.BytesIO(data)).values) != data
        feats = rng.normal(size=(int(rng.integers(1, 20)), 2)) * 10.0 ** rng.integers(-300, 300, size=2)
        data = _bytes(write_csv_features, FeatureMap(feats, ["a", "b"]))
        back = read_csv_features(io.BytesIO(data))
        failures += not np.array_equal(back.values.view(np.uint64), feats.view(np.uint64))
        failures += _bytes(write_csv_features, back) != data
        data = _bytes(write_labels, rng.integers(0, 2**40, size=int(rng.integers(0, 50))))
        failures += _bytes(write_labels, read_labels(io.BytesIO(data))) != data
    return failures


def _tree(root, skip):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            rel = os.path.relpath(os.path.join(dirpath, f), root)
            if os.path.basename(rel) not in skip:
                with open(os.path.join(dirpath, f), "rb") as fh:
                    out[rel] = fh.read()
    return out


def _without_columns(data, columns):
    lines = data.decode().splitlines()
    header = lines[0].split(",")
    keep = [i for i, c in enumerate(header) if c not in columns]
    return [[row.split(",")[i] for i in keep] for row in lines]


def test_formats_and_determinism(tmp_path, capsys):
    failures = _fuzz_formats()
    data, work = tmp_path / "data", tmp_path / "work"
    sub = data / "subject_000"
    reg = ["--n-points", 256, "--n-val-points", 128, "--max-steps", 40, "--n-iter", 3]
    commands = {
        "synth": ["synth", "--level", 3, "--degrees", "3,6", "--n-labels", 8, "--subjects", 2, "--out", data],
        "fit": ["fit", "--mesh", sub / "mesh.off", "--features", sub / "features.csv", "--iterations", 40,
                "--n-faces", 128, "--out", work / "m.ncmap"],
        "eval-fit": ["eval-fit", "--model", work / "m.ncmap", "--mesh", sub / "mesh.off", "--features",
                     sub / "features.csv", "--level", 4, "--out", work / "fid.csv"],
        "register": ["register", "--fixed-mesh", sub / "perturbed.surf", "--fixed-features", sub / "features.csv",
                     "--moving-model", work / "m.ncmap", "--oracle", "--oracle-step", 30, "--oracle-points", 32,
                     "--svg", *reg, "--out", work / "reg"],
        "ablate": ["ablate", "--data", data, "--n-iters", "1,2", "--seeds", 2, "--fit-iterations", 20, *reg,
                   "--out", work / "abl"],
        "bench": ["bench", "--moving-model", work / "m.ncmap", "--levels", "2,3", "--n-points", 128,
                  "--iterations", 1, "--repeats", 1, "--out", work / "bench.csv"],
    }
    timing = {"time", "time_ci95", "wall_time", "neural_s_per_iter", "interp_s_per_iter", "ratio"}
    runs = []
    for _ in range(2):
        shutil.rmtree(data, ignore_errors=True)
        shutil.rmtree(work, ignore_errors=True)
        work.mkdir()
        codes = {name: main([str(a) for a in argv]) for name, argv in commands.items()}
        snap = {}
        for root in (data, work):
            for rel, blob in _tree(root, {"result.json", "runs.csv", "summary.csv", "summary.svg",
                                          "bench.csv"}).items():
                snap[os.path.join(root.name, rel)] = blob
        for rel in ("reg/result.json",):
            text = (work / rel).read_text()
            snap[rel] = [line for line in text.splitlines() if '"wall_time"' not in line]
        for rel in ("abl/runs.csv", "abl/summary.csv", "bench.csv"):
            snap[rel] = _without_columns((work / rel).read_bytes(), timing)
        runs.append((codes, snap))
    deterministic = runs[0][1] == runs[1][1]
    codes_ok = all(c == 0 for c in runs[0][0].values())
    ok = failures == 0 and deterministic and codes_ok
    announce(capsys, 10, "formats and determinism", ok,
             f"5 formats x 1000 fuzzed files, {failures} mismatches; {len(commands)} commands, "
             f"{len(runs[0][1])} outputs, identical reruns: {deterministic}, exit codes {runs[0][0]}")
    assert ok
