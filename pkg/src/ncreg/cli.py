"""Command-line interface: ``ncreg <command> [options]``.

Commands
--------
synth      write synthetic subjects (meshes, features, labels, perturbation)
fit        train a neural cortical map on a mesh and its features
eval-fit   regression of a map against interpolated reference features
register   rigid registration with the neural map or mesh interpolation
ablate     grid of reset strategies, parametrizations, budgets and seeds
bench      per-iteration cost of the neural and interpolation paths

Any option can also be given in a ``key = value`` file passed with
``--config``; options on the command line win. Exit codes: 0 success,
1 input error, 2 numeric fault.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from itertools import combinations, product

import numpy as np
from scipy import stats

from . import __version__
from .datasets import SyntheticCortex
from .exceptions import NCRegError, NumericFaultError
from .fields import MeshField, NeuralField
from .geometry import SphericalMesh, make_icosphere, sample_sphere_uniform
from .io import (
    FeatureMap,
    Parcellation,
    read_features,
    read_labels,
    read_mesh,
    write_csv_features,
    write_freesurfer_curv,
    write_freesurfer_surface,
    write_labels,
    write_off_mesh,
)
from .metrics import AlignmentReport, append_results, config_hash, dice_score, feature_mse_pcc, transfer_labels
from .neural_field import NeuralCorticalMap, evaluate_fit_fidelity
from .registration import NCReg, _energy_and_grad, brute_force_oracle
from .rotations import Rotation, dist_R_deg, get_parametrization, make_perturbation
from .svg import bar_chart, line_plot


class InputError(Exception):
    """Bad user input; reported with exit code 1."""


# -- helpers -----------------------------------------------------------------


def _int_list(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _str_list(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{i}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _need_file(path):
    if path is None:
        raise InputError("missing required input path")
    if not os.path.isfile(path):
        raise InputError(f"no such file: {path}")
    return path


def _json_dump(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Rotation):
        return obj.to_list()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _echo(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    return {"command": args.command, "version": __version__, "args": cfg, "config_hash": config_hash(cfg)}


def _write_echo(path, args):
    echo = _echo(args)
    _json_dump(path, echo)
    return echo


def _write_csv(path, rows, fields=None):
    if fields is None:
        fields = list(rows[0]) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _fmt_row(row):
    return {k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()}


def _load_model(path):
    return NeuralCorticalMap.load(_need_file(path))


def _load_mesh_features(mesh_path, feat_path):
    mesh = read_mesh(_need_file(mesh_path))
    feats = read_features(_need_file(feat_path))
    if len(feats.values) != mesh.n_vertices:
        raise InputError(f"{feat_path}: {len(feats.values)} rows for {mesh.n_vertices} vertices")
    return mesh, feats


def _rotation_from_truth(path):
    with open(_need_file(path), encoding="utf-8") as fh:
        data = json.load(fh)
    q = data.get("registration_target", data.get("rotation"))
    if q is None:
        raise InputError(f"{path}: no 'registration_target' or 'rotation' entry")
    return Rotation(np.asarray(q, dtype=np.float64))


def _reg_config(args, **overrides):
    cfg = dict(
        n_points=args.n_points,
        n_val_points=args.n_val_points,
        n_iter=args.n_iter,
        max_steps=args.max_steps,
        learning_rate=args.learning_rate,
        stall_tol=args.stall_tol,
        t_diff=args.t_diff,
        window=args.window,
        reset=args.strategy,
        T0=args.T0,
        parametrization=args.parametrization,
        sampler=args.sampler,
        resample=args.resample,
        random_state=args.seed,
    )
    cfg.update(overrides)
    return cfg


def alignment_report(subject_mesh, subject_features, template_mesh, template_features, rotation,
                     subject_labels=None, template_labels=None, truth=None, timing=None, locator=None):
    """Features and labels of the template read off at ``R s`` for subject vertices s."""
    field = MeshField(template_mesh, template_features, locator)
    warped = field.values(rotation.apply(subject_mesh.vertices))
    mse, pcc = feature_mse_pcc(subject_features, warped)
    dice = None
    if subject_labels is not None and template_labels is not None:
        moved = transfer_labels(template_mesh, template_labels, subject_mesh, rotation, field.locator)
        dice = dice_score(subject_labels, moved)
    err = dist_R_deg(rotation, truth) if truth is not None else None
    return AlignmentReport(mse, pcc, dice, err, timing)


# -- synth -----------------------------------------------------------------------


def _synth_one(out_dir, args, seed, pert_seed):
    os.makedirs(out_dir, exist_ok=True)
    degrees = _int_list(args.degrees) if args.degrees else [args.degree] * args.n_features
    if len(degrees) != args.n_features:
        raise InputError("--degrees needs one entry per feature channel")
    cortex = SyntheticCortex(degrees, n_labels=args.n_labels, level=args.level, seed=seed)
    mesh = cortex.mesh
    feats = FeatureMap(cortex.features_at(mesh.vertices), cortex.channel_names())
    labels = Parcellation(cortex.labels_at(mesh.vertices))
    rot, angles = make_perturbation(pert_seed, args.max_angle)
    perturbed = SphericalMesh(rot.apply(mesh.vertices), mesh.faces)
    write_off_mesh(os.path.join(out_dir, "mesh.off"), mesh)
    write_freesurfer_surface(os.path.join(out_dir, "perturbed.surf"), perturbed)
    write_csv_features(os.path.join(out_dir, "features.csv"), feats)
    for c, name in enumerate(feats.channel_names):
        write_freesurfer_curv(os.path.join(out_dir, f"{name}.curv"), feats.values[:, c], mesh.n_faces)
    write_labels(os.path.join(out_dir, "labels.txt"), labels)
    _json_dump(os.path.join(out_dir, "perturbation.json"), {
        "angles_deg": {"yaw": angles[0], "pitch": angles[1], "roll": angles[2]},
        "convention": "intrinsic Z-Y-X: R = Rz(yaw) Ry(pitch) Rx(roll)",
        "perturbation": rot.to_list(),
        "registration_target": rot.inv().to_list(),
        "perturbation_seed": pert_seed,
        "subject_seed": seed,
        "degrees": degrees,
        "level": args.level,
        "n_labels": args.n_labels,
    })


def cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    if args.subjects == 1:
        _synth_one(args.out, args, args.seed, [args.seed, 0])
    else:
        for k in range(args.subjects):
            _synth_one(os.path.join(args.out, f"subject_{k:03d}"), args, args.seed + k, [args.seed, k])
    _write_echo(os.path.join(args.out, "config.json"), args)
    print(f"wrote {args.subjects} subject(s) to {args.out}")


# -- fit / eval-fit --------------------------------------------------------------


def cmd_fit(args):
    mesh, feats = _load_mesh_features(args.mesh, args.features)
    model = NeuralCorticalMap(
        n_iter=args.iterations, n_faces=args.n_faces, points_per_face=args.points_per_face,
        lr_tables=args.lr_tables, lr_mlp=args.lr_mlp, face_weighting=args.face_weighting,
        random_state=args.seed,
    )
    model.fit(mesh, feats)
    size = model.save(args.out)
    loss_csv = args.loss_csv or os.path.splitext(args.out)[0] + "_loss.csv"
    _write_csv(loss_csv, [{"iteration": i, "loss": repr(float(v))} for i, v in enumerate(model.loss_curve_)],
               ["iteration", "loss"])
    _write_echo(os.path.splitext(args.out)[0] + "_config.json", args)
    final = model.loss_curve_[-1] if model.loss_curve_ else float("nan")
    print(f"iterations: {model.n_iter_}")
    print(f"parameters: {model.n_parameters_}")
    print(f"model bytes: {size}")
    print(f"final loss: {final:.6g}")


def cmd_eval_fit(args):
    model = _load_model(args.model)
    mesh, feats = _load_mesh_features(args.mesh, args.features)
    eval_mesh = make_icosphere(args.level)
    results = evaluate_fit_fidelity(model, eval_mesh, mesh, feats.values)
    rows = []
    for name, r in zip(feats.channel_names, results):
        rows.append(_fmt_row({"channel": name, "beta": r.slope, "epsilon": r.intercept, "r2": r.r2,
                              "n_points": eval_mesh.n_vertices}))
        print(f"{name}: beta={r.slope:.5f} epsilon={r.intercept:.5f} R2={r.r2:.5f} ({eval_mesh.n_vertices} points)")
    _write_csv(args.out, rows, ["channel", "beta", "epsilon", "r2", "n_points"])
    _write_echo(os.path.splitext(args.out)[0] + "_config.json", args)


# -- register --------------------------------------------------------------------


def _fixed_source(args):
    if args.fixed_model:
        model = _load_model(args.fixed_model)
        return NeuralField(model), None, None
    mesh, feats = _load_mesh_features(args.fixed_mesh, args.fixed_features)
    return MeshField(mesh, feats.values), mesh, feats


def cmd_register(args):
    fixed, fixed_mesh, fixed_feats = _fixed_source(args)
    moving_mesh = moving_feats = None
    if args.moving_mesh and args.moving_features:
        moving_mesh, moving_feats = _load_mesh_features(args.moving_mesh, args.moving_features)
    if args.method == "neural":
        if not args.moving_model:
            raise InputError("--method neural needs --moving-model")
        moving = NeuralField(_load_model(args.moving_model))
    else:
        if moving_mesh is None:
            raise InputError("--method interp needs --moving-mesh and --moving-features")
        moving = MeshField(moving_mesh, moving_feats.values)
    if fixed.n_features != moving.n_features:
        raise InputError(f"fixed has {fixed.n_features} channels, moving has {moving.n_features}")
    init = _rotation_from_truth(args.init) if args.init else None
    reg = NCReg(**_reg_config(args), init=init).fit(fixed, moving)
    result = reg.result_
    truth = _rotation_from_truth(args.truth) if args.truth else None
    os.makedirs(args.out, exist_ok=True)
    out = result.to_dict()
    out["method"] = args.method
    if truth is not None:
        out["ground_truth"] = truth.to_list()
        out["rotation_error_deg"] = dist_R_deg(result.rotation, truth)
    if args.oracle:
        pts = sample_sphere_uniform(args.oracle_points, np.random.default_rng(args.seed))
        fv = fixed.values(pts)
        rot, e, count = brute_force_oracle(fixed, moving, args.oracle_step, pts, fixed_values=fv)
        d = fv - moving.values(pts @ result.rotation.as_matrix().T)
        out["oracle"] = {"rotation": rot.to_list(), "energy": e, "grid_step_deg": args.oracle_step,
                         "n_evaluated": count, "n_points": args.oracle_points,
                         "final_energy_same_points": float(np.mean(d * d))}
    report = None
    if fixed_mesh is not None and moving_mesh is not None:
        fixed_labels = moving_labels = None
        if args.fixed_labels and args.moving_labels:
            fixed_labels = read_labels(_need_file(args.fixed_labels), fixed_mesh.n_vertices).labels
            moving_labels = read_labels(_need_file(args.moving_labels), moving_mesh.n_vertices).labels
        report = alignment_report(fixed_mesh, fixed_feats.values, moving_mesh, moving_feats.values,
                                  result.rotation, fixed_labels, moving_labels, truth, result.wall_time)
        out["report"] = report.to_row()
    echo = _write_echo(os.path.join(args.out, "config.json"), args)
    _json_dump(os.path.join(args.out, "result.json"), out)
    _write_csv(os.path.join(args.out, "trace.csv"),
               [{"step": i, "loss": repr(v)} for i, v in enumerate(result.loss_trace)], ["step", "loss"])
    if report is not None:
        path = os.path.join(args.out, "report.csv")
        if os.path.exists(path):
            os.remove(path)
        append_results(path, [_fmt_row(report.to_row())], echo["args"])
    if args.svg:
        with open(os.path.join(args.out, "loss.svg"), "w", encoding="utf-8") as fh:
            fh.write(line_plot(result.loss_trace, title=f"registration loss ({args.strategy})"))
    msg = f"rotation {np.round(result.rotation.q, 6).tolist()} best val loss {result.best_val_loss:.4g}"
    if truth is not None:
        msg += f" error {out['rotation_error_deg']:.4f} deg"
    print(msg)


# -- ablate ----------------------------------------------------------------------


def _subject_dirs(root):
    subs = sorted(d for d in os.listdir(root) if d.startswith("subject_") and os.path.isdir(os.path.join(root, d)))
    if subs:
        return [os.path.join(root, d) for d in subs]
    if os.path.isfile(os.path.join(root, "mesh.off")):
        return [root]
    raise InputError(f"{root}: no subject directories or mesh.off found")


_CACHE = {}


def _subject(path, model_path):
    key = (path, model_path)
    if key not in _CACHE:
        tmesh = read_mesh(os.path.join(path, "mesh.off"))
        feats = read_features(os.path.join(path, "features.csv"))
        smesh = read_mesh(os.path.join(path, "perturbed.surf"))
        labels = read_labels(os.path.join(path, "labels.txt"), tmesh.n_vertices).labels
        truth = _rotation_from_truth(os.path.join(path, "perturbation.json"))
        model = NeuralCorticalMap.load(model_path)
        tfield = MeshField(tmesh, feats.values)
        _CACHE[key] = dict(tmesh=tmesh, feats=feats.values, smesh=smesh, labels=labels, truth=truth,
                           model=model, sfield=MeshField(smesh, feats.values), tfield=tfield)
    return _CACHE[key]


def _ablate_task(task):
    s = _subject(task["subject_dir"], task["model"])
    cfg = dict(task["reg"], reset=task["strategy"], parametrization=task["parametrization"],
               n_iter=task["n_iter"], random_state=task["seed"])
    moving = NeuralField(s["model"]) if task["method"] == "neural" else s["tfield"]
    res = NCReg(**cfg).fit(s["sfield"], moving).result_
    rep = alignment_report(s["smesh"], s["feats"], s["tmesh"], s["feats"], res.rotation, s["labels"], s["labels"],
                           s["truth"], res.wall_time, s["tfield"].locator)
    before = dice_score(s["labels"], transfer_labels(s["tmesh"], s["labels"], s["smesh"], Rotation.identity(),
                                                     s["tfield"].locator))
    row = {
        "subject": os.path.basename(task["subject_dir"].rstrip(os.sep)),
        "strategy": task["strategy"],
        "parametrization": task["parametrization"],
        "n_iter": task["n_iter"],
        "seed": task["seed"],
        "method": task["method"],
        "qw": res.rotation.q[0], "qx": res.rotation.q[1], "qy": res.rotation.q[2], "qz": res.rotation.q[3],
        "rotation_error_deg": rep.rotation_error_deg,
        "mse": float(np.mean(rep.mse)),
        "pcc": float(np.mean(rep.pcc)),
        "dice": rep.dice,
        "dice_before": before,
        "worst_dice": int(rep.dice < before),
        "time": res.wall_time,
        "best_val_loss": res.best_val_loss,
        "n_steps": res.n_steps,
    }
    for i, (m, p) in enumerate(zip(rep.mse, rep.pcc)):
        row[f"mse_{i}"] = m
        row[f"pcc_{i}"] = p
    return row


def mean_ci(values, level=0.95):
    """Mean and half-width of the t confidence interval (nan below two values)."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        return float("nan"), float("nan")
    if len(v) < 2:
        return float(v.mean()), float("nan")
    half = stats.t.ppf(0.5 + level / 2, len(v) - 1) * v.std(ddof=1) / np.sqrt(len(v))
    return float(v.mean()), float(half)


def _summaries(rows, success_deg):
    cells = {}
    for r in rows:
        cells.setdefault((r["strategy"], r["parametrization"], r["n_iter"]), []).append(r)
    out, pairs = [], []
    for (strategy, param, n_iter), rs in cells.items():
        row = {"strategy": strategy, "parametrization": param, "n_iter": n_iter, "n_runs": len(rs)}
        for key in ("mse", "pcc", "dice", "time", "rotation_error_deg"):
            m, h = mean_ci([r[key] for r in rs])
            row[key] = m
            row[f"{key}_ci95"] = h
        row["worst_dice_fraction"] = float(np.mean([r["worst_dice"] for r in rs]))
        row["success_rate"] = float(np.mean([r["rotation_error_deg"] < success_deg for r in rs]))
        cell_pairs = []
        by_subject = {}
        for r in rs:
            by_subject.setdefault(r["subject"], []).append(r)
        for subject, srs in by_subject.items():
            for a, b in combinations(srs, 2):
                d = dist_R_deg(Rotation(np.array([a["qw"], a["qx"], a["qy"], a["qz"]])),
                               Rotation(np.array([b["qw"], b["qx"], b["qy"], b["qz"]])))
                cell_pairs.append(d)
                pairs.append({"strategy": strategy, "parametrization": param, "n_iter": n_iter,
                              "subject": subject, "seed_a": a["seed"], "seed_b": b["seed"], "dist_R_deg": d})
        row["pair_dist_max_deg"] = max(cell_pairs) if cell_pairs else float("nan")
        row["pair_dist_mean_deg"] = float(np.mean(cell_pairs)) if cell_pairs else float("nan")
        out.append(row)
    return out, pairs


def cmd_ablate(args):
    subjects = _subject_dirs(args.data)
    os.makedirs(args.out, exist_ok=True)
    echo = _write_echo(os.path.join(args.out, "config.json"), args)
    models = {}
    for sd in subjects:
        path = os.path.join(args.out, f"{os.path.basename(sd.rstrip(os.sep))}.ncmap")
        if not os.path.exists(path):
            mesh, feats = _load_mesh_features(os.path.join(sd, "mesh.off"), os.path.join(sd, "features.csv"))
            NeuralCorticalMap(n_iter=args.fit_iterations, random_state=args.seed).fit(mesh, feats).save(path)
        models[sd] = path
    reg = _reg_config(args)
    for k in ("reset", "parametrization", "n_iter", "random_state"):
        reg.pop(k)
    tasks = [
        {"subject_dir": sd, "model": models[sd], "strategy": st, "parametrization": pa, "n_iter": ni,
         "seed": seed, "method": args.method, "reg": reg}
        for st, pa, ni, seed, sd in product(_str_list(args.strategies), _str_list(args.parametrizations),
                                            _int_list(args.n_iters), range(args.seeds), subjects)
    ]
    runs_path = os.path.join(args.out, "runs.csv")
    if os.path.exists(runs_path):
        os.remove(runs_path)
    rows = []
    pool = ProcessPoolExecutor(args.workers) if args.workers > 1 else None
    try:
        results = pool.map(_ablate_task, tasks) if pool else map(_ablate_task, tasks)
        # rows arrive in grid order and are flushed one by one
        for row in results:
            rows.append(row)
            append_results(runs_path, [_fmt_row(row)], echo["args"])
    finally:
        if pool:
            pool.shutdown()
    summary, pairs = _summaries(rows, args.success_deg)
    _write_csv(os.path.join(args.out, "summary.csv"), [_fmt_row(r) for r in summary])
    if pairs:
        _write_csv(os.path.join(args.out, "pairs.csv"), [_fmt_row(p) for p in pairs])
    with open(os.path.join(args.out, "summary.svg"), "w", encoding="utf-8") as fh:
        fh.write(bar_chart([f"{r['strategy']}/{r['n_iter']}" for r in summary], [r["dice"] for r in summary],
                           [r["dice_ci95"] for r in summary], title="Dice by cell", ylabel="Dice"))
    print(f"{'strategy':<8} {'param':<11} {'N_iter':>6} {'Dice':>16} {'MSE':>16} {'success':>8} {'worst':>6}")
    for r in summary:
        print(f"{r['strategy']:<8} {r['parametrization']:<11} {r['n_iter']:>6} "
              f"{r['dice']:.4f}+-{r['dice_ci95']:.4f} {r['mse']:.4f}+-{r['mse_ci95']:.4f} "
              f"{r['success_rate']:>8.2f} {r['worst_dice_fraction']:>6.2f}")


# -- bench -----------------------------------------------------------------------


def time_energy_gradient(moving, fixed_values, points, theta, iterations, repeats, parametrization="quaternion"):
    """Best-of-``repeats`` mean seconds per energy+gradient evaluation."""
    param = get_parametrization(parametrization)
    _energy_and_grad(moving, param, theta, points, fixed_values)
    best = np.inf
    for _ in range(repeats):
        t = time.perf_counter()
        for _ in range(iterations):
            _energy_and_grad(moving, param, theta, points, fixed_values)
        best = min(best, (time.perf_counter() - t) / iterations)
    return best


def bench_paths(moving_model, fixed_values, points, levels, iterations=10, repeats=7, theta=None):
    """Per-level best-of timings of the neural and interpolation paths.

    Timing rounds cycle through every (level, path) pair so that slow drift
    in machine load hits all configurations alike; the minimum over rounds
    is kept.
    """
    if theta is None:
        theta = Rotation.from_euler(*np.radians([20.0, -10.0, 15.0])).q
    neural = NeuralField(moving_model)
    fields = {}
    for level in levels:
        mesh = make_icosphere(level)
        fields[level] = (mesh, MeshField(mesh, moving_model.predict(mesh.vertices)))
    best = {(lv, path): np.inf for lv in levels for path in ("neural", "interp")}
    for _ in range(repeats):
        for level in levels:
            for path, fld in (("neural", neural), ("interp", fields[level][1])):
                t = time_energy_gradient(fld, fixed_values, points, theta, iterations, 1)
                best[level, path] = min(best[level, path], t)
    rows = []
    for level in levels:
        tn, ti = best[level, "neural"], best[level, "interp"]
        rows.append({"level": level, "n_faces": fields[level][0].n_faces, "n_points": len(points),
                     "neural_s_per_iter": tn, "interp_s_per_iter": ti, "ratio": ti / tn})
    return rows


def cmd_bench(args):
    moving_model = _load_model(args.moving_model)
    fixed_model = _load_model(args.fixed_model) if args.fixed_model else moving_model
    rng = np.random.default_rng(args.seed)
    points = sample_sphere_uniform(args.n_points, rng)
    rows = bench_paths(moving_model, fixed_model.predict(points), points, _int_list(args.levels),
                       args.iterations, args.repeats)
    for r in rows:
        print(f"level {r['level']}: neural {r['neural_s_per_iter'] * 1e3:.3f} ms, "
              f"interp {r['interp_s_per_iter'] * 1e3:.3f} ms, ratio {r['ratio']:.2f}")
    _write_csv(args.out, [_fmt_row(r) for r in rows])
    _write_echo(os.path.splitext(args.out)[0] + "_config.json", args)


# -- parser ----------------------------------------------------------------------


def _add_reg_options(p):
    p.add_argument("--strategy", choices=["none", "random", "sa"], default="sa")
    p.add_argument("--parametrization", choices=["quaternion", "axis_angle", "euler", "six_d"], default="quaternion")
    p.add_argument("--n-iter", type=int, default=100, help="descents per run (restart budget)")
    p.add_argument("--n-points", type=int, default=4096)
    p.add_argument("--n-val-points", type=int, default=2048)
    p.add_argument("--max-steps", type=int, default=300)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--stall-tol", type=float, default=1e-4)
    p.add_argument("--t-diff", type=int, default=5)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--T0", type=float, default=0.05)
    p.add_argument("--sampler", choices=["uniform_angle", "haar"], default="uniform_angle")
    p.add_argument("--resample", type=_bool, default=False)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="ncreg", description="Neural cortical maps and rigid spherical registration.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    cmds = {}

    p = sub.add_parser("synth", help="write synthetic subjects")
    p.add_argument("--level", type=int, default=5)
    p.add_argument("--degree", type=int, default=12)
    p.add_argument("--degrees", default=None, help="comma list, one max degree per channel")
    p.add_argument("--n-features", type=int, default=2)
    p.add_argument("--n-labels", type=int, default=16)
    p.add_argument("--max-angle", type=float, default=36.0)
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    cmds["synth"] = p

    p = sub.add_parser("fit", help="train a neural cortical map")
    p.add_argument("--mesh", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--n-faces", type=int, default=1024)
    p.add_argument("--points-per-face", type=int, default=4)
    p.add_argument("--lr-tables", type=float, default=1e-2)
    p.add_argument("--lr-mlp", type=float, default=1e-3)
    p.add_argument("--face-weighting", choices=["area", "uniform"], default="area")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fit)
    cmds["fit"] = p

    p = sub.add_parser("eval-fit", help="regression of a map against reference features")
    p.add_argument("--model", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--level", type=int, default=6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_fit)
    cmds["eval-fit"] = p

    p = sub.add_parser("register", help="rigid registration")
    p.add_argument("--fixed-mesh")
    p.add_argument("--fixed-features")
    p.add_argument("--fixed-model")
    p.add_argument("--fixed-labels")
    p.add_argument("--moving-model")
    p.add_argument("--moving-mesh")
    p.add_argument("--moving-features")
    p.add_argument("--moving-labels")
    p.add_argument("--method", choices=["neural", "interp"], default="neural")
    p.add_argument("--truth", help="JSON with the ground-truth 'registration_target' quaternion")
    p.add_argument("--init", help="JSON with a starting 'rotation' quaternion")
    p.add_argument("--oracle", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--oracle-step", type=float, default=10.0)
    p.add_argument("--oracle-points", type=int, default=512)
    p.add_argument("--svg", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--out", required=True)
    _add_reg_options(p)
    p.set_defaults(func=cmd_register)
    cmds["register"] = p

    p = sub.add_parser("ablate", help="strategy / parametrization / budget grid")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategies", default="none,random,sa")
    p.add_argument("--parametrizations", default="quaternion")
    p.add_argument("--n-iters", default="10,100")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--method", choices=["neural", "interp"], default="neural")
    p.add_argument("--fit-iterations", type=int, default=3000)
    p.add_argument("--success-deg", type=float, default=1.0)
    p.add_argument("--workers", type=int, default=1)
    _add_reg_options(p)
    p.set_defaults(func=cmd_ablate)
    cmds["ablate"] = p

    p = sub.add_parser("bench", help="per-iteration cost, neural vs interpolation")
    p.add_argument("--moving-model", required=True)
    p.add_argument("--fixed-model")
    p.add_argument("--levels", default="3,4,5,6")
    p.add_argument("--n-points", type=int, default=4096)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--repeats", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    cmds["bench"] = p

    for p in cmds.values():
        p.add_argument("--config", help="key = value file with option defaults")
    return parser, cmds


def parse_args(argv=None):
    parser, cmds = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config_file(_need_file(args.config))
        sub = cmds[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise InputError(f"{args.config}: unknown keys {unknown}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    try:
        try:
            args = parse_args(argv)
        except SystemExit as exc:
            # argparse exits with 2 on usage errors; 2 is reserved for numeric faults
            return 0 if exc.code in (0, None) else 1
        args.func(args)
    except NumericFaultError as exc:
        print(f"error: numeric fault: {exc}", file=sys.stderr)
        return 2
    except (InputError, NCRegError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
