import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncreg.datasets import SyntheticCortex
from ncreg.exceptions import ShapeError, UndefinedStatisticError
from ncreg.geometry import SphericalMesh, make_icosphere
from ncreg.metrics import (
    AlignmentReport,
    append_results,
    config_hash,
    dice_score,
    feature_mse_pcc,
    transfer_labels,
)
from ncreg.rotations import Rotation, make_perturbation

seeds = st.integers(0, 2**32 - 1)


def test_mse_pcc_identical():
    x = np.random.default_rng(0).normal(size=(50, 2))
    mse, pcc = feature_mse_pcc(x, x)
    assert np.all(mse == 0.0)
    assert np.allclose(pcc, 1.0)


def test_pcc_negated():
    x = np.random.default_rng(1).normal(size=100)
    x = (x - x.mean()) / x.std()
    assert feature_mse_pcc(x, -x)[1][0] == pytest.approx(-1.0)


def test_pcc_constant_raises():
    with pytest.raises(UndefinedStatisticError):
        feature_mse_pcc(np.ones(10), np.arange(10.0))


def test_mse_pcc_shape_checks():
    with pytest.raises(ShapeError):
        feature_mse_pcc(np.ones(4), np.ones(5))
    with pytest.raises(ValueError):
        feature_mse_pcc(np.ones(1), np.ones(1))


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_mse_pcc_invariances(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 30, 2))
    mse, pcc = feature_mse_pcc(a, b)
    perm = rng.permutation(30)
    mse_p, pcc_p = feature_mse_pcc(a[perm], b[perm])
    assert np.allclose(mse, mse_p, atol=1e-12) and np.allclose(pcc, pcc_p, atol=1e-12)
    s, t = rng.uniform(0.1, 10.0, size=2)
    pcc_affine = feature_mse_pcc(s * a + 3.0, t * b - 1.0)[1]
    assert np.allclose(pcc, pcc_affine, atol=1e-12)
    assert np.all(mse >= 0) and np.all(np.abs(pcc) <= 1)


def test_dice_examples():
    assert dice_score([0, 1, 2, 2], [0, 1, 2, 2]) == 1.0
    assert dice_score([0, 0, 0], [1, 1, 1]) == 0.0
    assert dice_score([0, 0, 1, 1], [0, 1, 1, 1]) == pytest.approx(11 / 15, abs=1e-15)


def test_dice_skips_absent_labels_and_micro():
    a, b = [0, 0, 1, 1], [0, 1, 1, 1]
    assert dice_score(a, b, label_set=[0, 1, 5]) == pytest.approx(11 / 15)
    assert dice_score(a, b, average="micro") == pytest.approx(3 / 4)
    with pytest.raises(ShapeError):
        dice_score([0, 1], [0])
    with pytest.raises(ValueError):
        dice_score(a, b, average="weighted")


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_dice_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 6, size=(2, 40))
    d = dice_score(a, b)
    assert d == pytest.approx(dice_score(b, a), abs=1e-15)
    assert 0.0 <= d <= 1.0


def test_transfer_identity():
    c = SyntheticCortex([3], n_labels=12, level=4, seed=0)
    labels = c.labels_at(c.mesh.vertices)
    out = transfer_labels(c.mesh, labels, c.mesh, Rotation.identity())
    assert np.array_equal(out, labels)


def test_transfer_composition_cancels():
    c = SyntheticCortex([3], n_labels=12, level=4, seed=1)
    labels = c.labels_at(c.mesh.vertices)
    r = Rotation.from_euler(0.3, -0.2, 0.5)
    moved = SphericalMesh(r.apply(c.mesh.vertices), c.mesh.faces)
    # transferring onto the rotated subject with the inverse rotation is the identity transfer
    out = transfer_labels(c.mesh, labels, moved, r.inv())
    assert np.array_equal(out, labels)


@pytest.mark.parametrize("seed", range(5))
def test_recovery_does_not_lower_dice(seed):
    c = SyntheticCortex([3], n_labels=16, level=4, seed=seed)
    labels = c.labels_at(c.mesh.vertices)
    r, _ = make_perturbation(seed)
    subject = SphericalMesh(r.apply(c.mesh.vertices), c.mesh.faces)
    before = dice_score(labels, transfer_labels(c.mesh, labels, subject, Rotation.identity()))
    after = dice_score(labels, transfer_labels(c.mesh, labels, subject, r.inv()))
    assert after >= before
    assert after == 1.0


def test_report_validation_and_row():
    rep = AlignmentReport([0.1, 0.2], [0.9, 0.8], 0.7, rotation_error_deg=0.3, timing=1.5, extra={"k": 1})
    row = rep.to_row()
    assert row["mse_1"] == 0.2 and row["pcc_0"] == 0.9 and row["dice"] == 0.7 and row["k"] == 1
    with pytest.raises(ValueError):
        AlignmentReport([-0.1], [0.5], 0.5)
    with pytest.raises(ValueError):
        AlignmentReport([0.1], [1.5], 0.5)
    with pytest.raises(ValueError):
        AlignmentReport([0.1], [0.5], 1.5)


def test_append_results_with_hash(tmp_path):
    path = tmp_path / "r.csv"
    cfg = {"seed": 1, "reset": "sa"}
    append_results(path, [{"a": 1, "b": 2}], config=cfg)
    append_results(path, [{"b": 4, "a": 3, "c": 9}], config=cfg)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["a"] for r in rows] == ["1", "3"]
    assert all(r["config_hash"] == config_hash(cfg) for r in rows)
    assert "c" not in rows[0]
    assert config_hash({"reset": "sa", "seed": 1}) == config_hash(cfg)
    assert config_hash({"seed": 2}) != config_hash(cfg)


def test_transfer_requires_full_labels():
    mesh = make_icosphere(1)
    with pytest.raises(ShapeError):
        transfer_labels(mesh, np.zeros(3, dtype=int), mesh, Rotation.identity())
