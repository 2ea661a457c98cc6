"""Snapshot vector, SGD-with-momentum step, finite differences, serialization."""

import numpy as np
import pytest

from fedtpg.errors import NumericError, ShapeError, StoreFormatError, StoreIOError
from fedtpg.snapshot import (
    ModelSnapshot,
    finite_diff_grad,
    load_snapshot,
    save_snapshot,
    sgd_momentum_step,
)


def snap(*values):
    return ModelSnapshot("fixed", np.array(values, dtype=float))


def test_plain_sgd_step():
    p, v = sgd_momentum_step(snap(1.0), snap(2.0), np.zeros(1), lr=0.1,
                             momentum=0.0, weight_decay=0.0)
    assert p.values[0] == pytest.approx(0.8, abs=1e-15)


def test_momentum_recursion_two_steps():
    g = snap(0.5)
    p = snap(0.0)
    v = np.zeros(1)
    p, v = sgd_momentum_step(p, g, v, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert v[0] == pytest.approx(0.5)
    p, v = sgd_momentum_step(p, g, v, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert v[0] == pytest.approx(1.9 * 0.5, abs=1e-15)


def test_zero_lr_leaves_params_bitwise():
    values = np.array([0.1, -0.0, 3.5e-12, 7.0])
    p, _ = sgd_momentum_step(
        ModelSnapshot("fixed", values), snap(1.0, 2.0, 3.0, 4.0), np.ones(4),
        lr=0.0, momentum=0.9, weight_decay=1e-5,
    )
    assert np.array_equal(p.values, values)


def test_weight_decay_is_coupled():
    p, _ = sgd_momentum_step(snap(2.0), snap(0.0), np.zeros(1), lr=1.0,
                             momentum=0.0, weight_decay=0.5)
    assert p.values[0] == pytest.approx(2.0 - 1.0)  # g' = 0 + 0.5*2


def test_length_mismatch_rejected():
    with pytest.raises(ShapeError):
        sgd_momentum_step(snap(1.0), snap(1.0, 2.0), np.zeros(1), 0.1, 0.9, 0.0)


def test_finite_diff_quadratic():
    g = finite_diff_grad(lambda s: float(s.values[0] ** 2), snap(3.0))
    assert g.values[0] == pytest.approx(6.0, abs=1e-6)


def test_finite_diff_constant():
    g = finite_diff_grad(lambda s: 4.25, snap(1.0, -2.0, 0.5))
    np.testing.assert_allclose(g.values, 0.0, atol=1e-8)


def test_finite_diff_rejects_non_finite():
    with pytest.raises(NumericError):
        finite_diff_grad(lambda s: float("nan"), snap(1.0))


def test_snapshot_file_round_trip(tmp_path):
    s = ModelSnapshot("fedtpg", np.linspace(-1, 1, 37))
    path = tmp_path / "model.snap"
    save_snapshot(s, path)
    back = load_snapshot(path)
    assert back.method == "fedtpg"
    assert np.array_equal(back.values, s.values)


def test_snapshot_bad_magic(tmp_path):
    path = tmp_path / "bad.snap"
    path.write_bytes(b"NOTMAGIC" + b"\0" * 32)
    with pytest.raises(StoreFormatError):
        load_snapshot(path)


def test_snapshot_truncation_reports_offset(tmp_path):
    s = ModelSnapshot("fixed", np.arange(8.0))
    path = tmp_path / "model.snap"
    save_snapshot(s, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:30])
    with pytest.raises(StoreIOError, match="byte 30"):
        load_snapshot(path)
