"""Frozen world: surrogate encoder, synthetic store generation, binary I/O."""

import numpy as np
import pytest

from fedtpg.encoders import (
    SurrogateEncoder,
    SynthConfig,
    encode_texts,
    handcrafted_prompts,
    load_store,
    save_store,
    stores_equal,
    surrogate_encode,
    synth_world,
)
from fedtpg.errors import ConfigError, ShapeError, StoreFormatError, StoreIOError
from fedtpg.rng import Stream
from fedtpg.tensor import GradTape, Matrix


TINY = SynthConfig(num_datasets=2, classes_per_dataset=6, train_shots=3,
                   eval_images_per_class=4, noise_sigma=0.3,
                   dataset_context_spread=0.5, seed=0, d=8, m=2)


@pytest.fixture(scope="module")
def tiny_store():
    return synth_world(TINY)


def test_encoder_regeneration_is_bitwise(tiny_store):
    a = SurrogateEncoder.from_seed(42, 2, 8)
    b = SurrogateEncoder.from_seed(42, 2, 8)
    assert np.array_equal(a.w_e, b.w_e)
    assert np.array_equal(a.b_e, b.b_e)


def test_surrogate_encode_output_length():
    enc = SurrogateEncoder.from_seed(0, 2, 8)
    p = Stream(1).gaussians(16).reshape(2, 8)
    out = surrogate_encode(enc, p, Stream(2).gaussians(8))
    assert out.shape == (8,)


def test_surrogate_encode_is_row_order_sensitive():
    enc = SurrogateEncoder.from_seed(0, 2, 8)
    p = Stream(3).gaussians(16).reshape(2, 8)
    token = Stream(4).gaussians(8)
    swapped = p[::-1].copy()
    assert not np.allclose(surrogate_encode(enc, p, token),
                           surrogate_encode(enc, swapped, token))


def test_surrogate_encode_linear_in_prompts():
    enc = SurrogateEncoder.from_seed(5, 3, 8)
    s = Stream(6)
    p1 = s.gaussians(24).reshape(3, 8)
    p2 = s.gaussians(24).reshape(3, 8)
    token = s.gaussians(8)
    lhs = (
        surrogate_encode(enc, p1 + p2, token)
        - surrogate_encode(enc, p1, token)
        - surrogate_encode(enc, p2, token)
        + surrogate_encode(enc, np.zeros((3, 8)), token)
    )
    assert np.max(np.abs(lhs)) <= 1e-9


def test_surrogate_encode_grad_matches_finite_differences():
    enc = SurrogateEncoder.from_seed(7, 2, 8)
    s = Stream(8)
    p = s.gaussians(16).reshape(2, 8)
    tokens = s.gaussians(3 * 8).reshape(3, 8)
    w = s.gaussians(3 * 8).reshape(3, 8)  # contraction weights

    def scalar(pv):
        return float((encode_texts(enc, Matrix(pv), Matrix(tokens)).a * w).sum())

    tape = GradTape()
    pm = tape.watch(Matrix(p))
    out = encode_texts(enc, pm, Matrix(tokens))
    from fedtpg import tensor as T

    contracted = T.matmul(T.reshape(out, 1, out.rows * out.cols), Matrix(w.reshape(-1, 1)))
    (g,) = tape.grad(contracted, [pm])
    h = 1e-6
    fd = np.zeros_like(p)
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            up, dn = p.copy(), p.copy()
            up[i, j] += h
            dn[i, j] -= h
            fd[i, j] = (scalar(up) - scalar(dn)) / (2 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


def test_surrogate_encode_shape_error():
    enc = SurrogateEncoder.from_seed(0, 2, 8)
    with pytest.raises(ShapeError):
        surrogate_encode(enc, np.zeros((3, 8)), np.zeros(8))


def test_handcrafted_prompts_shape_and_determinism():
    enc = SurrogateEncoder.from_seed(11, 4, 16)
    p = handcrafted_prompts(enc)
    assert p.shape == (4, 16)
    np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-12)
    assert np.array_equal(p, handcrafted_prompts(SurrogateEncoder.from_seed(11, 4, 16)))


# ---------------------------------------------------------------------------
# synthetic worlds


def test_synth_world_counts():
    cfg = SynthConfig(num_datasets=6, classes_per_dataset=40, train_shots=8,
                      eval_images_per_class=20, d=8, m=2, seed=1)
    store = synth_world(cfg)
    assert store.num_classes() == 240
    train = sum(c.train.shape[0] for _, _, c in store.all_classes())
    ev = sum(c.eval.shape[0] for _, _, c in store.all_classes())
    assert train == 240 * 8
    assert ev == 240 * 20


def test_synth_world_deterministic(tiny_store):
    again = synth_world(TINY)
    assert stores_equal(tiny_store, again)


def test_synth_world_token_norms_and_splits(tiny_store):
    for ds in tiny_store.datasets:
        splits = [c.split for c in ds.classes]
        assert splits == ["base"] * 3 + ["new"] * 3
        for c in ds.classes:
            assert np.linalg.norm(c.token) == pytest.approx(1.0, abs=2e-6)


def test_sigma_zero_images_equal_handcrafted_text_direction():
    cfg = SynthConfig(num_datasets=2, classes_per_dataset=4, train_shots=2,
                      eval_images_per_class=2, noise_sigma=0.0, d=8, m=2, seed=3)
    store = synth_world(cfg)
    enc = store.encoder()
    p0 = handcrafted_prompts(enc)
    for _, _, cls in store.all_classes():
        text = surrogate_encode(enc, p0, cls.token)
        direction = text / np.linalg.norm(text)
        for img in np.vstack([cls.train, cls.eval]):
            assert float(img @ direction) == pytest.approx(1.0, abs=1e-6)


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        synth_world(SynthConfig(num_datasets=0))
    with pytest.raises(ConfigError):
        synth_world(SynthConfig(noise_sigma=-0.1))


# ---------------------------------------------------------------------------
# store I/O


def test_store_round_trip_bitwise(tiny_store, tmp_path):
    path = tmp_path / "world.ftpgemb"
    save_store(tiny_store, path)
    assert stores_equal(tiny_store, load_store(path))


def test_store_round_trip_twice_is_byte_identical(tiny_store, tmp_path):
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_store(tiny_store, p1)
    save_store(load_store(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_store_bad_magic_is_format_error(tiny_store, tmp_path):
    path = tmp_path / "world.ftpgemb"
    save_store(tiny_store, path)
    blob = bytearray(path.read_bytes())
    blob[:8] = b"XXXXXXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(StoreFormatError):
        load_store(path)


def test_store_truncation_reports_offset(tiny_store, tmp_path):
    path = tmp_path / "world.ftpgemb"
    save_store(tiny_store, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(StoreIOError, match="byte"):
        load_store(path)


def test_store_file_size_matches_accounting(tiny_store, tmp_path):
    path = tmp_path / "world.ftpgemb"
    save_store(tiny_store, path)
    header = 8 + 4 + 4 + 4 + 8 + 4
    per_dataset = sum(8 + len(ds.name.encode()) for ds in tiny_store.datasets)
    per_class = sum(
        13 + len(c.name.encode()) for _, _, c in tiny_store.all_classes()
    )
    n_classes = tiny_store.num_classes()
    n_images = sum(
        c.train.shape[0] + c.eval.shape[0] for _, _, c in tiny_store.all_classes()
    )
    payload = 4 * tiny_store.d * (n_classes + n_images)
    assert path.stat().st_size == header + per_dataset + per_class + payload
