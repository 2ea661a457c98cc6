"""Evaluation protocols, harmonic mean arithmetic, PCA export."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedtpg.encoders import SynthConfig, synth_world
from fedtpg.errors import DataError, ParameterError
from fedtpg.evals import (
    eval_accuracy,
    eval_protocol,
    harmonic_mean,
    jacobi_eigh,
    metrics_csv,
    MetricsRecord,
    pca_project,
)
from fedtpg.models import PredictConfig, init_prompt_gen
from fedtpg.partition import build_shards
from fedtpg.rng import Stream


# ---------------------------------------------------------------------------
# harmonic mean


def test_harmonic_mean_reproduces_published_rows():
    assert harmonic_mean([76.72, 70.52, 75.78]) == pytest.approx(74.24, abs=0.01)
    assert harmonic_mean([83.67, 71.49, 71.15]) == pytest.approx(75.01, abs=0.01)


def test_harmonic_mean_of_equal_values():
    assert harmonic_mean([0.42, 0.42, 0.42]) == pytest.approx(0.42, abs=1e-12)


def test_harmonic_mean_rejects_nonpositive():
    with pytest.raises(ParameterError):
        harmonic_mean([0.5, 0.0, 0.7])
    with pytest.raises(ParameterError):
        harmonic_mean([])


@given(st.lists(st.floats(min_value=1e-3, max_value=1e3), min_size=1, max_size=6))
@settings(max_examples=60, deadline=None)
def test_harmonic_leq_arithmetic(values):
    hm = harmonic_mean(values)
    am = sum(values) / len(values)
    assert hm <= am + 1e-9
    if max(values) - min(values) > 1e-6:
        assert hm < am


# ---------------------------------------------------------------------------
# accuracy protocols


SIGMA0 = SynthConfig(num_datasets=2, classes_per_dataset=6, train_shots=2,
                     eval_images_per_class=3, noise_sigma=0.0, d=8, m=2, seed=0)


@pytest.fixture(scope="module")
def clean_world():
    store = synth_world(SIGMA0)
    shards = build_shards(store, n=3, shots=2, seed=0)
    return store, shards


def test_zero_noise_world_zero_shot_is_perfect(clean_world):
    store, shards = clean_world
    enc = store.encoder()
    local, base, new, hm = eval_protocol(
        "zeroshot", None, store, shards, enc, PredictConfig()
    )
    assert (local, base, new, hm) == (1.0, 1.0, 1.0, 1.0)


def test_ground_truth_oracle_scores_one(clean_world):
    # candidate texts equal to each class's true embedding direction
    store, shards = clean_world
    enc = store.encoder()
    shard = shards[0]
    images = []
    labels = []
    by_gid = store.all_classes()
    for local_idx, gid in enumerate(shard.class_ids):
        ev = by_gid[gid][2].eval
        images.append(ev)
        labels.append(np.full(ev.shape[0], local_idx))
    acc = eval_accuracy(
        "zeroshot", None, shard.tokens, np.concatenate(images),
        np.concatenate(labels), enc, PredictConfig(),
    )
    assert acc == 1.0


def test_random_embedding_accuracy_near_chance():
    s = Stream(42)
    n, per_class, d = 4, 300, 16
    enc_cfg = SynthConfig(num_datasets=1, classes_per_dataset=4, train_shots=1,
                          eval_images_per_class=1, d=d, m=2, seed=9)
    store = synth_world(enc_cfg)
    enc = store.encoder()
    tokens = s.gaussians(n * d).reshape(n, d)
    tokens /= np.linalg.norm(tokens, axis=1, keepdims=True)
    images = s.gaussians(n * per_class * d).reshape(n * per_class, d)
    labels = np.repeat(np.arange(n), per_class)
    acc = eval_accuracy("zeroshot", None, tokens, images, labels, enc, PredictConfig())
    total = n * per_class
    p = 1.0 / n
    band = 3.0 * np.sqrt(p * (1 - p) / total)
    assert abs(acc - p) <= band


def test_eval_accuracy_rejects_empty_set(clean_world):
    store, shards = clean_world
    enc = store.encoder()
    with pytest.raises(DataError):
        eval_accuracy("zeroshot", None, shards[0].tokens,
                      np.zeros((0, 8)), np.zeros(0, dtype=int), enc, PredictConfig())


def test_protocol_reuses_on_unseen_world(clean_world):
    # same protocol applied to a store the model never trained on
    store, shards = clean_world
    other = synth_world(SynthConfig(num_datasets=2, classes_per_dataset=6,
                                    train_shots=2, eval_images_per_class=3,
                                    noise_sigma=0.3, d=8, m=2, seed=77))
    other_shards = build_shards(other, n=3, shots=2, seed=0)
    params = init_prompt_gen(2, 8, 2, seed=0)
    local, base, new, hm = eval_protocol(
        "fedtpg", params, other, other_shards, other.encoder(), PredictConfig()
    )
    for v in (local, base, new):
        assert 0.0 <= v <= 1.0


def test_equal_subaccuracies_collapse_to_that_value(clean_world):
    store, shards = clean_world
    enc = store.encoder()
    local, base, new, hm = eval_protocol(
        "zeroshot", None, store, shards, enc, PredictConfig()
    )
    assert local == base == new == hm


def test_base_eval_prompts_are_context_conditioned(clean_world):
    # the generator sees the dataset-wide base token set, not a client subset
    from fedtpg.evals import candidate_prompts
    from fedtpg.models import generate_prompts

    store, _ = clean_world
    enc = store.encoder()
    params = init_prompt_gen(2, 8, 2, seed=21)
    ds = store.datasets[0]
    base_tokens = np.stack([c.token for c in ds.classes if c.split == "base"])
    subset = build_shards(store, n=2, shots=2, seed=0)[0]  # strict subset of base
    assert len(subset.class_ids) < base_tokens.shape[0]
    dataset_p = candidate_prompts("fedtpg", params, base_tokens, enc)
    client_p = generate_prompts(params, subset.tokens)
    assert not np.allclose(dataset_p, client_p)


def test_metrics_csv_shape():
    rec = MetricsRecord(25, "fedtpg", 0, 0.52, 0.8125, 0.75, 0.625, 0.722222)
    text = metrics_csv([rec])
    lines = text.strip().split("\n")
    assert lines[0] == "round,method,seed,train_loss,local_acc,base_acc,new_acc,hm"
    assert lines[1] == "25,fedtpg,0,0.520000,0.812500,0.750000,0.625000,0.722222"


# ---------------------------------------------------------------------------
# PCA


def test_jacobi_matches_library_eigensolver():
    s = Stream(5)
    a = s.gaussians(36).reshape(6, 6)
    sym = a @ a.T
    vals, vecs = jacobi_eigh(sym)
    ref_vals, ref_vecs = np.linalg.eigh(sym)
    ref_vals, ref_vecs = ref_vals[::-1], ref_vecs[:, ::-1]
    np.testing.assert_allclose(vals, ref_vals, atol=1e-8)
    for j in range(6):
        dot = abs(float(vecs[:, j] @ ref_vecs[:, j]))
        assert dot == pytest.approx(1.0, abs=1e-8)


def test_pca_recovers_three_dimensional_subspace():
    s = Stream(6)
    basis = s.gaussians(3 * 10).reshape(3, 10)
    z = s.gaussians(40 * 3).reshape(40, 3)
    points = 2.5 + z @ basis
    proj = pca_project(points, k=3)
    recon = proj.mean + proj.coords @ proj.components
    assert np.max(np.abs(recon - points)) <= 1e-9
    np.testing.assert_allclose(proj.explained.sum(), 1.0, atol=1e-9)


def test_pca_coordinates_are_centered():
    s = Stream(7)
    points = s.gaussians(25 * 6).reshape(25, 6) + 4.0
    proj = pca_project(points, k=3)
    np.testing.assert_allclose(proj.coords.mean(axis=0), 0.0, atol=1e-9)


def test_pca_explained_monotone_and_bounded():
    s = Stream(8)
    points = s.gaussians(30 * 8).reshape(30, 8)
    proj = pca_project(points, k=3)
    e = proj.explained
    assert e[0] >= e[1] >= e[2] >= 0.0
    assert e.sum() <= 1.0 + 1e-9


def test_pca_rank_deficient_pads_zeros(caplog):
    s = Stream(9)
    line = np.outer(s.gaussians(12), s.gaussians(4))  # rank 1
    proj = pca_project(line, k=3)
    assert np.allclose(proj.coords[:, 1:], 0.0)
    assert proj.explained[1] == proj.explained[2] == 0.0


def test_pca_needs_enough_points():
    with pytest.raises(DataError):
        pca_project(np.zeros((3, 5)), k=3)
