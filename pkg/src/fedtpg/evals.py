"""Evaluation protocols, harmonic-mean summary, and PCA export of prompts.

Three accuracies summarize a model: `local` (each client's own candidate
set, averaged over clients), `base` (all seen classes of a dataset, averaged
over datasets) and `new` (the held-out classes, same averaging).  The
context-conditioned generator re-generates its prompt block from whichever
candidate token set is being evaluated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .encoders import EmbeddingStore, SurrogateEncoder, handcrafted_prompts
from .errors import DataError, ParameterError
from .models import (
    FixedPromptParams,
    PredictConfig,
    PromptGenParams,
    generate_prompts,
    prompt_text_embeddings,
)
from .partition import ClientShard

log = logging.getLogger(__name__)

METRICS_HEADER = "round,method,seed,train_loss,local_acc,base_acc,new_acc,hm"
PCA_HEADER = "method,dataset,split,vec_idx,pc1,pc2,pc3"


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    method: str
    seed: int
    train_loss: float
    local_acc: float
    base_acc: float
    new_acc: float
    hm: float


def harmonic_mean(values) -> float:
    """k / sum(1/v); defined only for strictly positive values."""
    vals = [float(v) for v in values]
    if not vals:
        raise ParameterError("harmonic mean of an empty sequence")
    for v in vals:
        if v <= 0.0:
            raise ParameterError(f"harmonic mean needs positive values, got {v}")
    return len(vals) / sum(1.0 / v for v in vals)


def candidate_prompts(method: str, params, tokens: np.ndarray,
                      enc: SurrogateEncoder) -> np.ndarray:
    """The prompt block a model uses for one candidate class set."""
    if method == "fedtpg":
        assert isinstance(params, PromptGenParams)
        return generate_prompts(params, tokens)
    if method == "zeroshot":
        return handcrafted_prompts(enc)
    assert isinstance(params, FixedPromptParams)
    return params.p


def eval_accuracy(
    method: str,
    params,
    tokens: np.ndarray,
    images: np.ndarray,
    labels: np.ndarray,
    enc: SurrogateEncoder,
    cfg: PredictConfig,
) -> float:
    """Top-1 accuracy over eval examples; ties resolve to the lowest index.

    The argmax is taken over raw cosines, which equals the argmax of the
    temperature-scaled posterior for every temperature > 0.
    """
    toks = np.asarray(tokens, dtype=np.float64)
    if toks.shape[0] < 2:
        raise DataError(f"need at least 2 candidate classes, got {toks.shape[0]}")
    imgs = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if imgs.shape[0] == 0:
        raise DataError("empty eval set")
    prompts = candidate_prompts(method, params, toks, enc)
    texts = prompt_text_embeddings(prompts, toks, enc)
    a = imgs / np.linalg.norm(imgs, axis=1, keepdims=True)
    b = texts / np.linalg.norm(texts, axis=1, keepdims=True)
    preds = np.argmax(a @ b.T, axis=1)
    return float(np.mean(preds == y))


def _split_eval_sets(store: EmbeddingStore):
    """Per dataset: (base tokens, base images, base labels, new ...)."""
    out = []
    for ds in store.datasets:
        entry = {}
        for split in ("base", "new"):
            classes = [c for c in ds.classes if c.split == split]
            if len(classes) < 2:
                entry[split] = None
                continue
            tokens = np.stack([c.token for c in classes])
            images = np.concatenate([c.eval for c in classes], axis=0)
            labels = np.concatenate(
                [np.full(c.eval.shape[0], j, dtype=np.int64) for j, c in enumerate(classes)]
            )
            entry[split] = (tokens, images, labels)
        out.append((ds.name, entry))
    return out


def _shard_eval_set(store: EmbeddingStore, shard: ClientShard):
    by_gid = store.all_classes()
    images = []
    labels = []
    for local, gid in enumerate(shard.class_ids):
        ev = by_gid[gid][2].eval
        images.append(ev)
        labels.append(np.full(ev.shape[0], local, dtype=np.int64))
    return shard.tokens, np.concatenate(images), np.concatenate(labels)


def eval_protocol(
    method: str,
    params,
    store: EmbeddingStore,
    shards: list[ClientShard],
    enc: SurrogateEncoder,
    cfg: PredictConfig,
    hm_terms: int = 3,
) -> tuple[float, float, float, float]:
    """(local, base, new, hm) for one global model."""
    per_client = [params] * len(shards)
    return eval_protocol_multi(method, per_client, params, store, shards, enc, cfg, hm_terms)


def eval_protocol_multi(
    method: str,
    client_params: list,
    global_params,
    store: EmbeddingStore,
    shards: list[ClientShard],
    enc: SurrogateEncoder,
    cfg: PredictConfig,
    hm_terms: int = 3,
) -> tuple[float, float, float, float]:
    """Protocol allowing one model per client (locally trained baselines).

    Local accuracy uses each client's own model on its own candidate set.
    Base/new accuracy of dataset k averages, over the clients holding data
    from k, that client's model on the dataset-wide candidate set; with a
    single global model this collapses to one evaluation per dataset.
    """
    if not shards:
        raise DataError("no client shards to evaluate")
    local = float(
        np.mean(
            [
                eval_accuracy(method, p, *_shard_eval_set(store, s), enc, cfg)
                for p, s in zip(client_params, shards)
            ]
        )
    )
    shared = all(p is global_params for p in client_params)
    owners: dict[str, list] = {}
    for p, s in zip(client_params, shards):
        owners.setdefault(s.dataset_name, []).append(p)

    split_accs = {"base": [], "new": []}
    for ds_name, entry in _split_eval_sets(store):
        for split in ("base", "new"):
            if entry[split] is None:
                continue
            tokens, images, labels = entry[split]
            models = [global_params] if shared else owners.get(ds_name, [global_params])
            accs = [
                eval_accuracy(method, p, tokens, images, labels, enc, cfg) for p in models
            ]
            split_accs[split].append(float(np.mean(accs)))
    if not split_accs["base"] or not split_accs["new"]:
        raise DataError("store has no dataset with enough base/new classes to evaluate")
    base = float(np.mean(split_accs["base"]))
    new = float(np.mean(split_accs["new"]))
    terms = [base, new] if hm_terms == 2 else [local, base, new]
    # the harmonic mean is undefined at zero accuracy; report 0 for such runs
    hm = harmonic_mean(terms) if min(terms) > 0.0 else 0.0
    return local, base, new, hm


# ---------------------------------------------------------------------------
# PCA of prompt vectors


def jacobi_eigh(sym: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns (eigenvalues descending, eigenvectors as columns).  Dependency
    free and deterministic; accurate to ~1e-14 relative for the small
    covariance matrices used here.
    """
    a = np.array(sym, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ParameterError(f"matrix must be square, got {a.shape}")
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0)
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if tau == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    eigvals = np.diag(a).copy()
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    v = v[:, order]
    # Deterministic sign: largest-magnitude entry of each eigenvector positive.
    for j in range(n):
        i = int(np.argmax(np.abs(v[:, j])))
        if v[i, j] < 0.0:
            v[:, j] = -v[:, j]
    return eigvals, v


@dataclass(frozen=True)
class PCAProjection:
    coords: np.ndarray  # N x k
    explained: np.ndarray  # k variance shares, non-increasing
    components: np.ndarray  # k x d eigenvector rows (zero rows past the rank)
    mean: np.ndarray  # centering offset


def pca_project(points: np.ndarray, k: int = 3) -> PCAProjection:
    """Center points and project onto the top-k covariance eigenvectors.

    Rank-deficient inputs keep their available components and pad the rest
    with zeros (with a warning).
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < k + 1:
        raise DataError(f"need at least {k + 1} points for k={k}, got {x.shape}")
    mean = x.mean(axis=0, keepdims=True)
    centered = x - mean
    cov = centered.T @ centered / x.shape[0]
    eigvals, eigvecs = jacobi_eigh(cov)
    eigvals = np.clip(eigvals, 0.0, None)
    total = float(eigvals.sum())
    rank = int(np.sum(eigvals > 1e-12 * max(eigvals[0], 1e-300)))
    use = min(k, rank)
    if use < k:
        log.warning("input rank %d < k=%d; padding remaining components with zeros", rank, k)
    coords = np.zeros((x.shape[0], k))
    coords[:, :use] = centered @ eigvecs[:, :use]
    shares = np.zeros(k)
    if total > 0.0:
        shares[:use] = eigvals[:use] / total
    components = np.zeros((k, x.shape[1]))
    components[:use] = eigvecs[:, :use].T
    return PCAProjection(coords=coords, explained=shares, components=components, mean=mean[0])


def prompt_point_rows(
    method: str,
    params,
    store: EmbeddingStore,
    shards: list[ClientShard],
    enc: SurrogateEncoder,
) -> tuple[list[tuple[str, str, str, int]], np.ndarray]:
    """Labeled prompt vectors for the PCA export.

    The generator contributes one prompt block per dataset-level base and new
    candidate set and one per client; coop_local (params given as a list
    aligned with shards) contributes each client's block; other fixed-prompt
    models contribute their single shared block.
    """
    labels: list[tuple[str, str, str, int]] = []
    points: list[np.ndarray] = []

    def emit(block: np.ndarray, dataset: str, split: str) -> None:
        for i, row in enumerate(block):
            labels.append((method, dataset, split, i))
            points.append(row)

    if method == "fedtpg":
        for ds_name, entry in _split_eval_sets(store):
            for split in ("base", "new"):
                if entry[split] is None:
                    continue
                tokens = entry[split][0]
                emit(candidate_prompts(method, params, tokens, enc), ds_name, split)
        for shard in shards:
            emit(
                candidate_prompts(method, params, shard.tokens, enc),
                shard.dataset_name,
                "local",
            )
    elif method == "coop_local":
        for p, shard in zip(params, shards):
            emit(p.p, shard.dataset_name, "local")
    elif method == "zeroshot":
        emit(handcrafted_prompts(enc), "all", "global")
    else:
        emit(params.p, "all", "global")
    return labels, np.stack(points)


# ---------------------------------------------------------------------------
# CSV serialization


def metrics_csv(records: list[MetricsRecord]) -> str:
    lines = [METRICS_HEADER]
    for r in records:
        lines.append(
            f"{r.round},{r.method},{r.seed},{r.train_loss:.6f},"
            f"{r.local_acc:.6f},{r.base_acc:.6f},{r.new_acc:.6f},{r.hm:.6f}"
        )
    return "\n".join(lines) + "\n"


def write_metrics_csv(records: list[MetricsRecord], path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(metrics_csv(records))


def write_pca_csv(labels, coords: np.ndarray, path) -> None:
    lines = [PCA_HEADER]
    for (method, dataset, split, idx), row in zip(labels, coords):
        lines.append(
            f"{method},{dataset},{split},{idx},{row[0]:.6f},{row[1]:.6f},{row[2]:.6f}"
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
