"""Prompt models: the cross-attention prompt generator and fixed-prompt baselines.

The generator maps a task's class-token matrix T (n x d) to m prompt vectors:
multi-head cross-attention of a learnable query block against keys/values
projected from T, output projection, residual to the query, layer norm, then
a two-layer ReLU MLP applied row-wise.  Fixed-prompt baselines skip all of
that and learn the m x d prompt block directly.

Prediction scores an image embedding against each candidate class's surrogate
text embedding by cosine similarity over a temperature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import SurrogateEncoder, encode_texts
from .errors import ConfigError, DataError, ParameterError, ShapeError
from .rng import Stream, child_seed
from .snapshot import ModelSnapshot
from .tensor import GradTape, Matrix

# Snapshot layout of the generator, in order (shapes for given m, d):
#   q (m,d) | w_k (d,d) | w_v (d,d) | w_o (d,d) | ln_gamma (d,) | ln_beta (d,)
#   | w1 (d,d) | b1 (d,) | w2 (d,d) | b2 (d,)
_GEN_FIELDS = ("q", "w_k", "w_v", "w_o", "ln_gamma", "ln_beta", "w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class PredictConfig:
    temperature: float = 0.01

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the prompt models."""

    m: int = 4
    d: int = 512
    heads: int = 4
    kg_lambda: float = 8.0

    def validate(self) -> None:
        if self.m < 1 or self.d < 1 or self.heads < 1:
            raise ConfigError(f"m, d, heads must be >= 1, got {self.m}, {self.d}, {self.heads}")
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.kg_lambda < 0.0:
            raise ConfigError(f"kg_lambda must be >= 0, got {self.kg_lambda}")


@dataclass(frozen=True)
class PromptGenParams:
    q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ln_gamma: np.ndarray  # 1 x d
    ln_beta: np.ndarray  # 1 x d
    w1: np.ndarray
    b1: np.ndarray  # 1 x d
    w2: np.ndarray
    b2: np.ndarray  # 1 x d
    heads: int

    @property
    def m(self) -> int:
        return self.q.shape[0]

    @property
    def d(self) -> int:
        return self.q.shape[1]


@dataclass(frozen=True)
class FixedPromptParams:
    p: np.ndarray  # m x d

    @property
    def m(self) -> int:
        return self.p.shape[0]

    @property
    def d(self) -> int:
        return self.p.shape[1]


def init_prompt_gen(m: int, d: int, heads: int, seed: int) -> PromptGenParams:
    """Seeded init: projections N(0, 1/sqrt(d)), query N(0, 0.02), biases 0."""
    if d % heads != 0:
        raise ConfigError(f"d={d} not divisible by heads={heads}")

    def gauss(tag: str, rows: int, cols: int, std: float) -> np.ndarray:
        g = Stream(child_seed(seed, tag)).gaussians(rows * cols)
        return g.reshape(rows, cols) * std

    proj_std = 1.0 / math.sqrt(d)
    return PromptGenParams(
        q=gauss("q", m, d, 0.02),
        w_k=gauss("w_k", d, d, proj_std),
        w_v=gauss("w_v", d, d, proj_std),
        w_o=gauss("w_o", d, d, proj_std),
        ln_gamma=np.ones((1, d)),
        ln_beta=np.zeros((1, d)),
        w1=gauss("w1", d, d, proj_std),
        b1=np.zeros((1, d)),
        w2=gauss("w2", d, d, proj_std),
        b2=np.zeros((1, d)),
        heads=heads,
    )


def init_fixed_prompt(m: int, d: int, seed: int) -> FixedPromptParams:
    """Learnable prompt block init N(0, 0.02), one block shared by all classes."""
    g = Stream(child_seed(seed, "fixed-p")).gaussians(m * d)
    return FixedPromptParams(p=g.reshape(m, d) * 0.02)


# ---------------------------------------------------------------------------
# snapshot flattening


def gen_param_count(m: int, d: int) -> int:
    return m * d + 3 * d * d + 2 * d + 2 * (d * d + d)


def flatten_gen(params: PromptGenParams) -> ModelSnapshot:
    parts = [getattr(params, f).ravel() for f in _GEN_FIELDS]
    return ModelSnapshot("fedtpg", np.concatenate(parts))


def unflatten_gen(snap: ModelSnapshot, m: int, d: int, heads: int) -> PromptGenParams:
    if snap.method != "fedtpg":
        raise ParameterError(f"snapshot holds {snap.method!r} parameters")
    expect = gen_param_count(m, d)
    if len(snap) != expect:
        raise ShapeError(f"snapshot has {len(snap)} values, expected {expect}")
    shapes = {
        "q": (m, d), "w_k": (d, d), "w_v": (d, d), "w_o": (d, d),
        "ln_gamma": (1, d), "ln_beta": (1, d),
        "w1": (d, d), "b1": (1, d), "w2": (d, d), "b2": (1, d),
    }
    fields = {}
    off = 0
    for name in _GEN_FIELDS:
        r, c = shapes[name]
        fields[name] = snap.values[off : off + r * c].reshape(r, c)
        off += r * c
    return PromptGenParams(heads=heads, **fields)


def flatten_fixed(params: FixedPromptParams) -> ModelSnapshot:
    return ModelSnapshot("fixed", params.p.ravel())


def unflatten_fixed(snap: ModelSnapshot, m: int, d: int) -> FixedPromptParams:
    if snap.method != "fixed":
        raise ParameterError(f"snapshot holds {snap.method!r} parameters")
    if len(snap) != m * d:
        raise ShapeError(f"snapshot has {len(snap)} values, expected {m * d}")
    return FixedPromptParams(p=snap.values.reshape(m, d))


# ---------------------------------------------------------------------------
# forward passes


def _gen_forward(pm: dict[str, Matrix], tokens: Matrix, heads: int) -> Matrix:
    """Prompt-generator forward on tape-aware matrices."""
    m, d = pm["q"].shape
    dh = d // heads
    keys = T.matmul(tokens, pm["w_k"])
    vals = T.matmul(tokens, pm["w_v"])
    head_outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        q_h = T.slice_cols(pm["q"], lo, hi)
        k_h = T.slice_cols(keys, lo, hi)
        v_h = T.slice_cols(vals, lo, hi)
        scores = T.matmul(q_h, T.transpose(k_h))
        attn = T.row_softmax(scores, math.sqrt(dh))
        head_outs.append(T.matmul(attn, v_h))
    merged = T.matmul(T.concat_cols(*head_outs), pm["w_o"])
    normed = T.layer_norm(T.add(pm["q"], merged), pm["ln_gamma"], pm["ln_beta"])
    hidden = T.relu(T.add_row(T.matmul(normed, pm["w1"]), pm["b1"]))
    return T.add_row(T.matmul(hidden, pm["w2"]), pm["b2"])


def _watch_gen(params: PromptGenParams, tape: GradTape) -> dict[str, Matrix]:
    return {f: tape.watch(Matrix(getattr(params, f))) for f in _GEN_FIELDS}


def generate_prompts(params: PromptGenParams, tokens: np.ndarray) -> np.ndarray:
    """Context prompts for one candidate class set (no gradients)."""
    t = np.asarray(tokens, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] != params.d:
        raise ShapeError(f"tokens must be n x {params.d}, got {t.shape}")
    pm = {f: Matrix(getattr(params, f)) for f in _GEN_FIELDS}
    return _gen_forward(pm, Matrix._wrap(t), params.heads).a


def class_probs(
    prompts: np.ndarray,
    tokens: np.ndarray,
    image: np.ndarray,
    enc: SurrogateEncoder,
    cfg: PredictConfig,
) -> np.ndarray:
    """Posterior over the n candidate classes for one image embedding."""
    toks = np.asarray(tokens, dtype=np.float64)
    if toks.shape[0] < 2:
        raise DataError(f"need at least 2 candidate classes, got {toks.shape[0]}")
    texts = encode_texts(enc, Matrix(prompts), Matrix._wrap(toks))
    img = Matrix(np.asarray(image, dtype=np.float64).reshape(1, -1))
    cos = T.cosine_rows(img, texts)
    return T.row_softmax(cos, cfg.temperature).a[0]


def prompt_text_embeddings(
    prompts: np.ndarray, tokens: np.ndarray, enc: SurrogateEncoder
) -> np.ndarray:
    """Text embeddings of every candidate class under one prompt block."""
    return encode_texts(enc, Matrix(prompts), Matrix._wrap(np.asarray(tokens, float))).a


def _batch_loss(
    texts: Matrix, images: Matrix, labels: np.ndarray, temperature: float
) -> Matrix:
    cos = T.cosine_rows(images, texts)
    logits = T.scale(cos, 1.0 / temperature)
    return T.cross_entropy_mean(logits, labels)


def batch_loss(
    method: str,
    params: PromptGenParams | FixedPromptParams,
    images: np.ndarray,
    labels: np.ndarray,
    tokens: np.ndarray,
    enc: SurrogateEncoder,
    cfg: PredictConfig,
    kg_lambda: float = 0.0,
    kg_reference: np.ndarray | None = None,
) -> float:
    """Forward-only mean cross-entropy (no tape); same math as loss_and_grad."""
    imgs = Matrix._wrap(np.asarray(images, dtype=np.float64))
    toks = Matrix._wrap(np.asarray(tokens, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    if method == "fedtpg":
        pm = {f: Matrix(getattr(params, f)) for f in _GEN_FIELDS}
        prompts = _gen_forward(pm, toks, params.heads)
    elif method == "fixed":
        prompts = Matrix(params.p)
    else:
        raise ParameterError(f"unknown method {method!r} (expected 'fedtpg' or 'fixed')")
    texts = encode_texts(enc, prompts, toks)
    loss = _batch_loss(texts, imgs, y, cfg.temperature)
    if method == "fixed" and kg_lambda > 0.0:
        if kg_reference is None:
            raise ParameterError("kg_lambda > 0 requires a reference prompt block")
        ref_texts = encode_texts(enc, Matrix(kg_reference), toks)
        penalty = T.scale(T.frob_sumsq(T.sub(texts, ref_texts)), 1.0 / toks.rows)
        loss = T.add(loss, T.scale(penalty, kg_lambda))
    return float(loss.a[0, 0])


def loss_and_grad(
    method: str,
    params: PromptGenParams | FixedPromptParams,
    images: np.ndarray,
    labels: np.ndarray,
    tokens: np.ndarray,
    enc: SurrogateEncoder,
    cfg: PredictConfig,
    kg_lambda: float = 0.0,
    kg_reference: np.ndarray | None = None,
) -> tuple[float, ModelSnapshot]:
    """Mean cross-entropy over the batch and its gradient as a flat snapshot.

    method "fedtpg" differentiates through prompt generation; "fixed"
    differentiates the prompt block directly.  With kg_lambda > 0 a fixed
    model additionally pays kg_lambda times the mean squared distance between
    its text embeddings and those of the reference prompt block.
    """
    imgs = Matrix._wrap(np.asarray(images, dtype=np.float64))
    toks = Matrix._wrap(np.asarray(tokens, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    if y.size == 0:
        raise DataError("empty batch")
    tape = GradTape()
    if method == "fedtpg":
        assert isinstance(params, PromptGenParams)
        pm = _watch_gen(params, tape)
        watched = [pm[f] for f in _GEN_FIELDS]
        prompts = _gen_forward(pm, toks, params.heads)
        texts = encode_texts(enc, prompts, toks)
        loss = _batch_loss(texts, imgs, y, cfg.temperature)
        grads = tape.grad(loss, watched)
        flat = np.concatenate([g.ravel() for g in grads])
        return float(loss.a[0, 0]), ModelSnapshot("fedtpg", flat)
    if method == "fixed":
        assert isinstance(params, FixedPromptParams)
        p = tape.watch(Matrix(params.p))
        texts = encode_texts(enc, p, toks)
        loss = _batch_loss(texts, imgs, y, cfg.temperature)
        if kg_lambda > 0.0:
            if kg_reference is None:
                raise ParameterError("kg_lambda > 0 requires a reference prompt block")
            ref_texts = encode_texts(enc, Matrix(kg_reference), toks)
            diff = T.sub(texts, ref_texts)
            penalty = T.scale(T.frob_sumsq(diff), 1.0 / toks.rows)
            loss = T.add(loss, T.scale(penalty, kg_lambda))
        (grad,) = tape.grad(loss, [p])
        return float(loss.a[0, 0]), ModelSnapshot("fixed", grad.ravel())
    raise ParameterError(f"unknown method {method!r} (expected 'fedtpg' or 'fixed')")


def kg_penalty(
    prompts: np.ndarray,
    reference: np.ndarray,
    tokens: np.ndarray,
    enc: SurrogateEncoder,
) -> tuple[float, np.ndarray]:
    """Mean squared text-embedding discrepancy to a reference prompt block.

    Returns the penalty and its gradient with respect to `prompts`.
    """
    p = np.asarray(prompts, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if p.shape != r.shape:
        raise ShapeError(f"prompt blocks differ: {p.shape} vs {r.shape}")
    toks = Matrix._wrap(np.asarray(tokens, dtype=np.float64))
    tape = GradTape()
    pw = tape.watch(Matrix(p))
    diff = T.sub(encode_texts(enc, pw, toks), encode_texts(enc, Matrix(r), toks))
    penalty = T.scale(T.frob_sumsq(diff), 1.0 / toks.rows)
    (grad,) = tape.grad(penalty, [pw])
    return float(penalty.a[0, 0]), grad
