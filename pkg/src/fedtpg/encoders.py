"""Frozen embedding world: surrogate text encoder, synthetic data, store I/O.

The surrogate encoder is one frozen affine map standing in for a pretrained
text tower: it consumes m prompt vectors plus one class token and emits a
d-dim text embedding.  It is differentiable with respect to the prompt block
and never trained.

Synthetic worlds are built so that the handcrafted prompt is informative by
construction (sigma=0 makes zero-shot exact) while trained prompts have real
headroom: each dataset hides a sigma-scaled "true" prompt drift that a
learner can recover, plus class-level and per-image residual noise that it
cannot.  All noise components scale with `noise_sigma`, are expected-unit-norm
(drawn as N(0, I/d)), and are exactly reproducible from the config seed.

Store files use the FTPGEMB1 layout (little-endian):

    magic "FTPGEMB1" | u32 version=1 | u32 d | u32 m | u64 encoder_seed
    u32 num_datasets
    per dataset:  u32 name_len | name | u32 num_classes
      per class:  u32 name_len | name | u8 split (0=base,1=new)
                  | u32 num_train | u32 num_eval
    payload: all token embeddings (f32, class order),
             then per class its train then eval image embeddings (f32).

Floats are 32-bit on disk and widened to 64-bit in memory; fresh synthetic
stores are quantized through f32 at creation so that save -> load is a
bitwise round trip.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, StoreFormatError, StoreIOError
from .rng import Stream, child_seed
from .tensor import Matrix, add_row, concat_cols, matmul, reshape

STORE_MAGIC = b"FTPGEMB1"
STORE_VERSION = 1

# Relative weights of the sigma-scaled noise components in synthetic worlds.
_PROMPT_DRIFT_WEIGHT = 3.0  # per-dataset hidden prompt offset (learnable)
_CLASS_NOISE_WEIGHT = 0.5  # per-class residual (not learnable, caps accuracy)
_IMAGE_NOISE_WEIGHT = 1.0  # per-image noise


@dataclass(frozen=True)
class SurrogateEncoder:
    """Frozen affine text encoder: token plus m prompt rows -> d-vector."""

    w_e: np.ndarray  # d x (m+1)*d
    b_e: np.ndarray  # 1 x d
    m: int
    d: int
    seed: int

    @classmethod
    def from_seed(cls, seed: int, m: int, d: int) -> "SurrogateEncoder":
        width = (m + 1) * d
        w = Stream(child_seed(seed, "surrogate-w")).gaussians(d * width)
        w = w.reshape(d, width) / np.sqrt(width)
        b = Stream(child_seed(seed, "surrogate-b")).gaussians(d).reshape(1, d) * 0.05
        w.setflags(write=False)
        b.setflags(write=False)
        return cls(w_e=w, b_e=b, m=m, d=d, seed=int(seed))


def encode_texts(enc: SurrogateEncoder, prompts: Matrix, tokens: Matrix) -> Matrix:
    """Batched surrogate encoding: one text embedding per token row.

    Differentiable in `prompts` when it is attached to a tape; `tokens` and
    the encoder itself are frozen.
    """
    if prompts.shape != (enc.m, enc.d):
        raise ShapeError(
            f"prompts must be {enc.m}x{enc.d}, got {prompts.rows}x{prompts.cols}"
        )
    if tokens.cols != enc.d:
        raise ShapeError(f"tokens must have {enc.d} columns, got {tokens.cols}")
    n = tokens.rows
    vec = reshape(prompts, 1, enc.m * enc.d)
    tiled = matmul(Matrix._wrap(np.ones((n, 1))), vec)
    stacked = concat_cols(tiled, tokens)
    return add_row(matmul(stacked, Matrix._wrap(enc.w_e.T)), Matrix._wrap(enc.b_e))


def surrogate_encode(enc: SurrogateEncoder, prompts: Matrix | np.ndarray, token) -> np.ndarray:
    """Encode a single class token with the given prompt block (no tape)."""
    p = prompts if isinstance(prompts, Matrix) else Matrix(prompts)
    t = np.asarray(token, dtype=np.float64).reshape(1, -1)
    return encode_texts(enc, p, Matrix._wrap(t)).a[0]


def handcrafted_prompts(enc: SurrogateEncoder) -> np.ndarray:
    """The fixed prompt block shared by all classes and clients.

    Unit-variance gaussian rows derived from the encoder seed, each row
    L2-normalized afterwards.
    """
    g = Stream(child_seed(enc.seed, "handcrafted")).gaussians(enc.m * enc.d)
    p = g.reshape(enc.m, enc.d)
    p = p / np.linalg.norm(p, axis=1, keepdims=True)
    p.setflags(write=False)
    return p


@dataclass(frozen=True)
class StoredClass:
    name: str
    split: str  # "base" | "new"
    token: np.ndarray  # (d,)
    train: np.ndarray  # num_train x d
    eval: np.ndarray  # num_eval x d


@dataclass(frozen=True)
class StoredDataset:
    name: str
    classes: tuple[StoredClass, ...]


@dataclass(frozen=True)
class EmbeddingStore:
    """The frozen world every experiment runs against."""

    d: int
    m: int
    encoder_seed: int
    datasets: tuple[StoredDataset, ...]

    def all_classes(self) -> list[tuple[int, str, StoredClass]]:
        """(global id, dataset name, class) in store order."""
        out = []
        gid = 0
        for ds in self.datasets:
            for cls in ds.classes:
                out.append((gid, ds.name, cls))
                gid += 1
        return out

    def class_by_id(self, gid: int) -> StoredClass:
        return self.all_classes()[gid][2]

    def num_classes(self) -> int:
        return sum(len(ds.classes) for ds in self.datasets)

    def encoder(self) -> SurrogateEncoder:
        return SurrogateEncoder.from_seed(self.encoder_seed, self.m, self.d)

    def validate(self) -> None:
        for ds in self.datasets:
            if not ds.classes:
                raise ConfigError(f"dataset {ds.name!r} has no classes")
            splits = {c.split for c in ds.classes}
            if not splits <= {"base", "new"}:
                raise ConfigError(f"dataset {ds.name!r} has bad split flags {splits}")
            for cls in ds.classes:
                if cls.token.shape != (self.d,):
                    raise ShapeError(f"class {cls.name!r}: token shape {cls.token.shape}")
                if cls.train.size == 0 and cls.eval.size == 0:
                    raise ConfigError(f"class {cls.name!r} has no images")
                norm = float(np.linalg.norm(cls.token))
                if abs(norm - 1.0) > 2e-6:
                    raise ConfigError(f"class {cls.name!r}: token norm {norm}")
                for arr in (cls.token, cls.train, cls.eval):
                    if not np.all(np.isfinite(arr)):
                        raise ConfigError(f"class {cls.name!r} has non-finite embeddings")


@dataclass(frozen=True)
class SynthConfig:
    """Shape and noise knobs of a synthetic world."""

    num_datasets: int = 6
    classes_per_dataset: int = 40
    train_shots: int = 8
    eval_images_per_class: int = 20
    noise_sigma: float = 0.3
    dataset_context_spread: float = 0.5
    seed: int = 0
    d: int = 32
    m: int = 4

    def validate(self) -> None:
        for name in ("num_datasets", "classes_per_dataset", "train_shots",
                     "eval_images_per_class", "d", "m"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.noise_sigma < 0.0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.dataset_context_spread < 0.0:
            raise ConfigError(
                f"dataset_context_spread must be >= 0, got {self.dataset_context_spread}"
            )


def _f32(a: np.ndarray) -> np.ndarray:
    """Quantize to the on-disk precision so round trips are bitwise."""
    return a.astype(np.float32).astype(np.float64)


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def synth_world(cfg: SynthConfig) -> EmbeddingStore:
    """Generate a deterministic synthetic embedding world.

    Class tokens cluster around one unit centroid per dataset; images of a
    class cluster around the surrogate text embedding of that class under the
    dataset's hidden (sigma-drifted) prompt block.
    """
    cfg.validate()
    d, m, sigma = cfg.d, cfg.m, cfg.noise_sigma
    enc = SurrogateEncoder.from_seed(cfg.seed, m, d)
    p0 = handcrafted_prompts(enc)
    sqd = np.sqrt(d)
    n_base = (cfg.classes_per_dataset + 1) // 2

    datasets = []
    for k in range(cfg.num_datasets):
        ds_name = f"synth{k:02d}"
        centroid = Stream(child_seed(cfg.seed, "centroid", k)).gaussians(d)
        centroid = centroid / np.linalg.norm(centroid)
        drift = Stream(child_seed(cfg.seed, "prompt-drift", k)).gaussians(m * d)
        hidden_p = p0 + sigma * _PROMPT_DRIFT_WEIGHT * drift.reshape(m, d) / sqd

        classes = []
        for j in range(cfg.classes_per_dataset):
            tok_s = Stream(child_seed(cfg.seed, "token", k, j))
            token = _unit_rows(centroid + cfg.dataset_context_spread * tok_s.gaussians(d) / sqd)
            token = _f32(token)

            center = surrogate_encode(enc, hidden_p, token)
            cls_s = Stream(child_seed(cfg.seed, "class-noise", k, j))
            center = center + sigma * _CLASS_NOISE_WEIGHT * cls_s.gaussians(d) / sqd

            n_img = cfg.train_shots + cfg.eval_images_per_class
            img_s = Stream(child_seed(cfg.seed, "images", k, j))
            noise = img_s.gaussians(n_img * d).reshape(n_img, d)
            images = _f32(_unit_rows(center + sigma * _IMAGE_NOISE_WEIGHT * noise / sqd))
            for arr in (images,):
                arr.setflags(write=False)
            token.setflags(write=False)
            classes.append(
                StoredClass(
                    name=f"{ds_name}_c{j:03d}",
                    split="base" if j < n_base else "new",
                    token=token,
                    train=images[: cfg.train_shots],
                    eval=images[cfg.train_shots :],
                )
            )
        datasets.append(StoredDataset(name=ds_name, classes=tuple(classes)))
    store = EmbeddingStore(d=d, m=m, encoder_seed=cfg.seed, datasets=tuple(datasets))
    store.validate()
    return store


# ---------------------------------------------------------------------------
# store I/O


def save_store(store: EmbeddingStore, path) -> None:
    out = bytearray()
    out += STORE_MAGIC
    out += struct.pack("<III", STORE_VERSION, store.d, store.m)
    out += struct.pack("<Q", store.encoder_seed & ((1 << 64) - 1))
    out += struct.pack("<I", len(store.datasets))
    for ds in store.datasets:
        name = ds.name.encode("utf-8")
        out += struct.pack("<I", len(name)) + name
        out += struct.pack("<I", len(ds.classes))
        for cls in ds.classes:
            cname = cls.name.encode("utf-8")
            out += struct.pack("<I", len(cname)) + cname
            out += struct.pack("<BII", 0 if cls.split == "base" else 1,
                               cls.train.shape[0], cls.eval.shape[0])
    for ds in store.datasets:
        for cls in ds.classes:
            out += cls.token.astype("<f4").tobytes()
    for ds in store.datasets:
        for cls in ds.classes:
            out += cls.train.astype("<f4").tobytes()
            out += cls.eval.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise StoreIOError(
                f"store truncated at byte {len(self.blob)}: "
                f"needed {n} bytes at offset {self.off}"
            )
        chunk = self.blob[self.off : self.off + n]
        self.off += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def name(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def f32_block(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def load_store(path) -> EmbeddingStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(8)
    if magic != STORE_MAGIC:
        raise StoreFormatError(f"bad store magic {magic!r}")
    version = r.u32()
    if version != STORE_VERSION:
        raise StoreFormatError(f"unsupported store version {version}")
    d = r.u32()
    m = r.u32()
    encoder_seed = r.u64()
    headers = []
    for _ in range(r.u32()):
        ds_name = r.name()
        cls_headers = []
        for _ in range(r.u32()):
            cname = r.name()
            split_flag = r.u8()
            if split_flag not in (0, 1):
                raise StoreFormatError(f"bad split flag {split_flag} for class {cname!r}")
            n_train = r.u32()
            n_eval = r.u32()
            cls_headers.append((cname, split_flag, n_train, n_eval))
        headers.append((ds_name, cls_headers))

    tokens = []
    for _, cls_headers in headers:
        for _ in cls_headers:
            tokens.append(r.f32_block(d))
    datasets = []
    ti = 0
    for ds_name, cls_headers in headers:
        classes = []
        for cname, split_flag, n_train, n_eval in cls_headers:
            train = r.f32_block(n_train * d).reshape(n_train, d)
            ev = r.f32_block(n_eval * d).reshape(n_eval, d)
            tok = tokens[ti]
            ti += 1
            for arr in (tok, train, ev):
                arr.setflags(write=False)
            classes.append(
                StoredClass(
                    name=cname,
                    split="base" if split_flag == 0 else "new",
                    token=tok,
                    train=train,
                    eval=ev,
                )
            )
        datasets.append(StoredDataset(name=ds_name, classes=tuple(classes)))
    if r.off != len(blob):
        raise StoreFormatError(f"{len(blob) - r.off} trailing bytes after payload")
    store = EmbeddingStore(d=d, m=m, encoder_seed=encoder_seed, datasets=tuple(datasets))
    store.validate()
    return store


def stores_equal(a: EmbeddingStore, b: EmbeddingStore) -> bool:
    """Bitwise equality of two stores (floats compared exactly)."""
    if (a.d, a.m, a.encoder_seed) != (b.d, b.m, b.encoder_seed):
        return False
    if len(a.datasets) != len(b.datasets):
        return False
    for da, db in zip(a.datasets, b.datasets):
        if da.name != db.name or len(da.classes) != len(db.classes):
            return False
        for ca, cb in zip(da.classes, db.classes):
            if ca.name != cb.name or ca.split != cb.split:
                return False
            for xa, xb in ((ca.token, cb.token), (ca.train, cb.train), (ca.eval, cb.eval)):
                if xa.shape != xb.shape or not np.array_equal(xa, xb):
                    return False
    return True
