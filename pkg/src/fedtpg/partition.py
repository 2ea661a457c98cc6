"""Base/new class splitting and disjoint few-shot client sharding."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .encoders import EmbeddingStore, StoredClass, StoredDataset
from .errors import ConfigError, DataError
from .rng import Stream, child_seed

log = logging.getLogger(__name__)


def split_base_new(store: EmbeddingStore) -> EmbeddingStore:
    """Re-flag every dataset: first ceil(C/2) classes base, the rest new."""
    datasets = []
    for ds in store.datasets:
        c = len(ds.classes)
        if c < 2:
            raise ConfigError(f"dataset {ds.name!r} has {c} classes; need >= 2 to split")
        n_base = (c + 1) // 2
        classes = tuple(
            StoredClass(
                name=cls.name,
                split="base" if j < n_base else "new",
                token=cls.token,
                train=cls.train,
                eval=cls.eval,
            )
            for j, cls in enumerate(ds.classes)
        )
        datasets.append(StoredDataset(name=ds.name, classes=classes))
    return EmbeddingStore(
        d=store.d, m=store.m, encoder_seed=store.encoder_seed, datasets=tuple(datasets)
    )


@dataclass(frozen=True)
class ClientShard:
    """One client's private training task: n disjoint base classes, few shots each."""

    client_id: int
    dataset_name: str
    class_ids: tuple[int, ...]  # global ids in store enumeration order
    class_names: tuple[str, ...]
    tokens: np.ndarray  # n x d
    images: np.ndarray  # (n * shots) x d
    labels: np.ndarray  # local class indices, len n * shots
    shots: int

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)

    @property
    def size(self) -> int:
        return self.labels.size


def build_shards(
    store: EmbeddingStore,
    n: int,
    shots: int,
    seed: int,
    allow_mixed_shards: bool = False,
) -> list[ClientShard]:
    """Chunk shuffled base classes into disjoint n-class clients.

    Chunking happens within each dataset; leftover classes are either pooled
    into mixed cross-dataset shards (`allow_mixed_shards`) or left unassigned
    (they still count toward base-class evaluation).
    """
    if n < 1:
        raise ConfigError(f"classes per client must be >= 1, got {n}")
    if shots < 1:
        raise ConfigError(f"shots must be >= 1, got {shots}")
    base_total = 0
    groups: list[tuple[str, list[int]]] = []  # (dataset name, base gids in shard order)
    leftovers: list[int] = []
    by_gid = store.all_classes()
    gid = 0
    for k, ds in enumerate(store.datasets):
        base_ids = [gid + j for j, cls in enumerate(ds.classes) if cls.split == "base"]
        gid += len(ds.classes)
        base_total += len(base_ids)
        order = Stream(child_seed(seed, "shuffle", k)).shuffled(base_ids)
        n_full = len(order) // n
        for c in range(n_full):
            groups.append((ds.name, order[c * n : (c + 1) * n]))
        leftovers.extend(order[n_full * n :])
    if base_total < n:
        raise ConfigError(f"{base_total} base classes cannot fill a client of n={n}")
    if allow_mixed_shards and len(leftovers) >= n:
        order = Stream(child_seed(seed, "shuffle-mixed")).shuffled(leftovers)
        n_full = len(order) // n
        for c in range(n_full):
            groups.append(("mixed", order[c * n : (c + 1) * n]))
        leftovers = order[n_full * n :]
    if leftovers:
        log.info(
            "%d base classes left unassigned (base=%d, n=%d)",
            len(leftovers), base_total, n,
        )

    shards = []
    for cid, (ds_name, ids) in enumerate(groups):
        tokens = np.stack([by_gid[g][2].token for g in ids])
        images = []
        labels = []
        for local, g in enumerate(ids):
            cls = by_gid[g][2]
            pool = cls.train.shape[0]
            if shots > pool:
                raise DataError(
                    f"class {cls.name!r} has {pool} train images, cannot draw {shots} shots"
                )
            pick = Stream(child_seed(seed, "shots", g)).sample_indices(pool, shots)
            images.append(cls.train[pick])
            labels.extend([local] * shots)
        shards.append(
            ClientShard(
                client_id=cid,
                dataset_name=ds_name,
                class_ids=tuple(ids),
                class_names=tuple(by_gid[g][2].name for g in ids),
                tokens=tokens,
                images=np.concatenate(images, axis=0),
                labels=np.asarray(labels, dtype=np.int64),
                shots=shots,
            )
        )
    return shards
