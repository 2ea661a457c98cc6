"""Round-based federated training: sampling, local steps, uniform aggregation.

One communication round sends the global snapshot to a sampled client subset,
runs K local SGD-with-momentum steps per client (fresh velocity each round),
and replaces the global snapshot with the uniform mean of the returned ones.
Every stochastic choice is keyed by (seed, purpose, client, round), so client
subsets of different sizes never perturb each other's randomness, and
parallel execution of a round equals sequential execution bitwise.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .encoders import EmbeddingStore, handcrafted_prompts
from .errors import ConfigError, ParameterError, ShapeError
from .evals import MetricsRecord, eval_protocol, eval_protocol_multi
from .models import (
    FixedPromptParams,
    ModelConfig,
    PredictConfig,
    flatten_fixed,
    flatten_gen,
    init_fixed_prompt,
    init_prompt_gen,
    loss_and_grad,
    unflatten_fixed,
    unflatten_gen,
)
from .partition import ClientShard
from .rng import Stream, child_seed
from .snapshot import ModelSnapshot, sgd_momentum_step

METHODS = ("fedtpg", "fedcoop", "coop_local", "fedkgcoop", "zeroshot")
AGGREGATED_METHODS = ("fedtpg", "fedcoop", "fedkgcoop")


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 500
    local_steps: int = 1
    participation_rate: float = 1.0
    lr0: float = 0.003
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 200
    method: str = "fedtpg"
    seed: int = 0
    eval_every: int = 25
    clients: tuple[int, ...] | None = None

    def validate(self) -> None:
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.local_steps < 1:
            raise ConfigError(f"local_steps must be >= 1, got {self.local_steps}")
        if not 0.0 < self.participation_rate <= 1.0:
            raise ConfigError(
                f"participation_rate must be in (0, 1], got {self.participation_rate}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 < 0.0:
            raise ConfigError(f"lr0 must be >= 0, got {self.lr0}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")


def sample_clients(rng: Stream, client_ids: list[int], rate: float) -> list[int]:
    """Uniform subset of round(rate * N) clients (at least 1), original order."""
    if not client_ids:
        raise ConfigError("client list is empty")
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"participation rate must be in (0, 1], got {rate}")
    n = len(client_ids)
    size = max(1, int(math.floor(rate * n + 0.5)))
    picked = sorted(rng.sample_indices(n, size))
    return [client_ids[i] for i in picked]


def cosine_lr(r: int, rounds: int, lr0: float) -> float:
    """Cosine annealing: lr0 * (1 + cos(pi * r / R)) / 2."""
    if not 0 <= r < rounds:
        raise ParameterError(f"round {r} outside [0, {rounds})")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * r / rounds))


@dataclass(frozen=True)
class TrainContext:
    """Everything a local step needs besides the incoming snapshot."""

    method: str
    model: ModelConfig
    predict: PredictConfig
    enc: object
    p0: np.ndarray
    momentum: float
    weight_decay: float
    batch_size: int

    def unflatten(self, snap: ModelSnapshot):
        if self.method == "fedtpg":
            return unflatten_gen(snap, self.model.m, self.model.d, self.model.heads)
        return unflatten_fixed(snap, self.model.m, self.model.d)

    def loss_and_grad(self, params, images, labels, tokens):
        if self.method == "fedtpg":
            return loss_and_grad(
                "fedtpg", params, images, labels, tokens, self.enc, self.predict
            )
        kg = self.model.kg_lambda if self.method == "fedkgcoop" else 0.0
        return loss_and_grad(
            "fixed", params, images, labels, tokens, self.enc, self.predict,
            kg_lambda=kg, kg_reference=self.p0 if kg > 0.0 else None,
        )


def local_train(
    theta: ModelSnapshot,
    shard: ClientShard,
    lr: float,
    steps: int,
    ctx: TrainContext,
    rng: Stream,
) -> tuple[ModelSnapshot, float]:
    """K local SGD-with-momentum steps on batches from one shard.

    Uses the full shard when it fits the batch size, otherwise a fresh
    uniform sample without replacement per step.  The velocity buffer starts
    at zero (optimizer state never crosses rounds).  Returns the updated
    snapshot and the mean pre-update batch loss.
    """
    if shard.size < 1:
        raise ConfigError(f"client {shard.client_id} has no training examples")
    velocity = np.zeros(len(theta))
    losses = []
    for _ in range(steps):
        if shard.size <= ctx.batch_size:
            images, labels = shard.images, shard.labels
        else:
            pick = rng.sample_indices(shard.size, ctx.batch_size)
            images, labels = shard.images[pick], shard.labels[pick]
        params = ctx.unflatten(theta)
        loss, grads = ctx.loss_and_grad(params, images, labels, shard.tokens)
        theta, velocity = sgd_momentum_step(
            theta, grads, velocity, lr, ctx.momentum, ctx.weight_decay
        )
        losses.append(loss)
    return theta, float(np.mean(losses))


def aggregate(updates: list[tuple[int, ModelSnapshot]]) -> ModelSnapshot:
    """Uniform coordinate-wise mean, reduced in client-id order for determinism.

    One update passes through untouched and two average to the exactly
    rounded midpoint; larger sets use baseline-shifted summation,
    ref + mean(theta_i - ref), which is bitwise permutation-invariant and
    exactly idempotent on identical updates.
    """
    if not updates:
        raise ConfigError("nothing to aggregate")
    length = len(updates[0][1])
    method = updates[0][1].method
    for cid, snap in updates:
        if len(snap) != length:
            raise ShapeError(
                f"client {cid} update has {len(snap)} values, expected {length}"
            )
    ordered = sorted(updates, key=lambda kv: kv[0])
    if len(ordered) == 1:
        return ordered[0][1]
    if len(ordered) == 2:
        return ModelSnapshot(method, (ordered[0][1].values + ordered[1][1].values) / 2.0)
    ref = ordered[0][1].values
    total = np.zeros(length)
    for _, snap in ordered:
        total = total + (snap.values - ref)
    return ModelSnapshot(method, ref + total / len(ordered))


def _max_workers() -> int:
    raw = os.environ.get("FTPG_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def init_snapshot(method: str, model: ModelConfig, seed: int,
                  p0: np.ndarray | None = None) -> ModelSnapshot:
    if method == "fedtpg":
        return flatten_gen(init_prompt_gen(model.m, model.d, model.heads, seed))
    if method == "zeroshot":
        assert p0 is not None
        return flatten_fixed(FixedPromptParams(p=p0))
    return flatten_fixed(init_fixed_prompt(model.m, model.d, seed))


def run_federation(
    fed: FederationConfig,
    store: EmbeddingStore,
    shards: list[ClientShard],
    model: ModelConfig,
    predict: PredictConfig,
    hm_terms: int = 3,
):
    """Execute the full training loop; returns (final snapshot(s), metrics).

    For aggregated methods the first element is the global ModelSnapshot; for
    coop_local it is the list of per-client snapshots; zeroshot returns the
    handcrafted prompt block as a fixed snapshot.
    """
    fed.validate()
    if model.d != store.d:
        raise ConfigError(f"model d={model.d} but store d={store.d}")
    if model.m != store.m:
        raise ConfigError(f"model m={model.m} but store m={store.m}")
    if not shards:
        raise ConfigError("no client shards")
    enc = store.encoder()
    p0 = handcrafted_prompts(enc)
    ctx = TrainContext(
        method=fed.method,
        model=model,
        predict=predict,
        enc=enc,
        p0=p0,
        momentum=fed.momentum,
        weight_decay=fed.weight_decay,
        batch_size=fed.batch_size,
    )
    client_ids = list(fed.clients) if fed.clients is not None else [s.client_id for s in shards]
    by_id = {s.client_id: s for s in shards}
    for cid in client_ids:
        if cid not in by_id:
            raise ConfigError(f"configured client {cid} has no shard")
    if fed.participation_rate * len(client_ids) < 1.0 - 1e-12:
        raise ConfigError(
            f"participation {fed.participation_rate} over {len(client_ids)} clients "
            "selects no one"
        )

    if fed.method == "zeroshot":
        snap = init_snapshot("zeroshot", model, fed.seed, p0)
        params = FixedPromptParams(p=p0)
        loss = float(
            np.mean(
                [
                    ctx.loss_and_grad(params, s.images, s.labels, s.tokens)[0]
                    for s in shards
                ]
            )
        )
        local, base, new, hm = eval_protocol(
            "zeroshot", params, store, shards, enc, predict, hm_terms
        )
        return snap, [
            MetricsRecord(0, "zeroshot", fed.seed, loss, local, base, new, hm)
        ]

    records: list[MetricsRecord] = []

    def should_eval(r: int) -> bool:
        return (r + 1) % fed.eval_every == 0 or r == fed.rounds - 1

    if fed.method == "coop_local":
        thetas = {
            cid: init_snapshot("coop_local", model, child_seed(fed.seed, "init", cid))
            for cid in client_ids
        }
        for r in range(fed.rounds):
            lr = cosine_lr(r, fed.rounds, fed.lr0)
            round_losses = []
            for cid in client_ids:
                rng = Stream(child_seed(fed.seed, "client", cid, r))
                thetas[cid], loss = local_train(
                    thetas[cid], by_id[cid], lr, fed.local_steps, ctx, rng
                )
                round_losses.append(loss)
            if should_eval(r):
                client_params = [ctx.unflatten(thetas[s.client_id]) for s in shards]
                local, base, new, hm = eval_protocol_multi(
                    "coop_local", client_params, None, store, shards, enc, predict, hm_terms
                )
                records.append(
                    MetricsRecord(
                        r + 1, "coop_local", fed.seed,
                        float(np.mean(round_losses)), local, base, new, hm,
                    )
                )
        return [thetas[cid] for cid in client_ids], records

    theta = init_snapshot(fed.method, model, child_seed(fed.seed, "init"))
    workers = _max_workers()
    for r in range(fed.rounds):
        lr = cosine_lr(r, fed.rounds, fed.lr0)
        sampled = sample_clients(
            Stream(child_seed(fed.seed, "sample", r)), client_ids, fed.participation_rate
        )

        def train_one(cid: int, _theta=theta, _lr=lr, _r=r):
            rng = Stream(child_seed(fed.seed, "client", cid, _r))
            snap, loss = local_train(_theta, by_id[cid], _lr, fed.local_steps, ctx, rng)
            return cid, snap, loss

        if workers > 1 and len(sampled) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(train_one, sampled))
        else:
            results = [train_one(cid) for cid in sampled]
        results.sort(key=lambda t: t[0])
        theta = aggregate([(cid, snap) for cid, snap, _ in results])
        if should_eval(r):
            params = ctx.unflatten(theta)
            local, base, new, hm = eval_protocol(
                fed.method, params, store, shards, enc, predict, hm_terms
            )
            records.append(
                MetricsRecord(
                    r + 1, fed.method, fed.seed,
                    float(np.mean([loss for _, _, loss in results])),
                    local, base, new, hm,
                )
            )
    return theta, records
