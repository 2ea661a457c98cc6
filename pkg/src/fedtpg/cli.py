"""Command-line experiment runner.

Subcommands: gen-data, train, eval, export-pca, sweep.  Every run directory
is self-describing: a manifest.json with the fully-resolved configuration,
the store it ran against, metrics CSV, and the final snapshot(s).  Identical
config + seed produce byte-identical artifacts.

Exit codes: 0 success, 1 configuration error, 2 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import __version__
from .config import ExperimentConfig, config_from_dict, load_config
from .encoders import handcrafted_prompts, load_store, save_store, synth_world
from .errors import FedTPGError, StoreFormatError, StoreIOError
from .evals import (
    MetricsRecord,
    eval_protocol,
    eval_protocol_multi,
    metrics_csv,
    pca_project,
    prompt_point_rows,
    write_metrics_csv,
    write_pca_csv,
)
from .fedcore import run_federation
from .models import FixedPromptParams, unflatten_fixed, unflatten_gen
from .partition import build_shards
from .rng import child_seed
from .snapshot import load_snapshot, save_snapshot

log = logging.getLogger("fedtpg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # config errors exit 1, not argparse's default 2
        raise FedTPGError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=("desk", "paper"), default=None,
                   help="named configuration profile")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="dotted config override, e.g. fed.rounds=100")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedtpg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[], help="synthesize and write a store")
    _add_config_flags(g)
    g.add_argument("--out-dir", required=True)

    t = sub.add_parser("train", help="run one training experiment")
    _add_config_flags(t)
    t.add_argument("--method", default=None, help="override the configured method")
    t.add_argument("--store", default=None, help="existing store file (else synthesized)")
    t.add_argument("--out-dir", required=True)

    e = sub.add_parser("eval", help="re-evaluate a finished run")
    e.add_argument("--run-dir", required=True)
    e.add_argument("--store", default=None, help="evaluate against a different store")
    e.add_argument("--append-to", default=None, help="append the metrics row to this CSV")

    x = sub.add_parser("export-pca", help="project generated prompt vectors to 3-D")
    x.add_argument("--run-dir", required=True)
    x.add_argument("--out", default=None, help="output CSV (default <run-dir>/pca.csv)")

    s = sub.add_parser("sweep", help="grid of runs over n / shots / participation")
    _add_config_flags(s)
    s.add_argument("--method", default=None)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--n", default=None, help="comma list of classes-per-client values")
    s.add_argument("--shots", default=None, help="comma list of shot counts")
    s.add_argument("--participation", default=None, help="comma list of rates")
    return p


def _resolve_config(args, method_override: str | None = None) -> ExperimentConfig:
    cfg = load_config(args.preset, args.config, args.overrides)
    if method_override:
        cfg = dataclasses.replace(cfg, method=method_override).validate()
    return cfg


def _write_manifest(out_dir: str, command: str, cfg: ExperimentConfig, store_ref: str) -> None:
    manifest = {
        "tool": "fedtpg",
        "version": __version__,
        "command": command,
        "store": store_ref,
        "config": cfg.to_dict(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_run_config(run_dir: str) -> tuple[ExperimentConfig, dict]:
    path = os.path.join(run_dir, "manifest.json")
    with open(path) as fh:
        manifest = json.load(fh)
    raw = manifest["config"]
    raw["synth"] = {k: v for k, v in raw["synth"].items()}
    cfg = config_from_dict(raw)
    return cfg, manifest


def _prepare_world(cfg: ExperimentConfig, store_path: str | None, out_dir: str):
    """Load or synthesize the store; returns (store, manifest store reference)."""
    if store_path is not None:
        return load_store(store_path), os.path.abspath(store_path)
    store = synth_world(cfg.synth)
    dest = os.path.join(out_dir, "store.ftpgemb")
    save_store(store, dest)
    return store, "store.ftpgemb"


def _shards_for(cfg: ExperimentConfig, store):
    shots = cfg.shard_shots if cfg.shard_shots is not None else cfg.synth.train_shots
    return build_shards(
        store,
        cfg.n_classes_per_client,
        shots,
        child_seed(cfg.fed.seed, "partition"),
        allow_mixed_shards=cfg.allow_mixed_shards,
    )


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    store = synth_world(cfg.synth)
    save_store(store, os.path.join(args.out_dir, "store.ftpgemb"))
    _write_manifest(args.out_dir, "gen-data", cfg, "store.ftpgemb")
    n = store.num_classes()
    log.info("wrote store: %d datasets, %d classes, d=%d", len(store.datasets), n, store.d)
    return 0


def _train_into(cfg: ExperimentConfig, store, store_ref: str, out_dir: str) -> None:
    shards = _shards_for(cfg, store)
    result, records = run_federation(cfg.fed, store, shards, cfg.model, cfg.predict,
                                     hm_terms=cfg.hm_terms)
    write_metrics_csv(records, os.path.join(out_dir, "metrics.csv"))
    if cfg.method == "coop_local":
        snap_dir = os.path.join(out_dir, "models")
        os.makedirs(snap_dir, exist_ok=True)
        for shard, snap in zip(shards, result):
            save_snapshot(snap, os.path.join(snap_dir, f"client_{shard.client_id:04d}.snap"))
    else:
        save_snapshot(result, os.path.join(out_dir, "model.snap"))
    _write_manifest(out_dir, "train", cfg, store_ref)
    if records:
        last = records[-1]
        log.info(
            "final: local=%.4f base=%.4f new=%.4f hm=%.4f",
            last.local_acc, last.base_acc, last.new_acc, last.hm,
        )


def cmd_train(args) -> int:
    cfg = _resolve_config(args, args.method)
    os.makedirs(args.out_dir, exist_ok=True)
    store, store_ref = _prepare_world(cfg, args.store, args.out_dir)
    _train_into(cfg, store, store_ref, args.out_dir)
    return 0


def _load_run_model(cfg: ExperimentConfig, run_dir: str, shards):
    if cfg.method == "coop_local":
        snaps = [
            load_snapshot(os.path.join(run_dir, "models", f"client_{s.client_id:04d}.snap"))
            for s in shards
        ]
        return [unflatten_fixed(sn, cfg.model.m, cfg.model.d) for sn in snaps]
    snap = load_snapshot(os.path.join(run_dir, "model.snap"))
    if cfg.method == "fedtpg":
        return unflatten_gen(snap, cfg.model.m, cfg.model.d, cfg.model.heads)
    return unflatten_fixed(snap, cfg.model.m, cfg.model.d)


def cmd_eval(args) -> int:
    cfg, manifest = _load_run_config(args.run_dir)
    store_ref = args.store if args.store is not None else manifest["store"]
    store_path = (
        store_ref
        if os.path.isabs(store_ref)
        else os.path.join(args.run_dir, store_ref)
    )
    store = load_store(store_path)
    enc = store.encoder()
    shards = _shards_for(cfg, store)
    model = _load_run_model(cfg, args.run_dir, shards)
    if cfg.method == "coop_local":
        local, base, new, hm = eval_protocol_multi(
            cfg.method, model, None, store, shards, enc, cfg.predict, cfg.hm_terms
        )
    else:
        local, base, new, hm = eval_protocol(
            cfg.method, model, store, shards, enc, cfg.predict, cfg.hm_terms
        )
    rec = MetricsRecord(
        cfg.fed.rounds if cfg.method != "zeroshot" else 0,
        cfg.method, cfg.fed.seed, float("nan"), local, base, new, hm,
    )
    text = metrics_csv([rec])
    sys.stdout.write(text)
    if args.append_to:
        exists = os.path.exists(args.append_to)
        with open(args.append_to, "a", newline="\n") as fh:
            fh.write(text if not exists else text.splitlines()[1] + "\n")
    return 0


def cmd_export_pca(args) -> int:
    cfg, manifest = _load_run_config(args.run_dir)
    store_ref = manifest["store"]
    store_path = (
        store_ref
        if os.path.isabs(store_ref)
        else os.path.join(args.run_dir, store_ref)
    )
    store = load_store(store_path)
    enc = store.encoder()
    shards = _shards_for(cfg, store)
    model = _load_run_model(cfg, args.run_dir, shards)
    if cfg.method == "zeroshot":
        model = FixedPromptParams(p=handcrafted_prompts(enc))
    labels, points = prompt_point_rows(cfg.method, model, store, shards, enc)
    proj = pca_project(points, k=3)
    out = args.out or os.path.join(args.run_dir, "pca.csv")
    write_pca_csv(labels, proj.coords, out)
    log.info("wrote %s (%d points, explained=%s)", out, len(labels),
             [round(float(s), 4) for s in proj.explained])
    return 0


def _parse_values(text: str, kind):
    try:
        return [kind(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise FedTPGError(f"bad sweep values {text!r}: {exc}") from exc


def cmd_sweep(args) -> int:
    base_cfg = _resolve_config(args, args.method)
    os.makedirs(args.out_dir, exist_ok=True)
    ns = _parse_values(args.n, int) if args.n else [base_cfg.n_classes_per_client]
    shot_pool = base_cfg.synth.train_shots
    shots = _parse_values(args.shots, int) if args.shots else [None]
    rates = (
        _parse_values(args.participation, float)
        if args.participation
        else [base_cfg.fed.participation_rate]
    )
    store, store_ref = _prepare_world(base_cfg, None, args.out_dir)
    if store_ref == "store.ftpgemb":
        store_ref = os.path.abspath(os.path.join(args.out_dir, store_ref))
    count = 0
    for n in ns:
        for shot in shots:
            if shot is not None and shot > shot_pool:
                raise FedTPGError(
                    f"sweep shots={shot} exceeds the world's train pool ({shot_pool})"
                )
            for rate in rates:
                cell = dataclasses.replace(
                    base_cfg,
                    n_classes_per_client=n,
                    shard_shots=shot,
                    fed=dataclasses.replace(base_cfg.fed, participation_rate=rate),
                ).validate()
                name = f"n{n}_shots{shot if shot is not None else shot_pool}_part{rate:g}"
                cell_dir = os.path.join(args.out_dir, name)
                os.makedirs(cell_dir, exist_ok=True)
                _train_into(cell, store, store_ref, cell_dir)
                count += 1
    log.info("sweep finished: %d runs under %s", count, args.out_dir)
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-pca": cmd_export_pca,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (StoreIOError, StoreFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FedTPGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
