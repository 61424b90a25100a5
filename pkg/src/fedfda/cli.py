"""Command-line experiment runner.

Subcommands:
  run                federated experiment from a JSON config; writes
                     rounds.csv and clients.csv
  theory             Monte Carlo sweep of the estimation-error bound;
                     writes theory.csv
  partition-preview  Dirichlet label-partition counts; writes partition.csv

Exit codes: 0 success, 1 configuration error, 2 runtime error. The env var
FEDFDA_THREADS caps how many clients update concurrently within a round
(results are bit-identical for any value).
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, parse_config, realize_dataset, to_federation_config
from .datagen import dirichlet_partition
from .federation import AlgorithmKind, FederationOutcome, run_federation
from .streams import substream
from .theory import TheoremScenario, sweep_beta


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _threads_from_env() -> int:
    raw = os.environ.get("FEDFDA_THREADS", "1")
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"FEDFDA_THREADS must be an integer, got {raw!r}") from None
    if threads < 1:
        raise ConfigError("FEDFDA_THREADS must be >= 1")
    return threads


def _write_run_outputs(cfg: ExperimentConfig, outcome: FederationOutcome, shards, out_dir: Path) -> None:
    is_pfedfda = cfg.federation.algorithm is AlgorithmKind.PFEDFDA
    round_rows = []
    for rep in outcome.reports:
        round_rows.append(
            [
                str(rep.round_idx),
                _fmt(rep.mean_acc),
                _fmt(rep.std_acc),
                _fmt(rep.mean_beta) if rep.mean_beta is not None else "",
                str(len(rep.active)),
            ]
        )
    _write_csv(out_dir / "rounds.csv", ["round", "mean_acc", "std_acc", "mean_beta", "active_clients"], round_rows)

    client_rows = []
    for i, shard in enumerate(shards):
        corruption = shard.corruption
        beta = outcome.state.clients[i].beta.beta_mu if is_pfedfda else None
        client_rows.append(
            [
                str(i),
                str(shard.n_train),
                corruption.kind if corruption else "",
                str(corruption.severity) if corruption else "",
                _fmt(beta) if beta is not None else "",
                _fmt(outcome.final_accuracy[i]),
            ]
        )
    _write_csv(
        out_dir / "clients.csv",
        ["client_id", "n_train", "corruption_kind", "severity", "beta", "test_acc"],
        client_rows,
    )


def cmd_run(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("config.seed must be >= 0")
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    shards, num_classes, input_dim = realize_dataset(cfg)
    fed_cfg = to_federation_config(cfg, num_classes, input_dim, threads=_threads_from_env())
    outcome = run_federation(shards, fed_cfg, cfg.seed)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_outputs(cfg, outcome, shards, out_dir)
    return 0


def cmd_theory(args: argparse.Namespace) -> int:
    if args.seed < 0:
        raise ConfigError("seed must be >= 0")
    counts = []
    for token in args.counts.split(","):
        token = token.strip()
        try:
            counts.append(int(token))
        except ValueError:
            raise ConfigError(f"counts: not an integer: {token!r}") from None
    if any(c < 1 for c in counts):
        raise ConfigError("counts must all be >= 1")
    if not 0 <= args.client < len(counts):
        raise ConfigError("client index out of range")
    if args.beta_points < 2:
        raise ConfigError("beta-points must be >= 2")
    if args.trials < 1:
        raise ConfigError("trials must be >= 1")
    num_clients = len(counts)
    dim = args.dim
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    means = args.bias_scale * substream(args.seed, "theory-means").normal(size=(num_clients, dim))
    covs = np.broadcast_to(np.eye(dim), (num_clients, dim, dim)).copy()
    try:
        scenario = TheoremScenario(means, covs, np.array(counts), delta=args.delta, c=args.c)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    grid = np.linspace(0.0, 1.0, args.beta_points)
    mean_errors, bounds, coverages = sweep_beta(
        scenario, args.client, args.trials, grid, substream(args.seed, "theory-draws")
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [
        [_fmt(beta), _fmt(err), _fmt(bound), _fmt(cov)]
        for beta, err, bound, cov in zip(grid, mean_errors, bounds, coverages)
    ]
    _write_csv(out_dir / "theory.csv", ["beta", "mc_mean_error", "bound", "coverage"], rows)
    return 0


def cmd_partition_preview(args: argparse.Namespace) -> int:
    if args.seed < 0:
        raise ConfigError("seed must be >= 0")
    if args.classes < 1 or args.samples_per_class < 1 or args.clients < 1:
        raise ConfigError("classes, samples-per-class, and clients must be >= 1")
    if args.alpha <= 0:
        raise ConfigError("alpha must be > 0")
    labels = np.repeat(np.arange(args.classes), args.samples_per_class)
    parts = dirichlet_partition(labels, args.clients, args.alpha, substream(args.seed, "partition"))
    rows = []
    for client_id, part in enumerate(parts):
        counts = np.bincount(labels[part], minlength=args.classes)
        for class_id in range(args.classes):
            rows.append([str(client_id), str(class_id), str(int(counts[class_id]))])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "partition.csv", ["client_id", "class_id", "count"], rows)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedfda", description=__doc__, exit_on_error=False)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a federated experiment", exit_on_error=False)
    run.add_argument("--config", required=True, help="path to JSON experiment config")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="override the config output directory")
    run.set_defaults(func=cmd_run)

    theory = sub.add_parser("theory", help="Monte Carlo bound validation sweep", exit_on_error=False)
    theory.add_argument("--dim", type=int, default=4)
    theory.add_argument("--counts", default="10,20,40,80,160", help="comma-separated per-client sample counts")
    theory.add_argument("--client", type=int, default=0, help="client index the bound targets")
    theory.add_argument("--bias-scale", type=float, default=1.0, help="scale of the true client-mean spread")
    theory.add_argument("--trials", type=int, default=2000)
    theory.add_argument("--delta", type=float, default=0.1)
    theory.add_argument("--c", type=float, default=0.125, help="concentration constant")
    theory.add_argument("--beta-points", type=int, default=21)
    theory.add_argument("--seed", type=int, default=0)
    theory.add_argument("--out", default="out")
    theory.set_defaults(func=cmd_theory)

    preview = sub.add_parser("partition-preview", help="Dirichlet partition counts", exit_on_error=False)
    preview.add_argument("--classes", type=int, default=5)
    preview.add_argument("--samples-per-class", type=int, default=1000)
    preview.add_argument("--clients", type=int, default=20)
    preview.add_argument("--alpha", type=float, default=0.5)
    preview.add_argument("--seed", type=int, default=0)
    preview.add_argument("--out", default="out")
    preview.set_defaults(func=cmd_partition_preview)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except argparse.ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
