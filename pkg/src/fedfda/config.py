"""Experiment configuration: JSON schema, strict validation, defaults.

Unknown keys are rejected by name, every value is range-checked with a
deterministic message, and a parsed config serializes back to a dict that
reparses to an equal config (round-trip fixed point).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .adaptation import BetaMode
from .datagen import (
    ClientShard,
    SyntheticTaskSpec,
    build_federated_shards,
    generate_base_dataset,
    load_csv_dataset,
    shift_plan,
)
from .federation import DEFAULT_HIDDEN_DIMS, AlgorithmKind, FederationConfig
from .gaussian import CovOptions
from .streams import substream


class ConfigError(ValueError):
    """Configuration file or flag rejected; maps to exit code 1."""


@dataclass(frozen=True)
class ShiftBlock:
    enabled: bool = False
    num_shifted: int | None = None


@dataclass(frozen=True)
class DatasetBlock:
    synthetic: SyntheticTaskSpec | None = None
    csv_path: str | None = None
    alpha: float = 0.5
    num_clients: int = 20
    shift: ShiftBlock = ShiftBlock()
    scarcity: float = 1.0
    split_seed: int | None = None


@dataclass(frozen=True)
class FederationBlock:
    algorithm: AlgorithmKind = AlgorithmKind.PFEDFDA
    rounds: int = 200
    epochs: int = 5
    q: float = 0.3
    lr: float = 0.01
    momentum: float = 0.5
    weight_decay: float = 5e-4
    batch_size: int = 50


@dataclass(frozen=True)
class PfedfdaBlock:
    beta_mode: BetaMode = BetaMode.SINGLE
    k: int = 2
    epsilon: float = 1e-4
    min_corr_eig: float = 1e-6
    prior_floor: float = 1e-8


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetBlock
    federation: FederationBlock = FederationBlock()
    pfedfda: PfedfdaBlock = PfedfdaBlock()
    seed: int = 0
    out_dir: str = "out"
    eval_every: int = 10


def _check_keys(obj: dict, allowed: tuple[str, ...], context: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{context}: expected an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f'{context}: unknown key "{key}"')


def _number(obj: dict, key: str, default: float, context: str) -> float:
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{context}.{key}: expected a number")
    return float(value)


def _integer(obj: dict, key: str, default: int | None, context: str, nullable: bool = False) -> int | None:
    value = obj.get(key, default)
    if value is None:
        if nullable:
            return None
        raise ConfigError(f"{context}.{key}: expected an integer")
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{context}.{key}: expected an integer")
    return value


def _string(obj: dict, key: str, default: str | None, context: str) -> str | None:
    value = obj.get(key, default)
    if value is not None and not isinstance(value, str):
        raise ConfigError(f"{context}.{key}: expected a string")
    return value


def _boolean(obj: dict, key: str, default: bool, context: str) -> bool:
    value = obj.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{context}.{key}: expected true or false")
    return value


def _positive(name: str, value: float) -> float:
    if value <= 0:
        raise ConfigError(f"{name} must be > 0")
    return value


def _synthetic_block(obj: dict) -> SyntheticTaskSpec:
    ctx = "dataset.synthetic"
    _check_keys(obj, ("num_classes", "input_dim", "latent_dim", "samples_per_class", "separation", "lift_seed", "lift"), ctx)
    lift = _string(obj, "lift", "tanh", ctx)
    if lift not in ("tanh", "identity"):
        raise ConfigError(f'{ctx}.lift: must be "tanh" or "identity"')
    try:
        return SyntheticTaskSpec(
            num_classes=int(_positive(f"{ctx}.num_classes", _integer(obj, "num_classes", 5, ctx))),
            input_dim=int(_positive(f"{ctx}.input_dim", _integer(obj, "input_dim", 24, ctx))),
            latent_dim=int(_positive(f"{ctx}.latent_dim", _integer(obj, "latent_dim", 6, ctx))),
            samples_per_class=int(_positive(f"{ctx}.samples_per_class", _integer(obj, "samples_per_class", 800, ctx))),
            separation=_number(obj, "separation", 2.0, ctx),
            lift_seed=_integer(obj, "lift_seed", 7, ctx),
            lift=lift,
        )
    except ValueError as exc:
        raise ConfigError(f"{ctx}: {exc}") from None


def _dataset_block(obj: dict) -> DatasetBlock:
    ctx = "dataset"
    _check_keys(obj, ("synthetic", "csv_path", "alpha", "num_clients", "shift", "scarcity", "split_seed"), ctx)
    synthetic = obj.get("synthetic")
    csv_path = _string(obj, "csv_path", None, ctx)
    if synthetic is None and csv_path is None:
        raise ConfigError("dataset: needs either synthetic or csv_path")
    if synthetic is not None and csv_path is not None:
        raise ConfigError("dataset: synthetic and csv_path are mutually exclusive")
    shift_obj = obj.get("shift", {})
    _check_keys(shift_obj, ("enabled", "num_shifted"), "dataset.shift")
    shift = ShiftBlock(
        enabled=_boolean(shift_obj, "enabled", False, "dataset.shift"),
        num_shifted=_integer(shift_obj, "num_shifted", None, "dataset.shift", nullable=True),
    )
    alpha = _number(obj, "alpha", 0.5, ctx)
    if alpha <= 0:
        raise ConfigError("dataset.alpha must be > 0")
    num_clients = _integer(obj, "num_clients", 20, ctx)
    if num_clients < 1:
        raise ConfigError("dataset.num_clients must be >= 1")
    scarcity = _number(obj, "scarcity", 1.0, ctx)
    if not 0 < scarcity <= 1:
        raise ConfigError("dataset.scarcity out of (0,1]")
    if shift.num_shifted is not None and not 0 <= shift.num_shifted <= num_clients:
        raise ConfigError("dataset.shift.num_shifted out of [0, num_clients]")
    return DatasetBlock(
        synthetic=_synthetic_block(synthetic) if synthetic is not None else None,
        csv_path=csv_path,
        alpha=alpha,
        num_clients=num_clients,
        shift=shift,
        scarcity=scarcity,
        split_seed=_integer(obj, "split_seed", None, ctx, nullable=True),
    )


def _federation_block(obj: dict) -> FederationBlock:
    ctx = "federation"
    _check_keys(obj, ("algorithm", "rounds", "epochs", "q", "lr", "momentum", "weight_decay", "batch_size"), ctx)
    name = _string(obj, "algorithm", "pfedfda", ctx)
    try:
        algorithm = AlgorithmKind(name)
    except ValueError:
        raise ConfigError(f'federation.algorithm: unknown algorithm "{name}"') from None
    rounds = _integer(obj, "rounds", 200, ctx)
    if rounds < 0:
        raise ConfigError("federation.rounds must be >= 0")
    epochs = _integer(obj, "epochs", 5, ctx)
    if epochs < 0:
        raise ConfigError("federation.epochs must be >= 0")
    q = _number(obj, "q", 0.3, ctx)
    if not 0 < q <= 1:
        raise ConfigError("q out of (0,1]")
    lr = _number(obj, "lr", 0.01, ctx)
    if lr < 0:
        raise ConfigError("federation.lr must be >= 0")
    momentum = _number(obj, "momentum", 0.5, ctx)
    if not 0 <= momentum < 1:
        raise ConfigError("federation.momentum out of [0,1)")
    weight_decay = _number(obj, "weight_decay", 5e-4, ctx)
    if weight_decay < 0:
        raise ConfigError("federation.weight_decay must be >= 0")
    batch_size = _integer(obj, "batch_size", 50, ctx)
    if batch_size < 1:
        raise ConfigError("federation.batch_size must be >= 1")
    return FederationBlock(algorithm, rounds, epochs, q, lr, momentum, weight_decay, batch_size)


def _pfedfda_block(obj: dict) -> PfedfdaBlock:
    ctx = "pfedfda"
    _check_keys(obj, ("beta_mode", "k", "epsilon", "min_corr_eig", "prior_floor"), ctx)
    name = _string(obj, "beta_mode", "single", ctx)
    try:
        mode = BetaMode(name)
    except ValueError:
        raise ConfigError(f'pfedfda.beta_mode: unknown mode "{name}"') from None
    k = _integer(obj, "k", 2, ctx)
    if k < 2:
        raise ConfigError("pfedfda.k must be >= 2")
    return PfedfdaBlock(
        beta_mode=mode,
        k=k,
        epsilon=_positive("pfedfda.epsilon", _number(obj, "epsilon", 1e-4, ctx)),
        min_corr_eig=_positive("pfedfda.min_corr_eig", _number(obj, "min_corr_eig", 1e-6, ctx)),
        prior_floor=_positive("pfedfda.prior_floor", _number(obj, "prior_floor", 1e-8, ctx)),
    )


def config_from_dict(obj: dict) -> ExperimentConfig:
    _check_keys(obj, ("dataset", "federation", "pfedfda", "seed", "out_dir", "eval_every"), "config")
    if "dataset" not in obj:
        raise ConfigError('config: missing required key "dataset"')
    seed = _integer(obj, "seed", 0, "config")
    if seed < 0:
        raise ConfigError("config.seed must be >= 0")
    eval_every = _integer(obj, "eval_every", 10, "config")
    if eval_every < 1:
        raise ConfigError("config.eval_every must be >= 1")
    return ExperimentConfig(
        dataset=_dataset_block(obj["dataset"]),
        federation=_federation_block(obj.get("federation", {})),
        pfedfda=_pfedfda_block(obj.get("pfedfda", {})),
        seed=seed,
        out_dir=_string(obj, "out_dir", "out", "config"),
        eval_every=eval_every,
    )


def parse_config(path: str) -> ExperimentConfig:
    """Read and validate a JSON experiment config, filling defaults."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(obj)


def serialize_config(cfg: ExperimentConfig) -> dict:
    """Dict form with every field explicit; config_from_dict of it is a fixed point."""
    ds = cfg.dataset
    out: dict = {
        "dataset": {
            "alpha": ds.alpha,
            "num_clients": ds.num_clients,
            "shift": {"enabled": ds.shift.enabled, "num_shifted": ds.shift.num_shifted},
            "scarcity": ds.scarcity,
            "split_seed": ds.split_seed,
        },
        "federation": {
            "algorithm": cfg.federation.algorithm.value,
            "rounds": cfg.federation.rounds,
            "epochs": cfg.federation.epochs,
            "q": cfg.federation.q,
            "lr": cfg.federation.lr,
            "momentum": cfg.federation.momentum,
            "weight_decay": cfg.federation.weight_decay,
            "batch_size": cfg.federation.batch_size,
        },
        "pfedfda": {
            "beta_mode": cfg.pfedfda.beta_mode.value,
            "k": cfg.pfedfda.k,
            "epsilon": cfg.pfedfda.epsilon,
            "min_corr_eig": cfg.pfedfda.min_corr_eig,
            "prior_floor": cfg.pfedfda.prior_floor,
        },
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
        "eval_every": cfg.eval_every,
    }
    if ds.synthetic is not None:
        s = ds.synthetic
        out["dataset"]["synthetic"] = {
            "num_classes": s.num_classes,
            "input_dim": s.input_dim,
            "latent_dim": s.latent_dim,
            "samples_per_class": s.samples_per_class,
            "separation": s.separation,
            "lift_seed": s.lift_seed,
            "lift": s.lift,
        }
    else:
        out["dataset"]["csv_path"] = ds.csv_path
    return out


def realize_dataset(cfg: ExperimentConfig) -> tuple[list[ClientShard], int, int]:
    """Materialize client shards; returns (shards, num_classes, input_dim)."""
    ds = cfg.dataset
    split_seed = ds.split_seed if ds.split_seed is not None else cfg.seed
    if ds.synthetic is not None:
        x, y = generate_base_dataset(ds.synthetic, substream(split_seed, "base-data"))
        num_classes = ds.synthetic.num_classes
    else:
        x, y = load_csv_dataset(ds.csv_path)
        num_classes = int(y.max()) + 1
    corruptions = shift_plan(ds.num_clients, ds.shift.num_shifted) if ds.shift.enabled else {}
    shards = build_federated_shards(x, y, ds.num_clients, ds.alpha, corruptions, ds.scarcity, split_seed)
    return shards, num_classes, x.shape[1]


def to_federation_config(cfg: ExperimentConfig, num_classes: int, input_dim: int, threads: int = 1) -> FederationConfig:
    fed = cfg.federation
    pf = cfg.pfedfda
    return FederationConfig(
        algorithm=fed.algorithm,
        num_clients=cfg.dataset.num_clients,
        num_classes=num_classes,
        input_dim=input_dim,
        rounds=fed.rounds,
        epochs=fed.epochs,
        q=fed.q,
        lr=fed.lr,
        momentum=fed.momentum,
        weight_decay=fed.weight_decay,
        batch_size=fed.batch_size,
        beta_mode=pf.beta_mode,
        k_folds=pf.k,
        cov_opts=CovOptions(pf.epsilon, pf.min_corr_eig),
        prior_floor=pf.prior_floor,
        eval_every=cfg.eval_every,
        hidden_dims=DEFAULT_HIDDEN_DIMS,
        threads=threads,
    )
