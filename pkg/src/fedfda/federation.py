"""Federated round loop: broadcast, parallel client updates, weighted aggregation.

Implements the personalized generative-classifier method (clients train the
shared extractor under a global-Gaussian classifier with local priors, then
estimate and interpolate their own feature distribution) plus the Local,
FedAvg, and FedAvgFT baselines.

Determinism contract: every stochastic call draws from a stream keyed by
(master seed, purpose, round, client), client updates never touch shared
mutable state, and aggregation consumes results in ascending client-id
order. Reports are therefore bit-identical for any worker-thread count.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adaptation import (
    BetaMode,
    BetaResult,
    interpolate,
    kfold_split,
    local_estimate,
    optimize_beta,
    prepare_fold_stats,
)
from .classifier import build_classifier, predict_batch
from .datagen import ClientShard
from .gaussian import ClassGaussian, CovOptions, estimate_priors, regularize_covariance
from .mlp import (
    LinearHead,
    MlpParams,
    ParamBlocks,
    TrainHyper,
    forward,
    init_linear_head,
    init_mlp,
    train_local,
    train_local_joint,
)
from .streams import substream

DEFAULT_HIDDEN_DIMS = (32, 16)


class AlgorithmKind(enum.Enum):
    PFEDFDA = "pfedfda"
    FEDAVG = "fedavg"
    FEDAVG_FT = "fedavg_ft"
    LOCAL_ONLY = "local_only"


@dataclass(frozen=True)
class FederationConfig:
    algorithm: AlgorithmKind
    num_clients: int
    num_classes: int
    input_dim: int
    rounds: int = 200
    epochs: int = 5
    q: float = 0.3
    lr: float = 0.01
    momentum: float = 0.5
    weight_decay: float = 5e-4
    batch_size: int = 50
    beta_mode: BetaMode = BetaMode.SINGLE
    k_folds: int = 2
    cov_opts: CovOptions = CovOptions()
    prior_floor: float = 1e-8
    eval_every: int = 10
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN_DIMS
    threads: int = 1

    def __post_init__(self) -> None:
        if self.num_clients < 1 or self.num_classes < 1 or self.input_dim < 1:
            raise ValueError("num_clients, num_classes, input_dim must be positive")
        if self.rounds < 0:
            raise ValueError("rounds must be nonnegative")
        if not 0 < self.q <= 1:
            raise ValueError("q out of (0,1]")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if not self.hidden_dims:
            raise ValueError("hidden_dims must be non-empty")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def hyper(self) -> TrainHyper:
        return TrainHyper(self.lr, self.momentum, self.weight_decay, self.batch_size, self.epochs)

    @property
    def feature_dim(self) -> int:
        return self.hidden_dims[-1]

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims]


@dataclass(eq=False)
class ClientState:
    """Per-client persisted state across rounds."""

    gaussian: ClassGaussian
    beta: BetaResult
    velocity: ParamBlocks | None = None
    params: MlpParams | None = None  # local_only model
    head: LinearHead | None = None  # local_only head
    head_velocity: tuple[np.ndarray, np.ndarray] | None = None


@dataclass(eq=False)
class FederationState:
    phi: MlpParams
    gaussian: ClassGaussian
    round: int
    clients: list[ClientState]
    head: LinearHead | None = None  # global discriminative head (FedAvg family)


@dataclass(frozen=True)
class RoundReport:
    round_idx: int  # rounds completed when the evaluation ran
    active: tuple[int, ...]
    mean_acc: float
    std_acc: float
    mean_beta: float | None


@dataclass(eq=False)
class ClientResult:
    client_id: int
    n: int
    class_counts: np.ndarray
    phi: MlpParams
    gaussian: ClassGaussian | None
    beta: BetaResult | None
    velocity: ParamBlocks | None
    head: LinearHead | None = None
    head_velocity: tuple[np.ndarray, np.ndarray] | None = None


def init_state(cfg: FederationConfig, seed: int) -> FederationState:
    """Spherical-Gaussian initialization of the global and client estimates."""
    d = cfg.feature_dim
    phi = init_mlp(cfg.layer_dims, substream(seed, "phi-init"))
    means = substream(seed, "means-init").normal(size=(cfg.num_classes, d)) / np.sqrt(d)
    gaussian = ClassGaussian(means, np.eye(d), np.full(cfg.num_classes, 1.0 / cfg.num_classes))
    head: LinearHead | None = None
    if cfg.algorithm in (AlgorithmKind.FEDAVG, AlgorithmKind.FEDAVG_FT):
        head = init_linear_head(d, cfg.num_classes, substream(seed, "head-init"))
    clients = []
    for i in range(cfg.num_clients):
        cs = ClientState(gaussian=gaussian, beta=BetaResult(0.5, 0.5, math.nan))
        if cfg.algorithm is AlgorithmKind.LOCAL_ONLY:
            cs.params = init_mlp(cfg.layer_dims, substream(seed, "local-init", client_id=i))
            cs.head = init_linear_head(d, cfg.num_classes, substream(seed, "local-head-init", client_id=i))
        clients.append(cs)
    return FederationState(phi=phi, gaussian=gaussian, round=0, clients=clients, head=head)


def sample_active_clients(
    num_clients: int, q: float, rng: np.random.Generator, round_idx: int, total_rounds: int
) -> np.ndarray:
    """Independent Bernoulli(q) participation; the last round is always full."""
    if not 0 < q <= 1:
        raise ValueError("q out of (0,1]")
    if round_idx == total_rounds - 1:
        return np.arange(num_clients, dtype=np.int64)
    while True:
        mask = rng.random(num_clients) < q
        if mask.any():
            return np.flatnonzero(mask).astype(np.int64)


def client_update_pfedfda(
    phi_g: MlpParams,
    gaussian_g: ClassGaussian,
    shard: ClientShard,
    state: ClientState,
    cfg: FederationConfig,
    seed: int,
    round_idx: int,
    client_id: int,
) -> ClientResult:
    """One client round: representation learning, local estimation, beta fusion."""
    if shard.n_train == 0:
        raise ValueError("empty shard")
    priors = estimate_priors(shard.train_y, cfg.num_classes)
    train_clf = build_classifier(ClassGaussian(gaussian_g.means, gaussian_g.cov, priors), cfg.prior_floor)
    res = train_local(
        phi_g,
        train_clf,
        shard.train_x,
        shard.train_y,
        cfg.hyper,
        substream(seed, "shuffle", round_idx, client_id),
        velocity=state.velocity,
    )
    means, cov = local_estimate(res.log.features, res.log.labels, gaussian_g, cfg.cov_opts)
    local_g = ClassGaussian(means, cov, priors)
    if cfg.beta_mode is BetaMode.NONE:
        beta = BetaResult(1.0, 1.0, math.nan)
    elif len(res.log) < cfg.k_folds:
        beta = BetaResult(0.0, 0.0, math.nan)
    else:
        folds = kfold_split(res.log, cfg.k_folds, substream(seed, "folds", round_idx, client_id))
        stats = prepare_fold_stats(res.log, folds, gaussian_g, cfg.cov_opts)
        beta = optimize_beta(stats, gaussian_g, priors, cfg.beta_mode, cfg.prior_floor)
    gaussian_i = interpolate(local_g, gaussian_g, beta)
    return ClientResult(
        client_id=client_id,
        n=shard.n_train,
        class_counts=np.bincount(shard.train_y, minlength=cfg.num_classes),
        phi=res.params,
        gaussian=gaussian_i,
        beta=beta,
        velocity=res.velocity,
    )


def client_update_fedavg(
    phi_g: MlpParams,
    head_g: LinearHead,
    shard: ClientShard,
    state: ClientState,
    cfg: FederationConfig,
    seed: int,
    round_idx: int,
    client_id: int,
) -> ClientResult:
    """FedAvg client round: backbone and linear head trained jointly.

    Optimizer state starts fresh each round, matching plain local SGD on
    every broadcast model.
    """
    if shard.n_train == 0:
        raise ValueError("empty shard")
    res = train_local_joint(
        phi_g,
        head_g,
        shard.train_x,
        shard.train_y,
        cfg.hyper,
        substream(seed, "shuffle", round_idx, client_id),
    )
    return ClientResult(
        client_id=client_id,
        n=shard.n_train,
        class_counts=np.bincount(shard.train_y, minlength=cfg.num_classes),
        phi=res.params,
        gaussian=None,
        beta=None,
        velocity=res.velocity,
        head=res.head,
        head_velocity=res.head_velocity,
    )


def _weighted_param_blocks(params_list: list[MlpParams], weights: np.ndarray) -> MlpParams:
    out_w = [np.zeros_like(w) for w in params_list[0].weights]
    out_b = [np.zeros_like(b) for b in params_list[0].biases]
    for p, w in zip(params_list, weights):
        for acc, tensor in zip(out_w, p.weights):
            acc += w * tensor
        for acc, tensor in zip(out_b, p.biases):
            acc += w * tensor
    return MlpParams(out_w, out_b)


def aggregate(
    results: list[ClientResult], prev_gaussian: ClassGaussian, opts: CovOptions
) -> tuple[MlpParams, ClassGaussian]:
    """Sample-count weighted average of extractors and Gaussian statistics.

    Class means are weighted by per-class counts so clients that never saw
    a class contribute nothing to its mean; a class unseen by every
    participant keeps the previous global mean. The averaged covariance is
    re-regularized.
    """
    if not results:
        raise ValueError("no client results to aggregate")
    results = sorted(results, key=lambda r: r.client_id)
    n = np.array([r.n for r in results], dtype=np.float64)
    weights = n / n.sum()
    phi = _weighted_param_blocks([r.phi for r in results], weights)
    num_classes, d = prev_gaussian.means.shape
    class_counts = np.zeros((len(results), num_classes))
    for j, r in enumerate(results):
        class_counts[j] = r.class_counts
    class_totals = class_counts.sum(axis=0)
    means = prev_gaussian.means.copy()
    for c in range(num_classes):
        if class_totals[c] > 0:
            acc = np.zeros(d)
            for j, r in enumerate(results):
                if class_counts[j, c] > 0:
                    acc += (class_counts[j, c] / class_totals[c]) * r.gaussian.means[c]
            means[c] = acc
    cov = np.zeros((d, d))
    priors = np.zeros(num_classes)
    for w, r in zip(weights, results):
        cov += w * r.gaussian.cov
        priors += w * r.gaussian.priors
    cov = regularize_covariance(cov, opts)
    priors = priors / priors.sum()
    return phi, ClassGaussian(means, cov, priors)


def aggregate_linear(heads: list[LinearHead], weights: np.ndarray) -> LinearHead:
    w = np.zeros_like(heads[0].weights)
    b = np.zeros_like(heads[0].biases)
    for head, wt in zip(heads, weights):
        w += wt * head.weights
        b += wt * head.biases
    return LinearHead(w, b)


def _linear_accuracy(params: MlpParams, head: LinearHead, shard: ClientShard) -> float:
    z, _ = forward(params, shard.test_x)
    pred = np.argmax(z @ head.weights.T + head.biases, axis=1)
    return float((pred == shard.test_y).mean())


def evaluate_clients(
    state: FederationState,
    shards: list[ClientShard],
    algorithm: AlgorithmKind,
    cfg: FederationConfig,
    seed: int,
) -> np.ndarray:
    """Per-client test accuracy; clients without test data get NaN (flagged)."""
    acc = np.full(len(shards), np.nan)
    for i, shard in enumerate(shards):
        if shard.n_test == 0:
            continue
        if algorithm is AlgorithmKind.PFEDFDA:
            clf = build_classifier(state.clients[i].gaussian, cfg.prior_floor)
            z, _ = forward(state.phi, shard.test_x)
            acc[i] = float((predict_batch(clf, z) == shard.test_y).mean())
        elif algorithm is AlgorithmKind.FEDAVG:
            acc[i] = _linear_accuracy(state.phi, state.head, shard)
        elif algorithm is AlgorithmKind.FEDAVG_FT:
            if shard.n_train == 0:
                acc[i] = _linear_accuracy(state.phi, state.head, shard)
                continue
            res = train_local_joint(
                state.phi,
                state.head,
                shard.train_x,
                shard.train_y,
                cfg.hyper,
                substream(seed, "finetune", state.round, i),
            )
            acc[i] = _linear_accuracy(res.params, res.head, shard)
        else:
            acc[i] = _linear_accuracy(state.clients[i].params, state.clients[i].head, shard)
    return acc


def compute_comm_overhead(num_classes: int, feature_dim: int, backbone_params: int) -> tuple[int, int, float]:
    """Parameter counts of a linear head vs Gaussian statistics, and the relative overhead."""
    if num_classes < 1 or feature_dim < 1 or backbone_params < 0:
        raise ValueError("counts must be positive (backbone may be zero)")
    linear = num_classes * (feature_dim + 1)
    gaussian = num_classes * feature_dim + (feature_dim * feature_dim + feature_dim) // 2
    overhead = (gaussian - linear) / (backbone_params + linear)
    return linear, gaussian, overhead


@dataclass(eq=False)
class FederationOutcome:
    reports: list[RoundReport]
    state: FederationState
    final_accuracy: np.ndarray  # per client; NaN where evaluation was skipped


def _make_report(
    state: FederationState, acc: np.ndarray, active: np.ndarray, algorithm: AlgorithmKind
) -> RoundReport:
    valid = acc[~np.isnan(acc)]
    mean_acc = float(valid.mean()) if valid.size else math.nan
    std_acc = float(valid.std()) if valid.size else math.nan
    mean_beta = None
    if algorithm is AlgorithmKind.PFEDFDA:
        mean_beta = float(np.mean([c.beta.beta_mu for c in state.clients]))
    return RoundReport(state.round, tuple(int(i) for i in active), mean_acc, std_acc, mean_beta)


def run_federation(shards: list[ClientShard], cfg: FederationConfig, seed: int) -> FederationOutcome:
    """Full federated run; deterministic given (shards, cfg, seed)."""
    if len(shards) != cfg.num_clients:
        raise ValueError("shard count must match cfg.num_clients")
    state = init_state(cfg, seed)
    trainable = np.array([i for i in range(cfg.num_clients) if shards[i].n_train > 0], dtype=np.int64)
    reports: list[RoundReport] = []
    last_acc: np.ndarray | None = None
    last_acc_round = -1

    def update(client_id: int) -> ClientResult:
        shard = shards[client_id]
        cs = state.clients[client_id]
        if cfg.algorithm is AlgorithmKind.PFEDFDA:
            return client_update_pfedfda(state.phi, state.gaussian, shard, cs, cfg, seed, round_idx, client_id)
        if cfg.algorithm in (AlgorithmKind.FEDAVG, AlgorithmKind.FEDAVG_FT):
            return client_update_fedavg(state.phi, state.head, shard, cs, cfg, seed, round_idx, client_id)
        res = train_local_joint(
            cs.params,
            cs.head,
            shard.train_x,
            shard.train_y,
            cfg.hyper,
            substream(seed, "shuffle", round_idx, client_id),
            velocity=cs.velocity,
            head_velocity=cs.head_velocity,
        )
        return ClientResult(
            client_id=client_id,
            n=shard.n_train,
            class_counts=np.bincount(shard.train_y, minlength=cfg.num_classes),
            phi=res.params,
            gaussian=None,
            beta=None,
            velocity=res.velocity,
            head=res.head,
            head_velocity=res.head_velocity,
        )

    for round_idx in range(cfg.rounds):
        if cfg.algorithm is AlgorithmKind.LOCAL_ONLY:
            active = trainable
        else:
            candidates = sample_active_clients(
                cfg.num_clients, cfg.q, substream(seed, "participation", round_idx), round_idx, cfg.rounds
            )
            active = candidates[np.isin(candidates, trainable)]
        if active.size:
            if cfg.threads > 1:
                with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                    results = list(pool.map(update, active.tolist()))
            else:
                results = [update(i) for i in active.tolist()]
            for r in results:
                cs = state.clients[r.client_id]
                if r.gaussian is not None:
                    cs.gaussian = r.gaussian
                if r.beta is not None:
                    cs.beta = r.beta
                if cfg.algorithm is AlgorithmKind.PFEDFDA:
                    cs.velocity = r.velocity
                if cfg.algorithm is AlgorithmKind.LOCAL_ONLY:
                    cs.params = r.phi
                    cs.head = r.head
                    cs.velocity = r.velocity
                    cs.head_velocity = r.head_velocity
            if cfg.algorithm is AlgorithmKind.PFEDFDA:
                state.phi, state.gaussian = aggregate(results, state.gaussian, cfg.cov_opts)
            elif cfg.algorithm in (AlgorithmKind.FEDAVG, AlgorithmKind.FEDAVG_FT):
                results = sorted(results, key=lambda r: r.client_id)
                n = np.array([r.n for r in results], dtype=np.float64)
                weights = n / n.sum()
                state.phi = _weighted_param_blocks([r.phi for r in results], weights)
                state.head = aggregate_linear([r.head for r in results], weights)
        state.round = round_idx + 1
        if (round_idx + 1) % cfg.eval_every == 0 or round_idx == cfg.rounds - 1:
            last_acc = evaluate_clients(state, shards, cfg.algorithm, cfg, seed)
            last_acc_round = state.round
            reports.append(_make_report(state, last_acc, active, cfg.algorithm))
    if last_acc is None or last_acc_round != state.round:
        last_acc = evaluate_clients(state, shards, cfg.algorithm, cfg, seed)
    return FederationOutcome(reports, state, last_acc)
