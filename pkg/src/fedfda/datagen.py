"""Synthetic heterogeneous federated datasets and CSV ingestion.

Three heterogeneity axes are simulated: label skew via Dirichlet
partitioning, covariate shift via deterministic vector corruptions at five
severity levels, and data scarcity via uniform subsampling of client
training sets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .streams import substream

CORRUPTION_KINDS = ("rotate", "scale", "additive_noise", "feature_dropout", "translate")
NUM_SEVERITIES = 5


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Class-conditional Gaussian blobs lifted into input space by a fixed random tanh map."""

    num_classes: int = 5
    input_dim: int = 24
    latent_dim: int = 6
    samples_per_class: int = 800
    separation: float = 2.0
    lift_seed: int = 7
    lift: str = "tanh"  # "tanh" | "identity"

    def __post_init__(self) -> None:
        if min(self.num_classes, self.input_dim, self.latent_dim, self.samples_per_class) < 1:
            raise ValueError("spec sizes must be positive")
        if self.separation < 0:
            raise ValueError("separation must be nonnegative")
        if self.lift not in ("tanh", "identity"):
            raise ValueError("lift must be 'tanh' or 'identity'")
        if self.lift == "identity" and self.input_dim != self.latent_dim:
            raise ValueError("identity lift requires input_dim == latent_dim")


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self) -> None:
        if self.kind not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if not 1 <= self.severity <= NUM_SEVERITIES:
            raise ValueError("severity must be in 1..5")


@dataclass(eq=False)
class ClientShard:
    """One client's train/test split plus shift metadata."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    corruption: CorruptionSpec | None = field(default=None)

    @property
    def n_train(self) -> int:
        return self.train_y.shape[0]

    @property
    def n_test(self) -> int:
        return self.test_y.shape[0]


def generate_base_dataset(spec: SyntheticTaskSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Blobs in latent space, then a fixed random affine map with tanh squashing.

    The lift parameters come from spec.lift_seed alone, so the same spec
    always produces the same input geometry regardless of the sample rng.
    """
    centers = spec.separation * rng.normal(size=(spec.num_classes, spec.latent_dim))
    latents = []
    labels = []
    for c in range(spec.num_classes):
        latents.append(centers[c] + rng.normal(size=(spec.samples_per_class, spec.latent_dim)))
        labels.append(np.full(spec.samples_per_class, c, dtype=np.int64))
    z = np.concatenate(latents)
    y = np.concatenate(labels)
    if spec.lift == "identity":
        return z, y
    lift_rng = np.random.default_rng(spec.lift_seed)
    a = lift_rng.normal(size=(spec.input_dim, spec.latent_dim)) / np.sqrt(spec.latent_dim)
    b = 0.1 * lift_rng.normal(size=spec.input_dim)
    return np.tanh(z @ a.T + b), y


def dirichlet_partition(y: np.ndarray, num_clients: int, alpha: float, rng: np.random.Generator) -> list[np.ndarray]:
    """Allocate each class across clients by Dir(alpha) proportions.

    Proportions are integerized by largest-remainder rounding (ties toward
    the lowest client id), so every index lands on exactly one client.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if num_clients < 1:
        raise ValueError("need at least one client")
    y = np.asarray(y)
    assignments: list[list[int]] = [[] for _ in range(num_clients)]
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        props = rng.dirichlet(np.full(num_clients, alpha))
        quota = props * idx.size
        base = np.floor(quota).astype(np.int64)
        remainder = idx.size - int(base.sum())
        if remainder:
            order = np.argsort(-(quota - base), kind="stable")
            base[order[:remainder]] += 1
        stop = np.cumsum(base)
        start = stop - base
        for m in range(num_clients):
            assignments[m].extend(idx[start[m] : stop[m]].tolist())
    return [np.array(sorted(a), dtype=np.int64) for a in assignments]


def _paired_rotation(x: np.ndarray, angle: float) -> np.ndarray:
    """Rotate consecutive coordinate pairs (0,1), (2,3), ... by angle."""
    out = x.copy()
    c, s = math.cos(angle), math.sin(angle)
    for p in range(0, x.shape[1] - 1, 2):
        x0 = x[:, p]
        x1 = x[:, p + 1]
        out[:, p] = c * x0 - s * x1
        out[:, p + 1] = s * x0 + c * x1
    return out


def apply_covariate_shift(x: np.ndarray, spec: CorruptionSpec, rng: np.random.Generator) -> np.ndarray:
    """Deterministic per-(spec, seed) corruption; severity scales magnitude linearly."""
    x = np.asarray(x, dtype=np.float64)
    t = spec.severity / NUM_SEVERITIES
    if spec.kind == "rotate":
        return _paired_rotation(x, t * (math.pi / 4.0))
    if spec.kind == "scale":
        return x * (1.0 + t)
    if spec.kind == "additive_noise":
        return x + rng.normal(0.0, t * 1.0, size=x.shape)
    if spec.kind == "feature_dropout":
        return np.where(rng.random(x.shape) < t * 0.5, 0.0, x)
    shift = (t * 1.0) * np.ones(x.shape[1]) / math.sqrt(x.shape[1])
    return x + shift


def subsample(shard: ClientShard, fraction: float, rng: np.random.Generator) -> ClientShard:
    """Keep ceil(fraction * n) training samples uniformly without replacement."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    n = shard.n_train
    if fraction == 1.0 or n <= 1:
        return shard
    keep = max(1, math.ceil(fraction * n))
    chosen = np.sort(rng.choice(n, size=keep, replace=False))
    return replace(shard, train_x=shard.train_x[chosen], train_y=shard.train_y[chosen])


def train_test_split(
    indices: np.ndarray, labels: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """80/20 split, stratified by label where counts permit.

    The train side gets min(ceil(0.8 n), n - 1) samples, apportioned across
    classes by largest remainder, so the test side is never empty.
    """
    indices = np.asarray(indices, dtype=np.int64)
    labels = np.asarray(labels)
    n = indices.size
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    if labels.shape != (n,):
        raise ValueError("labels must align with indices")
    target = min(math.ceil(0.8 * n), n - 1)
    classes = np.unique(labels)
    class_sizes = np.array([int((labels == c).sum()) for c in classes])
    quota = class_sizes * (target / n)
    base = np.floor(quota).astype(np.int64)
    remainder = target - int(base.sum())
    if remainder:
        order = np.argsort(-(quota - base), kind="stable")
        base[order[:remainder]] += 1
    base = np.minimum(base, class_sizes)
    shortfall = target - int(base.sum())
    while shortfall > 0:  # only reachable when some class was capped at its size
        room = np.flatnonzero(base < class_sizes)
        base[room[0]] += 1
        shortfall -= 1
    train: list[int] = []
    test: list[int] = []
    for c, take in zip(classes, base):
        pos = np.flatnonzero(labels == c)
        pos = pos[rng.permutation(pos.size)]
        train.extend(indices[pos[:take]].tolist())
        test.extend(indices[pos[take:]].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(test), dtype=np.int64)


# Per-kind severity schedule for the shift plan. Geometric corruptions keep
# classes separable at any magnitude, so they enter strongest-first; additive
# noise and dropout erase class information at high magnitude, so they enter
# weakest-first. This keeps every assigned corruption class-preserving, the
# property the image corruptions being mimicked all share.
_SEVERITY_ORDER = {
    "rotate": (5, 4, 3, 2, 1),
    "scale": (5, 4, 3, 2, 1),
    "translate": (5, 4, 3, 2, 1),
    "additive_noise": (1, 2, 3, 4, 5),
    "feature_dropout": (1, 2, 3, 4, 5),
}


def shift_plan(num_clients: int, num_shifted: int | None = None) -> dict[int, CorruptionSpec]:
    """Corruption assignment: the first half of clients get distinct pairs.

    Kinds cycle fastest (client j gets kind j mod 5); severities follow
    each kind's schedule, so the full 5x5 grid is covered once per 25
    shifted clients with distinct pairs throughout.
    """
    if num_shifted is None:
        num_shifted = num_clients // 2
    if not 0 <= num_shifted <= num_clients:
        raise ValueError("num_shifted out of range")
    plan = {}
    grid = len(CORRUPTION_KINDS) * NUM_SEVERITIES
    for j in range(num_shifted):
        pair = j % grid
        kind = CORRUPTION_KINDS[pair % len(CORRUPTION_KINDS)]
        severity = _SEVERITY_ORDER[kind][pair // len(CORRUPTION_KINDS)]
        plan[j] = CorruptionSpec(kind, severity)
    return plan


def build_federated_shards(
    x: np.ndarray,
    y: np.ndarray,
    num_clients: int,
    alpha: float,
    corruptions: dict[int, CorruptionSpec],
    scarcity: float,
    seed: int,
) -> list[ClientShard]:
    """Partition, split, corrupt, and subsample into per-client shards.

    Corruption hits both sides of a shifted client's split; subsampling
    touches only the training side. Clients whose partition is too small
    to split keep everything as training data (empty test side is flagged
    downstream).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    parts = dirichlet_partition(y, num_clients, alpha, substream(seed, "partition"))
    shards = []
    for i, part in enumerate(parts):
        if part.size >= 2:
            tr, te = train_test_split(part, y[part], substream(seed, "split", client_id=i))
        else:
            tr, te = part, np.array([], dtype=np.int64)
        train_x, train_y = x[tr], y[tr]
        test_x, test_y = x[te], y[te]
        spec = corruptions.get(i)
        if spec is not None:
            crng = substream(seed, "corrupt", client_id=i)
            train_x = apply_covariate_shift(train_x, spec, crng)
            test_x = apply_covariate_shift(test_x, spec, crng)
        shard = ClientShard(train_x, train_y, test_x, test_y, corruption=spec)
        if scarcity < 1.0:
            shard = subsample(shard, scarcity, substream(seed, "subsample", client_id=i))
        shards.append(shard)
    return shards


def load_csv_dataset(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read `f0,...,f{m-1},label` rows; rejects malformed or non-finite values."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        m = len(header) - 1
        expected = [f"f{j}" for j in range(m)] + ["label"]
        if m < 1 or header != expected:
            raise ValueError(f"{path}: header must be f0,...,f{{m-1}},label")
        features: list[list[float]] = []
        labels: list[int] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != m + 1:
                raise ValueError(f"{path}: line {line_no}: expected {m + 1} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[:m]]
                label = int(row[m])
            except ValueError:
                raise ValueError(f"{path}: line {line_no}: malformed value") from None
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{path}: line {line_no}: non-finite value")
            if label < 0:
                raise ValueError(f"{path}: line {line_no}: negative label")
            features.append(vals)
            labels.append(label)
    if not features:
        raise ValueError(f"{path}: no data rows")
    return np.array(features, dtype=np.float64), np.array(labels, dtype=np.int64)


def save_csv_dataset(path: str, x: np.ndarray, y: np.ndarray) -> None:
    """Writer counterpart of load_csv_dataset; floats round-trip exactly via repr."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{j}" for j in range(x.shape[1])] + ["label"])
        for row, label in zip(x, y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
