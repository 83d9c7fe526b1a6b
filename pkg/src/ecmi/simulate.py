"""Toy supersample experiments with exactly computable population losses.

Features are uniform on ``{0..K-1}``.  The clean label is ``h*(x)`` (label 0
below ``K // 2``, label 1 from there on), flipped to a uniformly chosen other
label with probability ``eta`` and then replaced by a uniform label with
probability ``a``.

Learners are vectorized over a stack of membership vectors: given one
supersample and ``M`` membership vectors they return ``M`` hypotheses at once,
which keeps exact enumeration over all ``2^n`` vectors cheap.
"""

from __future__ import annotations

import itertools
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .core import DomainError, TrialBatch, _train_loss, rng_stream
from .estimators import EXACT_MAX_N, TableLaw, all_memberships

LEARNERS = ("memorizer", "erm_finite_class", "gibbs", "constant")
REQUIRED_FIELDS = ("learner", "n", "k1", "k2", "seed")
RANDOMIZED = ("gibbs",)
SEED_BOUND = 2 ** 31 - 1


class ConfigError(ValueError):
    """A simulation config is missing a field or has an invalid value."""


@dataclass(frozen=True)
class SimConfig:
    learner: str
    n: int
    k1: int = 20
    k2: int = 200
    seed: int = 0
    K: int = 8
    N: int = 2
    eta: float = 0.0
    a: float = 0.0
    bins: int = 2
    beta: float = 1.0
    breakpoints: int = 1
    r_draws: int | None = None

    def __post_init__(self):
        if self.learner not in LEARNERS:
            raise ConfigError(f"learner must be one of {LEARNERS}, got {self.learner!r}")
        for name in ("n", "k1", "k2", "K"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.N < 2:
            raise ConfigError("N must be >= 2")
        for name in ("eta", "a"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.bins < 2:
            raise ConfigError("bins must be >= 2")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.breakpoints < 0:
            raise ConfigError("breakpoints must be >= 0")
        if self.r_draws is None:
            object.__setattr__(self, "r_draws", 10 if self.learner in RANDOMIZED else 1)
        if not 1 <= self.r_draws <= self.k2:
            raise ConfigError("r_draws must lie in [1, k2]")

    @property
    def randomized(self) -> bool:
        return self.learner in RANDOMIZED

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimConfig":
        missing = [f for f in REQUIRED_FIELDS if f not in data]
        if missing:
            raise ConfigError(f"config is missing required field(s): {', '.join(missing)}")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def check_estimable(config: SimConfig) -> None:
    """Reject configs whose batches the e-CMI estimators cannot use."""
    if config.k2 < 2:
        raise ConfigError("k2 must be >= 2: e-CMI estimation needs at least two membership "
                          "draws per supersample")


# --- hypothesis class --------------------------------------------------------

@dataclass(frozen=True)
class FiniteClass:
    """Enumerated hypotheses, one label per feature value (rows of ``table``)."""

    table: np.ndarray
    natarajan_dim: int | None = None
    description: str = ""

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.int64)
        if t.ndim != 2 or t.shape[0] < 1:
            raise DomainError("class must contain at least one hypothesis")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def size(self) -> int:
        return self.table.shape[0]

    @property
    def domain(self) -> int:
        return self.table.shape[1]


def threshold_class(K: int, N: int, breakpoints: int = 1) -> FiniteClass:
    """Piecewise-constant labelings of the ordered domain with at most ``breakpoints`` changes.

    Adjacent pieces carry different labels so each function appears once.
    The Natarajan dimension is ``min(breakpoints + 1, K)``.
    """
    rows = []
    for k in range(min(breakpoints, K - 1) + 1):
        for cuts in itertools.combinations(range(1, K), k):
            edges = (0,) + cuts + (K,)
            for labels in itertools.product(range(N), repeat=k + 1):
                if any(labels[p] == labels[p + 1] for p in range(k)):
                    continue
                h = np.empty(K, dtype=np.int64)
                for p, lab in enumerate(labels):
                    h[edges[p]:edges[p + 1]] = lab
                rows.append(h)
    return FiniteClass(np.array(rows), natarajan_dim=min(breakpoints + 1, K),
                       description=f"thresholds K={K} N={N} breakpoints<={breakpoints}")


def natarajan_dimension(cls: FiniteClass, n_labels: int) -> int:
    """Brute-force Natarajan dimension (small domains only)."""
    best = 0
    for size in range(1, cls.domain + 1):
        found = False
        for pts in itertools.combinations(range(cls.domain), size):
            patterns = {tuple(r) for r in cls.table[:, pts]}
            for f1 in itertools.product(range(n_labels), repeat=size):
                for f2 in itertools.product(range(n_labels), repeat=size):
                    if any(u == v for u, v in zip(f1, f2)):
                        continue
                    if all(tuple(f1[p] if bit else f2[p] for p, bit in enumerate(mask)) in patterns
                           for mask in itertools.product((0, 1), repeat=size)):
                        found = True
                        break
                if found:
                    break
            if found:
                break
        if not found:
            return best
        best = size
    return best


def target_function(K: int) -> np.ndarray:
    h = np.zeros(K, dtype=np.int64)
    h[K // 2:] = 1
    return h


# --- data --------------------------------------------------------------------

def label_law(config: SimConfig) -> np.ndarray:
    """(K, N) matrix of P(y = c | x)."""
    y0 = target_function(config.K)
    onehot = np.eye(config.N)[y0]
    clean = (1.0 - config.eta) * onehot + config.eta / (config.N - 1) * (1.0 - onehot)
    return (1.0 - config.a) * clean + config.a / config.N


def draw_supersample(config: SimConfig, stream: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Features and labels of an n x 2 supersample; every random array is drawn unconditionally."""
    shape = (config.n, 2)
    x = stream.integers(0, config.K, size=shape)
    y = target_function(config.K)[x]
    flip = stream.random(shape) < config.eta
    other = (y + stream.integers(1, config.N, size=shape)) % config.N
    y = np.where(flip, other, y)
    corrupt = stream.random(shape) < config.a
    y = np.where(corrupt, stream.integers(0, config.N, size=shape), y)
    return x, y


def population_loss(hypotheses: np.ndarray, config: SimConfig) -> np.ndarray | float:
    """Exact 0/1 population loss of one hypothesis (K,) or a stack (M, K)."""
    h = np.asarray(hypotheses, dtype=np.int64)
    law = label_law(config)
    agree = law[np.arange(config.K), h]
    out = 1.0 - agree.mean(axis=-1)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


# --- learners ----------------------------------------------------------------

def _training_sets(x: np.ndarray, y: np.ndarray, S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(x.shape[0])
    return x[rows, S], y[rows, S]


def _class_train_errors(cls: FiniteClass, x: np.ndarray, y: np.ndarray, S: np.ndarray) -> np.ndarray:
    """(M, |H|) count of training mistakes of every hypothesis under every membership vector."""
    wrong = (cls.table[:, x] != y[None]).astype(np.int64)  # (|H|, n, 2)
    base = wrong[:, :, 0].sum(axis=1)
    delta = (wrong[:, :, 1] - wrong[:, :, 0]).T  # (n, |H|)
    return base[None, :] + S.astype(np.int64) @ delta


def gibbs_posterior(errors: np.ndarray, beta: float) -> np.ndarray:
    """Rows proportional to exp(-beta * errors), i.e. exp(-beta * n * training loss)."""
    logits = -beta * errors.astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def gibbs_uniform(r_seed: int) -> float:
    """The single uniform a Gibbs draw consumes; a pure function of the R seed."""
    return float(np.random.default_rng(int(r_seed)).random())


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def _memorize(config: SimConfig, x: np.ndarray, y: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Majority label per seen feature, ties to the smallest label; unseen features get 0."""
    xs, ys = _training_sets(x, y, S)
    M = S.shape[0]
    cell = (np.arange(M)[:, None] * config.K + xs) * config.N + ys
    counts = np.bincount(cell.ravel(), minlength=M * config.K * config.N)
    return counts.reshape(M, config.K, config.N).argmax(axis=2)


def run_learner(kind: str, config: SimConfig, x: np.ndarray, y: np.ndarray, S: np.ndarray,
                r_seeds: np.ndarray | None = None, cls: FiniteClass | None = None
                ) -> tuple[np.ndarray, np.ndarray]:
    """Train on the rows picked by each membership vector in ``S`` (M, n).

    Returns the hypotheses as label vectors (M, K) and integer ids (M,).  Ids
    index the finite class for class learners; for the memorizer they index
    the distinct lookup tables in this call.
    """
    S = np.atleast_2d(np.asarray(S, dtype=np.int64))
    M = S.shape[0]
    if kind == "constant":
        h = np.broadcast_to(target_function(config.K), (M, config.K)).copy()
        return h, np.zeros(M, dtype=np.int64)
    if kind == "memorizer":
        h = _memorize(config, x, y, S)
        _, ids = np.unique(h, axis=0, return_inverse=True)
        return h, ids.reshape(-1).astype(np.int64)
    if cls is None:
        cls = threshold_class(config.K, config.N, config.breakpoints)
    errors = _class_train_errors(cls, x, y, S)
    if kind == "erm_finite_class":
        ids = errors.argmin(axis=1)
    elif kind == "gibbs":
        if r_seeds is None:
            raise DomainError("the Gibbs learner needs R seeds")
        u = np.array([gibbs_uniform(r) for r in np.broadcast_to(r_seeds, (M,))])
        ids = _inverse_cdf(gibbs_posterior(errors, config.beta), u)
    else:
        raise DomainError(f"unknown learner {kind!r}")
    return cls.table[ids], ids.astype(np.int64)


def loss_tables(h: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predictions and 0/1 losses (M, n, 2) of hypotheses (M, K) on the supersample."""
    preds = h[:, x]
    return preds, (preds != y[None]).astype(np.float64)


# --- exact law of the loss table ---------------------------------------------

@dataclass
class ExactSupersample:
    """Exact quantities for one supersample, enumerating all membership vectors."""

    law: TableLaw
    train_mean: np.ndarray  # (2^n,) E_R of the training loss for each membership vector
    test_mean: np.ndarray
    hypothesis_probs: np.ndarray | None = None  # (2^n, |H|) for randomized learners


def exact_table_law(config: SimConfig, x: np.ndarray, y: np.ndarray,
                    cls: FiniteClass | None = None) -> ExactSupersample:
    if config.n > EXACT_MAX_N:
        raise DomainError(f"exact enumeration needs n <= {EXACT_MAX_N}")
    S = all_memberships(config.n).astype(np.int64)
    M = S.shape[0]
    if config.randomized:
        cls = cls or threshold_class(config.K, config.N, config.breakpoints)
        probs = gibbs_posterior(_class_train_errors(cls, x, y, S), config.beta)
        _, per_h = loss_tables(cls.table, x, y)  # (|H|, n, 2)
        tables, atom_of_h = np.unique(per_h.reshape(cls.size, -1), axis=0, return_inverse=True)
        atom_of_h = atom_of_h.reshape(-1)
        onehot = np.zeros((cls.size, tables.shape[0]))
        onehot[np.arange(cls.size), atom_of_h] = 1.0
        law = TableLaw(tables.reshape(-1, config.n, 2), probs=probs @ onehot)
        train_h = per_h[:, :, 0].sum(axis=1)[None, :] + S @ (per_h[:, :, 1] - per_h[:, :, 0]).T
        test_h = per_h.sum(axis=2).sum(axis=1)[None, :] - train_h
        return ExactSupersample(law, (probs * train_h).sum(axis=1) / config.n,
                                (probs * test_h).sum(axis=1) / config.n, probs)
    if config.learner == "memorizer":
        h = _memorize(config, x, y, S)
    else:
        h, _ = run_learner(config.learner, config, x, y, S, cls=cls)
    _, losses = loss_tables(h, x, y)
    # 0/1 tables of at most 2 * 14 entries fit in one integer code
    codes = losses.reshape(M, -1).astype(np.int64) @ (np.int64(1) << np.arange(2 * config.n, dtype=np.int64))
    _, first, assign = np.unique(codes, return_index=True, return_inverse=True)
    law = TableLaw(losses[first], assign=assign.reshape(-1))
    train = _train_loss(losses, S)
    test = _train_loss(losses, 1 - S)
    return ExactSupersample(law, train, test)


# --- experiment ----------------------------------------------------------------

@dataclass
class GapStats:
    mean: float
    se: float
    abs_mean: float
    squared_mean: float
    per_supersample: np.ndarray = field(repr=False)


def gap_stats(batch: TrialBatch) -> GapStats:
    """Population minus training loss, with the SE over supersample draws."""
    if batch.population_loss is None:
        raise DomainError("batch has no exact population losses")
    gaps = batch.population_loss - batch.train_loss
    per = gaps.mean(axis=1)
    se = float(per.std(ddof=1) / np.sqrt(batch.k1)) if batch.k1 > 1 else 0.0
    return GapStats(float(per.mean()), se, abs(float(per.mean())), float((gaps ** 2).mean()), per)


def _supersample_stream(config: SimConfig, j: int) -> np.random.Generator:
    return rng_stream(config.seed, j * (config.k2 + 1))


def _draw_stream(config: SimConfig, j: int, t: int) -> np.random.Generator:
    return rng_stream(config.seed, j * (config.k2 + 1) + 1 + t)


def _run_supersample(config: SimConfig, cls: FiniteClass | None, j: int) -> dict[str, np.ndarray]:
    stream = _supersample_stream(config, j)
    x, y = draw_supersample(config, stream)
    r_group = stream.integers(0, SEED_BOUND, size=config.r_draws)
    S = np.stack([_draw_stream(config, j, t).integers(0, 2, size=config.n) for t in range(config.k2)])
    r_seeds = r_group[np.arange(config.k2) % config.r_draws]
    h, ids = run_learner(config.learner, config, x, y, S, r_seeds, cls)
    preds, losses = loss_tables(h, x, y)
    return {"x": x, "y": y, "S": S, "r": r_seeds, "ids": ids, "preds": preds, "losses": losses,
            "pop": population_loss(h, config)}


def default_threads() -> int:
    env = os.environ.get("ECMI_THREADS")
    return max(1, int(env)) if env else 1


def run_experiment(config: SimConfig, threads: int | None = None) -> tuple[TrialBatch, GapStats]:
    """Full k1 x k2 sweep.  Results do not depend on the thread count."""
    cls = None if config.learner in ("memorizer", "constant") else threshold_class(
        config.K, config.N, config.breakpoints)
    workers = threads or default_threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda j: _run_supersample(config, cls, j), range(config.k1)))
    else:
        parts = [_run_supersample(config, cls, j) for j in range(config.k1)]
    losses = np.stack([p["losses"] for p in parts])
    membership = np.stack([p["S"] for p in parts]).astype(np.int8)
    batch = TrialBatch(
        losses=losses,
        membership=membership,
        r_seeds=np.stack([p["r"] for p in parts]),
        train_loss=_train_loss(losses, membership),
        population_loss=np.stack([p["pop"] for p in parts]),
        granularity="binary",
        config=config.to_dict(),
        features=np.stack([p["x"] for p in parts]),
        labels=np.stack([p["y"] for p in parts]),
        hypothesis_ids=np.stack([p["ids"] for p in parts]),
        predictions=np.stack([p["preds"] for p in parts]),
    )
    return batch, gap_stats(batch)


def supersample_law(config: SimConfig, batch: TrialBatch, j: int) -> ExactSupersample:
    """Exact law for supersample ``j`` of a batch produced by ``run_experiment``."""
    if batch.features is None or batch.labels is None:
        raise DomainError("batch carries no features / labels")
    return exact_table_law(config, batch.features[j], batch.labels[j])
