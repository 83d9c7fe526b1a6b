"""Domain types and seeded randomness shared by the rest of the package.

Loss tables follow the supersample convention: row ``i`` holds the losses of
the two candidate examples of that row, column ``c`` is the supersample
column (0 or 1).  A membership bit ``s_i`` says which column was trained on.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

SCHEMA_VERSION = 1

# Accumulation tolerance when re-deriving stored training losses.
TRAIN_LOSS_ATOL = 1e-12


class DimensionError(ValueError):
    """Arrays that must line up do not."""


class DomainError(ValueError):
    """An argument lies outside the domain of the function."""


class EstimationError(ValueError):
    """Not enough (or unsuitable) data to form an estimate."""


def rng_stream(master_seed: int, trial_index: int) -> np.random.Generator:
    """Independent generator for one trial.

    Streams are keyed by ``(master_seed, trial_index)`` through a
    ``SeedSequence`` spawn key, so the same pair always gives the same draws
    and different indices never share state.
    """
    if trial_index < 0:
        raise DomainError(f"trial_index must be >= 0, got {trial_index}")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(trial_index),))
    return np.random.Generator(np.random.PCG64(seq))


def _check_unit(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)) or np.any(values < 0.0) or np.any(values > 1.0):
        raise DomainError(f"{what} must lie in [0, 1]")


@dataclass(frozen=True)
class LossTable:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 1:
            raise DimensionError(f"loss table must be n x 2 with n >= 1, got shape {v.shape}")
        _check_unit(v, "losses")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MembershipVector:
    bits: np.ndarray

    def __post_init__(self):
        b = np.array(self.bits, dtype=np.int8)
        if b.ndim != 1:
            raise DimensionError("membership vector must be one-dimensional")
        if np.any((b != 0) & (b != 1)):
            raise DomainError("membership bits must be 0 or 1")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    def complement(self) -> "MembershipVector":
        return MembershipVector(1 - self.bits)


def split_losses(table: LossTable, s: MembershipVector) -> tuple[float, float]:
    """Training and test loss of one draw: column ``s_i`` vs column ``1 - s_i``."""
    if table.n != s.n:
        raise DimensionError(f"loss table has {table.n} rows but membership vector has {s.n} bits")
    rows = np.arange(table.n)
    bits = s.bits.astype(np.intp)
    train = float(np.sum(table.values[rows, bits]) / table.n)
    test = float(np.sum(table.values[rows, 1 - bits]) / table.n)
    return train, test


@dataclass(frozen=True)
class GammaPair:
    gamma1: float
    gamma2: float

    def __post_init__(self):
        if not (self.gamma1 > 0 and self.gamma2 > 0):
            raise DomainError(f"gamma parameters must be positive, got ({self.gamma1}, {self.gamma2})")


@dataclass(frozen=True)
class NatarajanSpec:
    d_n: int
    n_labels: int
    n: int

    def __post_init__(self):
        if self.d_n < 1:
            raise DomainError("Natarajan dimension must be a positive integer")
        if self.n_labels < 2:
            raise DomainError("need at least two labels")
        if self.n < 1:
            raise DomainError("training-set size must be positive")
        if 2 * self.n < self.d_n + 1:
            raise DomainError(f"requires 2n >= d_N + 1, got n={self.n}, d_N={self.d_n}")


@dataclass
class BoundReport:
    name: str
    value: float
    applicable: bool = True
    # "gap" bounds |L_pop - L_train|, "population_loss" bounds L_pop,
    # "squared_gap" bounds E[(L_pop - L_train)^2].
    target: str = "population_loss"
    raw_value: float | None = None
    vacuous: bool = False
    note: str = ""
    intermediates: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.raw_value is None:
            self.raw_value = self.value
        if self.applicable and not (np.isfinite(self.value) and self.value >= 0):
            raise DomainError(f"{self.name}: applicable bound must be finite and non-negative, got {self.value}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "value": _jsonable(self.value),
            "raw_value": _jsonable(self.raw_value),
            "applicable": self.applicable,
            "target": self.target,
            "vacuous": self.vacuous,
            "note": self.note,
            "intermediates": _jsonable(self.intermediates),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if np.isnan(x):
            return None
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


GRANULARITIES = ("binary", "continuous")


@dataclass(frozen=True)
class TrialBatch:
    """All draws of one experiment.

    Array shapes: ``losses`` (k1, k2, n, 2), ``membership`` (k1, k2, n),
    ``r_seeds`` (k1, k2), ``train_loss`` (k1, k2), ``population_loss``
    (k1, k2) or None.  Optional simulator extras (``features``, ``labels``,
    ``hypothesis_ids``, ``predictions``) are carried along when available so
    exact-mode estimators and the prediction-level checks can use them.
    """

    losses: np.ndarray
    membership: np.ndarray
    r_seeds: np.ndarray
    train_loss: np.ndarray
    population_loss: np.ndarray | None = None
    granularity: str = "binary"
    config: dict[str, Any] = field(default_factory=dict)
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    hypothesis_ids: np.ndarray | None = None
    predictions: np.ndarray | None = None

    def __post_init__(self):
        losses = np.asarray(self.losses, dtype=np.float64)
        if losses.ndim != 4 or losses.shape[3] != 2:
            raise DimensionError(f"losses must have shape (k1, k2, n, 2), got {losses.shape}")
        k1, k2, n, _ = losses.shape
        _check_unit(losses, "losses")
        membership = np.asarray(self.membership, dtype=np.int8)
        if membership.shape != (k1, k2, n):
            raise DimensionError(f"membership must have shape {(k1, k2, n)}, got {membership.shape}")
        if np.any((membership != 0) & (membership != 1)):
            raise DomainError("membership bits must be 0 or 1")
        r_seeds = np.asarray(self.r_seeds, dtype=np.int64)
        if r_seeds.shape != (k1, k2):
            raise DimensionError(f"r_seeds must have shape {(k1, k2)}")
        train = np.asarray(self.train_loss, dtype=np.float64)
        if train.shape != (k1, k2):
            raise DimensionError(f"train_loss must have shape {(k1, k2)}")
        recomputed = _train_loss(losses, membership)
        if np.max(np.abs(recomputed - train)) > TRAIN_LOSS_ATOL:
            raise DomainError("stored training loss disagrees with loss tables and membership")
        if self.granularity not in GRANULARITIES:
            raise DomainError(f"granularity must be one of {GRANULARITIES}")
        if self.granularity == "binary" and np.any((losses != 0.0) & (losses != 1.0)):
            raise DomainError("binary granularity requires 0/1 losses")
        pop = None
        if self.population_loss is not None:
            pop = np.asarray(self.population_loss, dtype=np.float64)
            if pop.shape != (k1, k2):
                raise DimensionError(f"population_loss must have shape {(k1, k2)}")
            _check_unit(pop, "population losses")
        for name, arr in (("losses", losses), ("membership", membership), ("r_seeds", r_seeds),
                          ("train_loss", train), ("population_loss", pop)):
            if arr is not None:
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("features", "labels", "hypothesis_ids", "predictions"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.int64)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def k1(self) -> int:
        return self.losses.shape[0]

    @property
    def k2(self) -> int:
        return self.losses.shape[1]

    @property
    def n(self) -> int:
        return self.losses.shape[2]

    @property
    def test_loss(self) -> np.ndarray:
        return _train_loss(self.losses, 1 - self.membership)

    def table(self, j: int, t: int) -> LossTable:
        return LossTable(self.losses[j, t])

    def member(self, j: int, t: int) -> MembershipVector:
        return MembershipVector(self.membership[j, t])

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "schema": SCHEMA_VERSION,
            "k1": self.k1,
            "k2": self.k2,
            "n": self.n,
            "granularity": self.granularity,
            "config": _jsonable(self.config),
            "losses": self.losses.tolist(),
            "membership": self.membership.tolist(),
            "r_seeds": self.r_seeds.tolist(),
            "train_loss": self.train_loss.tolist(),
            "population_loss": None if self.population_loss is None else self.population_loss.tolist(),
        }
        for name in ("features", "labels", "hypothesis_ids", "predictions"):
            arr = getattr(self, name)
            out[name] = None if arr is None else arr.tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrialBatch":
        if data.get("schema") != SCHEMA_VERSION:
            raise DomainError(f"unsupported batch schema {data.get('schema')!r}")
        opt = {}
        for name in ("population_loss", "features", "labels", "hypothesis_ids", "predictions"):
            if data.get(name) is not None:
                opt[name] = np.asarray(data[name])
        return cls(
            losses=np.asarray(data["losses"], dtype=np.float64),
            membership=np.asarray(data["membership"], dtype=np.int8),
            r_seeds=np.asarray(data["r_seeds"], dtype=np.int64),
            train_loss=np.asarray(data["train_loss"], dtype=np.float64),
            granularity=data.get("granularity", "binary"),
            config=data.get("config", {}),
            **opt,
        )

    @classmethod
    def from_json(cls, text: str) -> "TrialBatch":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k1_idx", "k2_idx", "i", "loss0", "loss1", "s_i", "r_seed"])
        for j in range(self.k1):
            for t in range(self.k2):
                for i in range(self.n):
                    w.writerow([j, t, i, repr(float(self.losses[j, t, i, 0])),
                                repr(float(self.losses[j, t, i, 1])),
                                int(self.membership[j, t, i]), int(self.r_seeds[j, t])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, granularity: str = "binary") -> "TrialBatch":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise DimensionError("empty CSV batch")
        k1 = 1 + max(int(r["k1_idx"]) for r in rows)
        k2 = 1 + max(int(r["k2_idx"]) for r in rows)
        n = 1 + max(int(r["i"]) for r in rows)
        if len(rows) != k1 * k2 * n:
            raise DimensionError(f"CSV has {len(rows)} rows, expected {k1 * k2 * n}")
        losses = np.zeros((k1, k2, n, 2))
        membership = np.zeros((k1, k2, n), dtype=np.int8)
        r_seeds = np.zeros((k1, k2), dtype=np.int64)
        for r in rows:
            j, t, i = int(r["k1_idx"]), int(r["k2_idx"]), int(r["i"])
            losses[j, t, i] = (float(r["loss0"]), float(r["loss1"]))
            membership[j, t, i] = int(r["s_i"])
            r_seeds[j, t] = int(r["r_seed"])
        return cls(losses=losses, membership=membership, r_seeds=r_seeds,
                   train_loss=_train_loss(losses, membership), granularity=granularity)


def _train_loss(losses: np.ndarray, membership: np.ndarray) -> np.ndarray:
    """Row-major mean of the selected column, identical summation order everywhere."""
    picked = np.where(membership.astype(bool), losses[..., 1], losses[..., 0])
    return picked.sum(axis=-1) / losses.shape[-2]
