"""Plug-in estimators for the information terms in the bounds.

Everything here is in nats and uses the maximum-likelihood (plug-in) estimate
unless a correction is asked for explicitly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import DimensionError, DomainError, EstimationError, TrialBatch

EXACT_MAX_N = 14
DEFAULT_BINS = {"binary": 2, "continuous": 10}


class AbsoluteContinuityError(EstimationError):
    """The realized table has zero probability under the modeled law."""


class SampledModeWarning(UserWarning):
    """Plug-in over sampled membership vectors; biased upwards."""


@dataclass(frozen=True)
class DiscreteJointHistogram:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise DimensionError("joint histogram must be two-dimensional")
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise DomainError("counts must be non-negative integers")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_codes(cls, x: np.ndarray, y: np.ndarray, nx: int | None = None,
                   ny: int | None = None) -> "DiscreteJointHistogram":
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        if x.shape != y.shape:
            raise DimensionError("paired samples must have equal length")
        nx = int(x.max()) + 1 if nx is None else nx
        ny = int(y.max()) + 1 if ny is None else ny
        flat = np.bincount(x * ny + y, minlength=nx * ny)
        return cls(flat.reshape(nx, ny))


def plugin_mi(hist: DiscreteJointHistogram, correction: str | None = None) -> float:
    """Plug-in mutual information of the empirical joint, in nats.

    ``correction="miller-madow"`` adds the first-order bias term of each entropy
    (result floored at 0).
    """
    total = hist.total
    if total < 1:
        raise EstimationError("empty histogram")
    c = hist.counts.astype(np.float64)
    px = c.sum(axis=1)
    py = c.sum(axis=0)
    nz = c > 0
    # sum over occupied cells of p(x,y) log(p(x,y) / p(x)p(y)), counts form
    outer = np.outer(px, py)
    mi = float(np.sum(c[nz] * np.log(c[nz] * total / outer[nz])) / total)
    mi = max(mi, 0.0)
    if correction is None:
        return mi
    if correction != "miller-madow":
        raise DomainError(f"unknown correction {correction!r}")
    kx, ky, kxy = int(np.count_nonzero(px)), int(np.count_nonzero(py)), int(np.count_nonzero(c))
    return max(mi + ((kx - 1) + (ky - 1) - (kxy - 1)) / (2.0 * total), 0.0)


def discretize_losses(values, bins: int) -> np.ndarray:
    """Bin codes ``min(floor(v * bins), bins - 1)``; bin edges belong to the upper bin."""
    if bins < 2:
        raise DomainError("bins must be >= 2")
    v = np.asarray(values, dtype=np.float64)
    if np.any(~np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
        raise DomainError("losses must lie in [0, 1]")
    return np.minimum(np.floor(v * bins), bins - 1).astype(np.int64)


def _bins_for(batch: TrialBatch, bins: int | None) -> int:
    if bins is None:
        return DEFAULT_BINS[batch.granularity]
    return bins


def _check_draws(batch: TrialBatch, j: int) -> None:
    if batch.k2 < 2:
        raise EstimationError("e-CMI estimation needs k2 >= 2 membership draws per supersample")
    if not 0 <= j < batch.k1:
        raise DimensionError(f"supersample index {j} out of range")


def _row_codes(losses: np.ndarray, bins: int) -> np.ndarray:
    """Joint code of the two losses of each row; last axis of ``losses`` is the column."""
    codes = discretize_losses(losses, bins)
    return codes[..., 0] * bins + codes[..., 1]


def _samplewise(losses: np.ndarray, membership: np.ndarray, bins: int,
                correction: str | None = None) -> np.ndarray:
    """Per-row plug-in I(row losses; S_i) over draws; losses (k, n, 2), membership (k, n)."""
    codes = _row_codes(losses, bins)
    n = losses.shape[1]
    out = np.empty(n)
    for i in range(n):
        hist = DiscreteJointHistogram.from_codes(codes[:, i], membership[:, i], bins * bins, 2)
        out[i] = plugin_mi(hist, correction)
    return out


def ecmi_samplewise(batch: TrialBatch, supersample_idx: int, i: int, bins: int | None = None,
                    correction: str | None = None) -> float:
    """Plug-in I(loss row i; S_i) given one supersample draw, over its k2 draws."""
    _check_draws(batch, supersample_idx)
    if not 0 <= i < batch.n:
        raise DimensionError(f"row index {i} out of range")
    b = _bins_for(batch, bins)
    codes = _row_codes(batch.losses[supersample_idx, :, i, :], b)
    hist = DiscreteJointHistogram.from_codes(codes, batch.membership[supersample_idx, :, i], b * b, 2)
    return plugin_mi(hist, correction)


def ecmi_vector(batch: TrialBatch, supersample_idx: int, bins: int | None = None,
                correction: str | None = None) -> np.ndarray:
    _check_draws(batch, supersample_idx)
    b = _bins_for(batch, bins)
    return _samplewise(batch.losses[supersample_idx], batch.membership[supersample_idx], b, correction)


def ecmi_matrix(batch: TrialBatch, bins: int | None = None, correction: str | None = None) -> np.ndarray:
    """(k1, n) matrix of disintegrated samplewise e-CMI estimates."""
    return np.stack([ecmi_vector(batch, j, bins, correction) for j in range(batch.k1)])


def ecmi_average(batch: TrialBatch, supersample_idx: int, bins: int | None = None,
                 correction: str | None = None) -> float:
    return float(np.mean(ecmi_vector(batch, supersample_idx, bins, correction)))


def ecmi_r_conditioned(batch: TrialBatch, supersample_idx: int, bins: int | None = None,
                       correction: str | None = None) -> np.ndarray:
    """(n_r, n) per-R e-CMI estimates, each from the draws sharing one R seed."""
    _check_draws(batch, supersample_idx)
    b = _bins_for(batch, bins)
    seeds = batch.r_seeds[supersample_idx]
    rows = []
    for r in np.unique(seeds):
        sel = seeds == r
        if np.count_nonzero(sel) < 2:
            raise EstimationError(f"R seed {r} has fewer than 2 membership draws")
        rows.append(_samplewise(batch.losses[supersample_idx, sel], batch.membership[supersample_idx, sel],
                                b, correction))
    return np.stack(rows)


# --- full-table information --------------------------------------------------

def membership_index(bits) -> int:
    """Integer id of a membership vector, bit i holding s_i."""
    b = np.asarray(bits, dtype=np.int64)
    return int(np.sum(b << np.arange(b.size, dtype=np.int64)))


def all_memberships(n: int) -> np.ndarray:
    """All 2^n membership vectors, row k being the vector with index k."""
    if n > EXACT_MAX_N:
        raise EstimationError(f"exact enumeration limited to n <= {EXACT_MAX_N}")
    idx = np.arange(2 ** n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(np.int8)


def _table_key(table: np.ndarray) -> bytes:
    return np.ascontiguousarray(table, dtype=np.float64).tobytes()


class TableLaw:
    """Exact law of the full loss table for every membership vector of one supersample.

    ``tables`` (A, n, 2) are the distinct tables ("atoms").  A deterministic
    learner gives ``assign`` (2^n,) with the atom of each membership vector; a
    randomized one gives ``probs`` (2^n, A) with P(atom | s).
    """

    def __init__(self, tables: np.ndarray, assign: np.ndarray | None = None,
                 probs: np.ndarray | None = None):
        if (assign is None) == (probs is None):
            raise DomainError("give exactly one of assign / probs")
        self.tables = np.asarray(tables, dtype=np.float64)
        self.n = self.tables.shape[1]
        self.n_atoms = self.tables.shape[0]
        self._index = {_table_key(t): a for a, t in enumerate(self.tables)}
        if assign is not None:
            self.assign = np.asarray(assign, dtype=np.int64)
            if self.assign.shape != (2 ** self.n,):
                raise DimensionError("assign must list one atom per membership vector")
            self.probs = None
            self.marginal = np.bincount(self.assign, minlength=self.n_atoms) / self.assign.size
        else:
            self.assign = None
            self.probs = np.asarray(probs, dtype=np.float64)
            if self.probs.shape != (2 ** self.n, self.n_atoms):
                raise DimensionError("probs must be (2^n, atoms)")
            if not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-9):
                raise DomainError("each row of probs must sum to 1")
            self.marginal = self.probs.mean(axis=0)

    @property
    def deterministic(self) -> bool:
        return self.assign is not None

    def atom_of(self, table: np.ndarray) -> int:
        key = _table_key(table)
        if key not in self._index:
            raise AbsoluteContinuityError("table is not in the support of the modeled law")
        return self._index[key]

    def conditional(self, s_index: int) -> np.ndarray:
        if self.assign is not None:
            row = np.zeros(self.n_atoms)
            row[self.assign[s_index]] = 1.0
            return row
        return self.probs[s_index]

    def kl_at(self, s_index: int) -> float:
        """D(P_{table | s} || P_{table}) for one membership vector."""
        if self.assign is not None:
            return float(-np.log(self.marginal[self.assign[s_index]]))
        p = self.probs[s_index]
        nz = p > 0
        return float(max(np.sum(p[nz] * np.log(p[nz] / self.marginal[nz])), 0.0))

    def kl_all(self) -> np.ndarray:
        if self.assign is not None:
            return -np.log(self.marginal[self.assign])
        p = self.probs
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, p * np.log(p / self.marginal[None, :]), 0.0)
        return np.maximum(terms.sum(axis=1), 0.0)

    def conditional_mi(self) -> float:
        """I(table; S | supersample) = mean over s of kl_at(s)."""
        return float(np.mean(self.kl_all()))

    def info_density(self, s_index: int, atom: int) -> float:
        p_cond = self.conditional(s_index)[atom]
        p_marg = self.marginal[atom]
        if p_cond <= 0 or p_marg <= 0:
            raise AbsoluteContinuityError("realized table has zero probability under the modeled law")
        return float(np.log(p_cond / p_marg))


def _discrete_tables(batch: TrialBatch, j: int, bins: int | None) -> np.ndarray:
    if batch.granularity == "binary":
        return batch.losses[j]
    if bins is None:
        raise EstimationError("continuous losses need an explicit bin count for table-level estimates")
    return discretize_losses(batch.losses[j], bins).astype(np.float64)


def full_table_kl(batch: TrialBatch, supersample_idx: int, law: TableLaw | None = None,
                  sr_idx: int | None = None, bins: int | None = None) -> float:
    """D(P_{table | Z~, S} || P_{table | Z~}).

    Exact mode (``law`` given): the KL at the membership vector of draw
    ``sr_idx``, or, without ``sr_idx``, its average over the batch's draws.
    Sampled mode: plug-in I(table; S) over the k2 drawn membership vectors,
    which is biased upwards; a warning says so.
    """
    if law is None:
        _check_draws(batch, supersample_idx)
    tables = _discrete_tables(batch, supersample_idx, bins)
    members = batch.membership[supersample_idx]
    if law is not None:
        if law.n != batch.n:
            raise DimensionError("law and batch disagree on n")
        draws = range(batch.k2) if sr_idx is None else [sr_idx]
        return float(np.mean([law.kl_at(membership_index(members[t])) for t in draws]))
    warnings.warn("sampled-mode table KL is a plug-in estimate over drawn membership vectors "
                  "and is biased upwards", SampledModeWarning, stacklevel=2)
    keys = {}
    t_ids = np.array([keys.setdefault(_table_key(tables[t]), len(keys)) for t in range(batch.k2)])
    s_keys = {}
    s_ids = np.array([s_keys.setdefault(membership_index(members[t]), len(s_keys)) for t in range(batch.k2)])
    return plugin_mi(DiscreteJointHistogram.from_codes(t_ids, s_ids, len(keys), len(s_keys)))


def information_density(batch: TrialBatch, supersample_idx: int, sr_idx: int, law: TableLaw,
                        bins: int | None = None) -> float:
    """log P_{table|Z~,S}(table) / P_{table|Z~}(table) at the realized draw; may be negative."""
    tables = _discrete_tables(batch, supersample_idx, bins)
    atom = law.atom_of(tables[sr_idx])
    s = membership_index(batch.membership[supersample_idx, sr_idx])
    return law.info_density(s, atom)


# --- standard (non-supersample) setting and data-processing chain ------------

def samplewise_mi_standard(hypothesis_ids, example_ids, correction: str | None = None) -> float:
    """Plug-in I(hypothesis; Z_i) from paired samples of hypothesis id and i-th example id."""
    h = np.asarray(hypothesis_ids, dtype=np.int64)
    z = np.asarray(example_ids, dtype=np.int64)
    if h.size == 0:
        raise EstimationError("no samples")
    _, h = np.unique(h, return_inverse=True)
    _, z = np.unique(z, return_inverse=True)
    return plugin_mi(DiscreteJointHistogram.from_codes(h, z), correction)


def _category_mi(keys_per_draw, s_bits) -> float:
    ids = {}
    codes = np.array([ids.setdefault(k, len(ids)) for k in keys_per_draw])
    return plugin_mi(DiscreteJointHistogram.from_codes(codes, np.asarray(s_bits), len(ids), 2))


def information_chain(batch: TrialBatch, supersample_idx: int, i: int) -> tuple[float, float, float]:
    """Plug-in I(losses_i; S_i), I(predictions_i; S_i), I(hypothesis; S_i) on the same draws."""
    if batch.predictions is None or batch.hypothesis_ids is None:
        raise EstimationError("batch carries no predictions / hypothesis ids")
    _check_draws(batch, supersample_idx)
    s = batch.membership[supersample_idx, :, i]
    losses = batch.losses[supersample_idx, :, i, :]
    preds = batch.predictions[supersample_idx, :, i, :]
    hyps = batch.hypothesis_ids[supersample_idx]
    i_loss = _category_mi([tuple(r) for r in losses.tolist()], s)
    i_pred = _category_mi([tuple(r) for r in preds.tolist()], s)
    i_hyp = _category_mi(hyps.tolist(), s)
    return i_loss, i_pred, i_hyp
