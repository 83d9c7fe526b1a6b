"""Generalization bounds as pure functions of estimated information quantities.

Bounds on a loss are clamped to [0, 1]; the unclamped number is kept in
``raw_value``.  Information arguments are in nats.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .core import BoundReport, DomainError, EstimationError, NatarajanSpec
from .divergence import invert_kl, invert_kl_affine, invert_kl_half, optimize_linear_gamma

INTERPOLATION_ATOL = 1e-9
AFFINE_GRID = ((1.0, 0.0), (0.0, 1.0), (1.0, -1.0), (2.0, -1.0))

BOUND_NAMES = (
    "sqrt_integrated",
    "sqrt_disintegrated",
    "squared",
    "r_conditioned_sqrt",
    "linear",
    "interpolation",
    "binary_kl",
    "binary_kl_disintegrated",
    "kl_interp_disintegrated",
    "affine_kl",
    "mi_seeger",
)


def _nonneg(values, what: str = "information") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise EstimationError(f"no {what} values given")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError(f"{what} values must be finite and non-negative")
    return arr


def _check_unit(x: float, what: str) -> None:
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"{what} must lie in [0, 1], got {x}")


def _loss_report(name: str, raw: float, target: str = "population_loss", **kw) -> BoundReport:
    raw = float(raw)
    value = min(max(raw, 0.0), 1.0)
    return BoundReport(name=name, value=value, raw_value=raw, target=target,
                       vacuous=raw >= 1.0, **kw)


# --- square-root family ------------------------------------------------------

def sqrt_bound_integrated(per_i_ecmi: Sequence[float]) -> BoundReport:
    """(1/n) sum_i sqrt(2 I_i), bounding the absolute expected gap."""
    info = _nonneg(per_i_ecmi).ravel()
    raw = float(np.mean(np.sqrt(2.0 * info)))
    return _loss_report("sqrt_integrated", raw, target="gap", intermediates={"ecmi": info})


def sqrt_bound_disintegrated(per_supersample_per_i: np.ndarray) -> BoundReport:
    """Square roots taken per supersample draw, then averaged; rows are draws, columns rows i."""
    info = np.atleast_2d(_nonneg(per_supersample_per_i))
    raw = float(np.mean(np.mean(np.sqrt(2.0 * info), axis=0)))
    return _loss_report("sqrt_disintegrated", raw, target="gap",
                        intermediates={"ecmi_mean": info.mean(axis=0)})


def squared_bound(full_ecmi: float, m: int) -> BoundReport:
    """(8/m)(I + 2) on the mean squared gap over a size-m subset; vacuous above 1."""
    if m < 1:
        raise DomainError("m must be >= 1")
    info = float(_nonneg([full_ecmi])[0])
    raw = 8.0 / m * (info + 2.0)
    # reported unclamped: the target is a squared gap, and the excess shows how far off it is
    return BoundReport(name="squared", value=raw, raw_value=raw, target="squared_gap",
                       vacuous=raw >= 1.0, intermediates={"m": m, "ecmi": info})


def r_conditioned_sqrt_bound(per_i_r_conditioned: np.ndarray) -> BoundReport:
    """Mean of sqrt(2 I_i^{z,r}) over all (supersample, r) draws and rows.

    Accepts any array whose last axis indexes rows i; leading axes are draws.
    """
    info = np.atleast_2d(_nonneg(per_i_r_conditioned))
    flat = info.reshape(-1, info.shape[-1])
    raw = float(np.mean(np.mean(np.sqrt(2.0 * flat), axis=0)))
    return _loss_report("r_conditioned_sqrt", raw, target="gap",
                        intermediates={"draws": flat.shape[0]})


# --- linear and interpolation ------------------------------------------------

def linear_bound(train_loss: float, info: float) -> BoundReport:
    gamma, raw = optimize_linear_gamma(train_loss, info)
    return _loss_report("linear", raw, intermediates={
        "train_loss": train_loss, "ecmi": info, "gamma1": gamma.gamma1, "gamma2": gamma.gamma2})


def interpolation_bound(train_loss: float, info: float) -> BoundReport:
    _check_unit(train_loss, "training loss")
    info = float(_nonneg([info])[0])
    raw = info / math.log(2.0)
    if train_loss > INTERPOLATION_ATOL:
        return BoundReport(name="interpolation", value=raw, raw_value=raw, applicable=False,
                           note="needs zero training loss; training loss is positive",
                           intermediates={"train_loss": train_loss, "ecmi": info})
    return _loss_report("interpolation", raw, intermediates={"train_loss": train_loss, "ecmi": info})


# --- binary KL family --------------------------------------------------------

def binary_kl_bound(train_loss: float, info: float) -> BoundReport:
    info = float(_nonneg([info])[0])
    raw = invert_kl_half(train_loss, info)
    return _loss_report("binary_kl", raw, intermediates={"train_loss": train_loss, "ecmi": info})


def binary_kl_bound_disintegrated(train_losses: Sequence[float], infos: Sequence[float]) -> BoundReport:
    """Inversion per supersample draw, then the mean over draws."""
    lhat = np.asarray(train_losses, dtype=np.float64).ravel()
    info = _nonneg(infos).ravel()
    if lhat.shape != info.shape:
        raise DomainError("need one training loss per information value")
    per_draw = np.array([invert_kl_half(float(q), float(c)) for q, c in zip(lhat, info)])
    # loss bound per draw is at most 1
    raw = float(np.mean(per_draw))
    value = float(np.mean(np.minimum(per_draw, 1.0)))
    return BoundReport(name="binary_kl_disintegrated", value=value, raw_value=raw,
                       vacuous=value >= 1.0, intermediates={"per_draw": per_draw})


def kl_interp_bound_disintegrated(infos: Sequence[float], train_losses: Sequence[float] | None = None
                                  ) -> BoundReport:
    """Mean over draws of 2 - 2exp(-B); only valid for interpolating learners."""
    info = _nonneg(infos).ravel()
    per_draw = -2.0 * np.expm1(-info)
    raw = float(np.mean(per_draw))
    value = float(np.mean(np.minimum(per_draw, 1.0)))
    applicable = train_losses is None or bool(np.all(np.asarray(train_losses) <= INTERPOLATION_ATOL))
    return BoundReport(name="kl_interp_disintegrated", value=value, raw_value=raw,
                       applicable=applicable, vacuous=value >= 1.0,
                       note="" if applicable else "needs zero training loss; training loss is positive",
                       intermediates={"per_draw": per_draw})


def affine_kl_bound(train_loss: float, info: float, a: float | None = None,
                    b: float | None = None) -> BoundReport:
    """Affine-transformed inversion; without (a, b) the small default grid is scanned."""
    info = float(_nonneg([info])[0])
    pairs = AFFINE_GRID if a is None else ((float(a), float(b)),)
    values = [invert_kl_affine(train_loss, info, pa, pb) for pa, pb in pairs]
    k = int(np.argmin(values))
    return _loss_report("affine_kl", values[k], intermediates={
        "a": pairs[k][0], "b": pairs[k][1],
        "grid": [[pa, pb, v] for (pa, pb), v in zip(pairs, values)]})


def mi_seeger_bound(train_loss: float, per_i_mi: Sequence[float]) -> BoundReport:
    """Standard-setting bound: sup{p : d(L_train || p) <= mean_i I(W; Z_i)}."""
    info = _nonneg(per_i_mi).ravel()
    c = float(np.mean(info))
    return _loss_report("mi_seeger", invert_kl(train_loss, c),
                        intermediates={"train_loss": train_loss, "mi": c})


# --- high-probability bounds -------------------------------------------------

def _check_tail(n: int, delta: float) -> None:
    if n < 2:
        raise DomainError("n must be >= 2")
    if not 0.0 < delta < 1.0:
        raise DomainError("delta must lie in (0, 1)")


def highprob_sqrt_bound(kl: float, n: int, delta: float) -> float:
    _check_tail(n, delta)
    return math.sqrt(2.0 / (n - 1) * (kl + math.log(math.sqrt(n) / delta)))


def highprob_kl_rhs(kl: float, n: int, delta: float) -> float:
    _check_tail(n, delta)
    return (kl + math.log(2.0 * math.sqrt(n) / delta)) / n


def highprob_kl_bound(kl: float, n: int, delta: float, train_loss: float) -> float:
    """Half-mixture inversion of the tail right-hand side, capped at 1."""
    return min(invert_kl_half(train_loss, highprob_kl_rhs(kl, n, delta)), 1.0)


class SingleDrawBounds(NamedTuple):
    sqrt_value: float
    kl_value: float
    floored: bool


def single_draw_bounds(density: float, n: int, delta: float, train_loss: float) -> SingleDrawBounds:
    """Tail bounds driven by the information density of the realized draw.

    The density can be negative; the bracketed sums are floored at 0 and
    ``floored`` reports whether that happened.
    """
    _check_tail(n, delta)
    s_arg = density + math.log(math.sqrt(n) / delta)
    k_arg = density + math.log(2.0 * math.sqrt(n) / delta)
    floored = s_arg < 0 or k_arg < 0
    sqrt_value = math.sqrt(2.0 / (n - 1) * max(s_arg, 0.0))
    kl_value = min(invert_kl_half(train_loss, max(k_arg, 0.0) / n), 1.0)
    return SingleDrawBounds(sqrt_value, kl_value, floored)


# --- Natarajan-dimension instantiations --------------------------------------

def natarajan_cmi_cap(spec: NatarajanSpec) -> float:
    pairs = math.comb(spec.n_labels, 2)
    return spec.d_n * math.log(pairs * 2.0 * math.e * spec.n / spec.d_n)


def natarajan_sqrt_bound(spec: NatarajanSpec) -> float:
    return math.sqrt(2.0 * natarajan_cmi_cap(spec) / spec.n)


def natarajan_highprob_rhs(spec: NatarajanSpec, delta: float) -> float:
    _check_tail(spec.n, delta)
    n = spec.n
    return (natarajan_cmi_cap(spec) + math.log(2.0 / delta) + math.log(4.0 * math.sqrt(n) / delta)) / n


def natarajan_highprob_kl_bound(spec: NatarajanSpec, delta: float, train_loss: float) -> float:
    return min(invert_kl_half(train_loss, natarajan_highprob_rhs(spec, delta)), 1.0)


def growth_function_cap(d_n: int, n_labels: int, m: int) -> tuple[int, float]:
    """Exact sum_{i <= d} C(m, i) C(N, 2)^i and its (C(N, 2) e m / d)^d cap."""
    if d_n < 0 or m < 0 or n_labels < 2:
        raise DomainError("need d_N >= 0, m >= 0 and N >= 2")
    pairs = math.comb(n_labels, 2)
    exact = sum(math.comb(m, i) * pairs ** i for i in range(d_n + 1))
    upper = 1.0 if d_n == 0 else (pairs * math.e * m / d_n) ** d_n
    return exact, upper
