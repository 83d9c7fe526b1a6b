"""Binary KL divergence, its linear-in-q lower bound, and the inversions used
by the bounds.

All logarithms are natural.  Probabilities are clamped only inside logs.
"""

from __future__ import annotations

import math

import numpy as np

from .core import DomainError, GammaPair

BISECT_TOL = 1e-10
_LOG_FLOOR = 1e-300
_LOG_CEIL = 1.0 - 1e-16

# gamma range searched when taking sup_gamma d_gamma numerically
GAMMA_SEARCH = (-50.0, 50.0)


def _check_prob(x: float, name: str) -> None:
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {x}")


def _log_ratio(x: float, y: float) -> float:
    """log(x / y) for positive x, y; log1p form when the ratio is near 1."""
    if 0.5 < x / y < 2.0:
        return math.log1p((x - y) / y)
    return math.log(x) - math.log(y)


def binary_kl(q: float, p: float) -> float:
    """d(q || p) in nats, with 0 log 0 = 0; +inf when p is 0 or 1 and q differs."""
    _check_prob(q, "q")
    _check_prob(p, "p")
    if q == p:
        return 0.0
    # log1p of the differences keeps d accurate when p is close to q
    out = 0.0
    if q > 0.0:
        if p == 0.0:
            return math.inf
        out += q * _log_ratio(q, p)
    if q < 1.0:
        if p == 1.0:
            return math.inf
        out += (1.0 - q) * _log_ratio(1.0 - q, 1.0 - p)
    # rounding can make d(p||p) a hair negative
    return max(out, 0.0)


def d_gamma(q: float, p: float, gamma: float) -> float:
    """gamma*q - log(1 - p + p*e^gamma); its supremum over gamma is d(q || p)."""
    _check_prob(q, "q")
    _check_prob(p, "p")
    # log(1 - p + p e^g) computed stably for large |g|
    if gamma >= 0:
        lse = gamma + math.log((1.0 - p) * math.exp(-gamma) + p) if p > 0 else 0.0
    else:
        lse = math.log1p(p * math.expm1(gamma))
    return gamma * q - lse


def sup_d_gamma(q: float, p: float, lo: float = GAMMA_SEARCH[0], hi: float = GAMMA_SEARCH[1],
                points: int = 20001) -> float:
    """Numerical sup over a gamma grid on [lo, hi], refined by golden-section search.

    d_gamma is concave in gamma, so a grid bracket plus golden section finds the
    maximum on the interval.
    """
    grid = np.linspace(lo, hi, points)
    vals = np.array([d_gamma(q, p, g) for g in grid])
    k = int(np.argmax(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, points - 1)]
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = d_gamma(q, p, c), d_gamma(q, p, d)
    for _ in range(200):
        if b - a < 1e-12:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = d_gamma(q, p, c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = d_gamma(q, p, d)
    return max(float(vals[k]), fc, fd)


def _bisect_sup(feasible, lo: float, hi: float, tol: float = BISECT_TOL) -> float:
    """Largest x in [lo, hi] with feasible(x), given feasible(lo) and a monotone set."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def invert_kl_half(q: float, c: float) -> float:
    """sup{p : d(q || (q+p)/2) <= c}, searched over p in [q, 2 - q].

    The upper end is where the mixture (q+p)/2 reaches 1, so the result is the
    unclamped inversion: for q = 0 it equals 2 - 2e^{-c} for every c >= 0.
    Values above 1 are vacuous as loss bounds; callers that report a loss
    clamp them.  p -> d(q || (q+p)/2) is zero at p = q and nondecreasing, so
    bisection finds the supremum.
    """
    _check_prob(q, "q")
    if not c >= 0:
        raise DomainError(f"c must be non-negative, got {c}")
    if c == 0:
        return q
    top = 2.0 - q
    if binary_kl(q, 0.5 * (q + top)) <= c:
        return top
    return _bisect_sup(lambda p: binary_kl(q, min(0.5 * (q + p), 1.0)) <= c, q, top)


def invert_kl(q: float, c: float) -> float:
    """Standard inversion sup{p in [q,1] : d(q || p) <= c}."""
    _check_prob(q, "q")
    if not c >= 0:
        raise DomainError(f"c must be non-negative, got {c}")
    if c == 0:
        return q
    if binary_kl(q, 1.0) <= c:
        return 1.0
    return _bisect_sup(lambda p: binary_kl(q, p) <= c, q, 1.0)


def g_ab(x: float, y: float, a: float, b: float) -> float:
    if a == 0 and b == 0:
        raise DomainError("g_ab needs (a, b) != (0, 0)")
    val = (a * x + b * y - min(a, b, a + b, 0.0)) / (abs(a) + abs(b))
    # exact in exact arithmetic; rounding can step outside by an ulp
    return min(max(val, 0.0), 1.0)


AFFINE_GRID_POINTS = 4096


def invert_kl_affine(q: float, c: float, a: float, b: float) -> float:
    """sup{p in [0,1] : d(g_ab(q,p) || g_ab(m,m)) <= c} with m = (q+p)/2.

    The feasible set need not be an interval for general (a, b), so the
    largest feasible point of a dense grid is located first and then refined by
    bisection towards the next (infeasible) grid point.
    """
    _check_prob(q, "q")
    if not c >= 0:
        raise DomainError(f"c must be non-negative, got {c}")
    if a == 0 and b == 0:
        raise DomainError("g_ab needs (a, b) != (0, 0)")

    def div(p: float) -> float:
        m = 0.5 * (q + p)
        return binary_kl(g_ab(q, p, a, b), g_ab(m, m, a, b))

    grid = np.linspace(0.0, 1.0, AFFINE_GRID_POINTS)
    ok = np.array([div(p) <= c for p in grid])
    # p = q is always feasible (both arguments coincide)
    if ok[-1]:
        return 1.0
    idx = np.flatnonzero(ok)
    k = int(idx[-1]) if idx.size else -1
    lo = grid[k] if k >= 0 else q
    if lo < q:
        lo = q
    hi = grid[k + 1] if k + 1 < grid.size else 1.0
    if hi <= lo:
        return float(lo)
    return _bisect_sup(lambda p: div(p) <= c, lo, hi)


# --- gamma constraint set -------------------------------------------------

FEASIBILITY_SLACK = 1e-12


def gamma_constraint(gamma1: float, gamma2: float) -> float:
    return gamma1 * (1.0 - gamma2) + (math.expm1(gamma1) - gamma1) * (1.0 + gamma2 * gamma2)


def gamma_feasible(gamma: GammaPair) -> bool:
    return gamma_constraint(gamma.gamma1, gamma.gamma2) <= FEASIBILITY_SLACK


def _interp_gamma_gap(g: float) -> float:
    e = math.expm1(g)
    return g * g - 4.0 * e * (e - g)


def optimal_interp_gamma(lo: float = 0.3, hi: float = 0.4, tol: float = BISECT_TOL) -> float:
    """Largest gamma1 for which the gamma constraint admits some gamma2.

    That is the root of g^2 - 4(e^g - 1)(e^g - 1 - g) on [0.3, 0.4].
    """
    if not (_interp_gamma_gap(lo) > 0 > _interp_gamma_gap(hi)):
        raise DomainError("no sign change of the gamma1 boundary function on the bracket")
    return _bisect_sup(lambda g: _interp_gamma_gap(g) >= 0, lo, hi, tol)


def min_feasible_gamma2(gamma1):
    """Smallest gamma2 with (gamma1, gamma2) in the constraint set.

    For fixed gamma1 the constraint is a quadratic in gamma2,
    c*g2^2 - gamma1*g2 + (gamma1 + c) <= 0 with c = e^gamma1 - 1 - gamma1,
    whose discriminant is the boundary function above.  Returns nan where no
    gamma2 is feasible.  Accepts scalars or arrays.
    """
    g1 = np.asarray(gamma1, dtype=np.float64)
    c = np.expm1(g1) - g1
    disc = g1 * g1 - 4.0 * c * np.expm1(g1)
    with np.errstate(invalid="ignore"):
        # rationalized smaller root: (g1 - sqrt(disc)) / (2c) = 2(g1 + c) / (g1 + sqrt(disc))
        root = 2.0 * (g1 + c) / (g1 + np.sqrt(np.maximum(disc, 0.0)))
    out = np.where(disc >= -1e-15, root, np.nan)
    return float(out) if out.ndim == 0 else out


def min_feasible_gamma2_bisect(gamma1: float, hi: float = 1e6) -> float:
    """Same quantity by bisection on the constraint (used as a cross-check)."""
    c = math.expm1(gamma1) - gamma1
    # vertex of the quadratic: the constraint is decreasing in gamma2 up to here
    vertex = gamma1 / (2.0 * c)
    if gamma_constraint(gamma1, vertex) > FEASIBILITY_SLACK:
        return math.nan
    # constraint at gamma2 = 0 equals e^gamma1 - 1 > 0, so the root lies in (0, vertex]
    lo_, hi_ = 0.0, vertex
    # bisect to float resolution; the vertex can be far larger than the root
    while True:
        mid = 0.5 * (lo_ + hi_)
        if mid in (lo_, hi_):
            break
        if gamma_constraint(gamma1, mid) <= 0:
            hi_ = mid
        else:
            lo_ = mid
    return hi_


LINEAR_GRID_POINTS = 2048
LINEAR_GRID_MIN = 1e-4


def linear_gamma_grid(points: int = LINEAR_GRID_POINTS) -> tuple[np.ndarray, np.ndarray]:
    g1 = np.geomspace(LINEAR_GRID_MIN, optimal_interp_gamma(), points)
    return g1, min_feasible_gamma2(g1)


_GRID_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _cached_grid(points: int) -> tuple[np.ndarray, np.ndarray]:
    if points not in _GRID_CACHE:
        _GRID_CACHE[points] = linear_gamma_grid(points)
    return _GRID_CACHE[points]


def optimize_linear_gamma(train_loss: float, info: float,
                          points: int = LINEAR_GRID_POINTS) -> tuple[GammaPair, float]:
    """Minimize gamma2*train_loss + info/gamma1 over the feasible set.

    For each gamma1 on a log grid the objective is increasing in gamma2, so the
    smallest feasible gamma2 is used.
    """
    _check_prob(train_loss, "train_loss")
    if not info >= 0:
        raise DomainError(f"information must be non-negative, got {info}")
    g1, g2 = _cached_grid(points)
    obj = g2 * train_loss + info / g1
    k = int(np.nanargmin(obj))
    return GammaPair(float(g1[k]), float(g2[k])), max(float(obj[k]), 0.0)
