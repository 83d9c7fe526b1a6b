"""Numerical checks of the concentration inequalities behind the bounds.

Exact checks enumerate every outcome; Monte Carlo checks allow three standard
errors of slack, since only upward violations of a "<= 1" statement matter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Any, Sequence

import numpy as np

from .bounds import highprob_kl_rhs, highprob_sqrt_bound, natarajan_highprob_rhs
from .core import DomainError, GammaPair, NatarajanSpec, _jsonable, rng_stream
from .divergence import binary_kl, gamma_feasible, min_feasible_gamma2
from .estimators import membership_index
from .simulate import (SEED_BOUND, SimConfig, draw_supersample, exact_table_law, loss_tables,
                       run_learner, threshold_class)

EXACT_SLACK = 1e-12
MC_SIGMAS = 3.0
EXACT_MAX_COORDS = 20


@dataclass
class CheckResult:
    name: str
    statistic: float
    threshold: float
    passed: bool
    inputs: dict[str, Any] = field(default_factory=dict)
    note: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "inputs": _jsonable(self.inputs), "statistic": _jsonable(self.statistic),
                "threshold": _jsonable(self.threshold), "passed": bool(self.passed), "note": self.note}


def _d_gamma_vec(q: np.ndarray, p: float, gamma: float) -> np.ndarray:
    # log(1 - p + p e^gamma) is a constant here
    if gamma >= 0:
        lse = gamma + math.log((1.0 - p) * math.exp(-gamma) + p) if p > 0 else 0.0
    else:
        lse = math.log1p(p * math.expm1(gamma))
    return gamma * q - lse


def _binary_outcomes(n: int) -> np.ndarray:
    idx = np.arange(2 ** n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(np.float64)


def check_mcallester(means: Sequence[float], gamma: float, mode: str = "exact",
                     samples: int = 1_000_000, seed: int = 0) -> CheckResult:
    """E[exp(n d_gamma(empirical mean || mean of means))] <= 1 for independent X_i.

    ``exact`` treats the coordinates as Bernoulli and enumerates all outcomes.
    ``mc`` alternates Bernoulli (even coordinates) and Beta (odd coordinates,
    concentration 2) variables with the given means.
    """
    mu = np.asarray(means, dtype=np.float64)
    n = mu.size
    if n < 1 or np.any(mu < 0) or np.any(mu > 1):
        raise DomainError("means must be a non-empty list in [0, 1]")
    mbar = float(mu.mean())
    inputs = {"means": mu, "gamma": gamma, "mode": mode}
    if mode == "exact":
        if n > EXACT_MAX_COORDS:
            raise DomainError(f"exact mode handles at most {EXACT_MAX_COORDS} coordinates")
        X = _binary_outcomes(n)
        weights = np.prod(np.where(X == 1.0, mu, 1.0 - mu), axis=1)
        stat = float(np.sum(weights * np.exp(n * _d_gamma_vec(X.mean(axis=1), mbar, gamma))))
        threshold = 1.0 + EXACT_SLACK
        return CheckResult("mcallester", stat, threshold, stat <= threshold, inputs)
    if mode != "mc":
        raise DomainError("mode must be 'exact' or 'mc'")
    rng = rng_stream(seed, 0)
    total, total_sq, done = 0.0, 0.0, 0
    chunk = 100_000
    beta_cols = [i for i in range(n) if i % 2 == 1 and 0 < mu[i] < 1]
    while done < samples:
        size = min(chunk, samples - done)
        X = (rng.random((size, n)) < mu).astype(np.float64)
        for i in beta_cols:
            X[:, i] = rng.beta(2.0 * mu[i], 2.0 * (1.0 - mu[i]), size)
        v = np.exp(n * _d_gamma_vec(X.mean(axis=1), mbar, gamma))
        total += float(v.sum())
        total_sq += float((v * v).sum())
        done += size
    stat = total / done
    se = math.sqrt(max(total_sq / done - stat * stat, 0.0) / done)
    threshold = 1.0 + MC_SIGMAS * se
    inputs["samples"] = done
    return CheckResult("mcallester", stat, threshold, stat <= threshold, inputs, note=f"se={se:.3g}")


def maurer_statistic(n: int) -> Fraction:
    """E[exp(n d(k/n || 1/2))] for k ~ Binomial(n, 1/2), as an exact rational.

    exp(n d(k/n || 1/2)) = 2^n (k/n)^k (1 - k/n)^(n-k), so each term is
    C(n, k) k^k (n-k)^(n-k) / n^n.
    """
    return sum((Fraction(math.comb(n, k) * k ** k * (n - k) ** (n - k), n ** n) for k in range(n + 1)),
               Fraction(0))


def check_maurer_lower(n: int) -> CheckResult:
    if not 1 <= n <= 30:
        raise DomainError("exact enumeration supports 1 <= n <= 30")
    stat = float(maurer_statistic(n))
    return CheckResult("maurer_lower", stat, math.sqrt(n), stat >= math.sqrt(n), {"n": n},
                       note="passes when the statistic is at least sqrt(n)")


def steinke_mgf(a: float, b: float, gamma: GammaPair) -> float:
    g1, g2 = gamma.gamma1, gamma.gamma2
    return 0.5 * (math.exp(g1 * (a - g2 * b)) + math.exp(g1 * (b - g2 * a)))


def check_steinke_mgf(a: float, b: float, gamma: GammaPair) -> CheckResult:
    """Two-point variable on {a, b}: E[exp(g1 (X - g2 X_bar))] <= 1 for feasible gamma."""
    if not (0 <= a <= 1 and 0 <= b <= 1):
        raise DomainError("a and b must lie in [0, 1]")
    stat = steinke_mgf(a, b, gamma)
    feasible = gamma_feasible(gamma)
    threshold = 1.0 + EXACT_SLACK
    passed = stat <= threshold or not feasible
    return CheckResult("steinke_mgf", stat, threshold, passed,
                       {"a": a, "b": b, "gamma1": gamma.gamma1, "gamma2": gamma.gamma2, "feasible": feasible},
                       note="" if feasible else "gamma outside the constraint set; not required to hold")


def steinke_counterexample(gamma: GammaPair, points: int = 50) -> tuple[float, float, float] | None:
    """Best-effort search for (a, b) with mgf above 1; None when the grid finds none."""
    grid = np.linspace(0.0, 1.0, points)
    best = None
    for a, b in product(grid, grid):
        v = steinke_mgf(float(a), float(b), gamma)
        if v > 1.0 + EXACT_SLACK and (best is None or v > best[2]):
            best = (float(a), float(b), v)
    return best


def interp_mgf(b: float, gamma_large: float = 1e6) -> float:
    """(e^{b log 2} + e^{-b gamma log 2}) / 2, the a = 0 case."""
    if not 0 <= b <= 1:
        raise DomainError("b must lie in [0, 1]")
    ln2 = math.log(2.0)
    return 0.5 * (math.exp(b * ln2) + math.exp(-b * gamma_large * ln2))


def check_interp_mgf(b: float, gamma_large: float = 1e6) -> CheckResult:
    stat = interp_mgf(b, gamma_large)
    return CheckResult("interp_mgf", stat, 1.0 + 1e-9, stat <= 1.0 + 1e-9, {"b": b, "gamma": gamma_large})


def subgauss_mgf(values: np.ndarray, gamma: float) -> float:
    """E[exp(gamma * Delta)] by enumerating all 2^m sign patterns.

    Delta is the mean over rows j of v[j, S'_j] - v[j, 1 - S'_j] with S'_j
    uniform, so each term is symmetric with range at most 2.
    """
    v = np.asarray(values, dtype=np.float64)
    m = v.shape[0]
    diff = v[:, 0] - v[:, 1]
    signs = 1.0 - 2.0 * _binary_outcomes(m)
    delta = signs @ diff / m
    return float(np.mean(np.exp(gamma * delta)))


def check_subgauss_mgf(values: np.ndarray, gamma: float) -> CheckResult:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 2 or not 1 <= v.shape[0] <= 16:
        raise DomainError("values must be an m x 2 table with 1 <= m <= 16")
    if np.any(v < 0) or np.any(v > 1):
        raise DomainError("values must lie in [0, 1]")
    m = v.shape[0]
    stat = subgauss_mgf(v, gamma)
    threshold = math.exp(gamma * gamma / (2.0 * m)) + EXACT_SLACK
    return CheckResult("subgauss_mgf", stat, threshold, stat <= threshold, {"m": m, "gamma": gamma})


def feasible_gamma_pairs(count: int = 20) -> list[GammaPair]:
    """Pairs on the lower edge of the constraint set, nudged inside, for gamma1 in [0.02, 0.36]."""
    out = []
    for g1 in np.linspace(0.02, 0.36, count):
        g2 = float(min_feasible_gamma2(g1))
        c = math.expm1(g1) - g1
        vertex = g1 / (2.0 * c)
        out.append(GammaPair(float(g1), g2 + 1e-6 * (vertex - g2)))
    return out


# --- coverage of the tail bounds ---------------------------------------------

COVERAGE_BOUNDS = ("sqrt", "kl", "single_sqrt", "single_kl", "natarajan_kl")


@dataclass
class CoverageDraws:
    """Per-trial quantities of independent (supersample, S, R) draws, all exact."""

    n: int
    kl: np.ndarray
    density: np.ndarray
    train_mean: np.ndarray  # E_R training loss at the drawn (supersample, S)
    test_mean: np.ndarray
    train_single: np.ndarray  # training loss of the realized R
    test_single: np.ndarray


def coverage_draws(config: SimConfig, trials: int) -> CoverageDraws:
    cls = None if config.learner in ("memorizer", "constant") else threshold_class(
        config.K, config.N, config.breakpoints)
    cols = {k: np.empty(trials) for k in ("kl", "density", "tr", "te", "tr1", "te1")}
    for t in range(trials):
        stream = rng_stream(config.seed, t)
        x, y = draw_supersample(config, stream)
        s = stream.integers(0, 2, size=config.n)
        r = int(stream.integers(0, SEED_BOUND))
        exact = exact_table_law(config, x, y, cls)
        k = membership_index(s)
        h, _ = run_learner(config.learner, config, x, y, s[None, :], np.array([r]), cls)
        _, table = loss_tables(h, x, y)
        table = table[0]
        atom = exact.law.atom_of(table)
        rows = np.arange(config.n)
        cols["kl"][t] = exact.law.kl_at(k)
        cols["density"][t] = exact.law.info_density(k, atom)
        cols["tr"][t] = exact.train_mean[k]
        cols["te"][t] = exact.test_mean[k]
        cols["tr1"][t] = table[rows, s].mean()
        cols["te1"][t] = table[rows, 1 - s].mean()
    return CoverageDraws(config.n, cols["kl"], cols["density"], cols["tr"], cols["te"], cols["tr1"], cols["te1"])


@dataclass
class CoverageResult:
    bound: str
    delta: float
    trials: int
    violations: int
    rate: float
    threshold: float
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def _half_kl(train: float, test: float) -> float:
    return binary_kl(train, min(max(0.5 * (train + test), 0.0), 1.0))


def coverage_from_draws(draws: CoverageDraws, bound: str, delta: float,
                        spec: NatarajanSpec | None = None) -> CoverageResult:
    """Fraction of draws whose left side exceeds the bound's right side."""
    if bound not in COVERAGE_BOUNDS:
        raise DomainError(f"bound must be one of {COVERAGE_BOUNDS}")
    n = draws.n
    trials = draws.kl.size
    tol = 1e-9
    viol = 0
    for t in range(trials):
        if bound == "sqrt":
            bad = draws.test_mean[t] - draws.train_mean[t] > highprob_sqrt_bound(draws.kl[t], n, delta) + tol
        elif bound == "kl":
            bad = _half_kl(draws.train_mean[t], draws.test_mean[t]) > highprob_kl_rhs(draws.kl[t], n, delta) + tol
        elif bound == "single_sqrt":
            arg = max(draws.density[t] + math.log(math.sqrt(n) / delta), 0.0)
            bad = draws.test_single[t] - draws.train_single[t] > math.sqrt(2.0 / (n - 1) * arg) + tol
        elif bound == "single_kl":
            rhs = max(draws.density[t] + math.log(2.0 * math.sqrt(n) / delta), 0.0) / n
            bad = _half_kl(draws.train_single[t], draws.test_single[t]) > rhs + tol
        else:
            if spec is None:
                raise DomainError("the Natarajan bound needs a NatarajanSpec")
            bad = _half_kl(draws.train_mean[t], draws.test_mean[t]) > natarajan_highprob_rhs(spec, delta) + tol
        viol += int(bad)
    rate = viol / trials
    threshold = delta + MC_SIGMAS * math.sqrt(delta * (1.0 - delta) / trials)
    return CoverageResult(bound, delta, trials, viol, rate, threshold, rate <= threshold)


def coverage_test(bound: str, config: SimConfig, delta: float, trials: int,
                  spec: NatarajanSpec | None = None) -> CoverageResult:
    return coverage_from_draws(coverage_draws(config, trials), bound, delta, spec)


# --- default suite -------------------------------------------------------------

def default_suite(seed: int = 0, mc_samples: int = 200_000, maurer_n: Sequence[int] | None = None
                  ) -> list[CheckResult]:
    rng = rng_stream(seed, 0)
    out: list[CheckResult] = []
    for n in (maurer_n or range(1, 31)):
        out.append(check_maurer_lower(int(n)))
    if maurer_n is not None:
        return out
    for _ in range(10):
        means = rng.random(int(rng.integers(1, 11)))
        for g in (0.5, 1.0, 2.0, 4.0):
            out.append(check_mcallester(means, g))
    out.append(check_mcallester(rng.random(10), 2.0, mode="mc", samples=mc_samples, seed=seed))
    grid = np.linspace(0.0, 1.0, 11)
    for gamma in feasible_gamma_pairs(5):
        worst = max((steinke_mgf(float(a), float(b), gamma), float(a), float(b))
                    for a in grid for b in grid)
        out.append(check_steinke_mgf(worst[1], worst[2], gamma))
    for b in np.linspace(0.0, 1.0, 11):
        out.append(check_interp_mgf(float(b)))
    for m in (1, 2, 4, 8):
        for g in (-4.0, -1.0, 1.0, 4.0):
            out.append(check_subgauss_mgf(rng.random((m, 2)), g))
    return out
