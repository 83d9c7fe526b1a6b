"""Bound comparisons, region maps, and bound-versus-truth experiment reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import bounds as bd
from .core import SCHEMA_VERSION, BoundReport, TrialBatch, _jsonable
from .divergence import invert_kl_half, optimize_linear_gamma
from .estimators import (DiscreteJointHistogram, _bins_for, _row_codes, ecmi_matrix, ecmi_r_conditioned,
                         membership_index, plugin_mi)

# fixed colors shared by the heat map and the line chart
COLORS = {
    "interpolation": "#9467bd",
    "binary_kl": "#1f77b4",
    "linear": "#2ca02c",
    "sqrt": "#d62728",
    "trivial": "#bbbbbb",
}
REGION_LABELS = ("binary_kl", "linear", "sqrt", "trivial")
INTERP_GAMMA_THRESHOLD = 0.267


# --- interpolating setting -----------------------------------------------------

def interpolating_values(B: float) -> dict[str, float]:
    """The four bounds at zero training loss with every samplewise e-CMI equal to B."""
    return {
        "interpolation": B / math.log(2.0),
        "binary_kl": -2.0 * math.expm1(-B),
        "linear": optimize_linear_gamma(0.0, B)[1],
        "sqrt": math.sqrt(2.0 * B),
    }


@dataclass
class Ordering:
    B: float
    values: dict[str, float]
    order: list[str]

    def strictly_increasing(self, names: list[str]) -> bool:
        v = [self.values[k] for k in names]
        return all(a < b for a, b in zip(v, v[1:]))


def ordering_check(B: float) -> Ordering:
    if not B > 0:
        raise ValueError("B must be positive")
    values = interpolating_values(B)
    return Ordering(B, values, sorted(values, key=values.get))


def curves(B_grid) -> dict[str, np.ndarray]:
    """Bound curves over B at zero training loss."""
    B_grid = np.asarray(B_grid, dtype=np.float64)
    rows = [interpolating_values(float(b)) for b in B_grid]
    out = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    out["B"] = B_grid
    return out


# --- region map ----------------------------------------------------------------

def default_B_grid(points: int = 50) -> np.ndarray:
    return np.geomspace(1e-3, 1.0, points)


def default_L_grid(points: int = 50) -> np.ndarray:
    return np.linspace(0.0, 0.5, points)


def cell_values(B: float, L: float) -> dict[str, float]:
    """Binary KL, linear and square-root bounds at one (B, training loss) point."""
    return {
        "binary_kl": invert_kl_half(L, B),
        "linear": optimize_linear_gamma(L, B)[1],
        "sqrt": L + math.sqrt(2.0 * B),
    }


def cell_winner(values: dict[str, float]) -> str:
    name = min(("binary_kl", "linear", "sqrt"), key=lambda k: values[k])
    return name if values[name] < 1.0 else "trivial"


@dataclass
class RegionMap:
    B_grid: np.ndarray
    L_grid: np.ndarray
    labels: np.ndarray  # (len(L_grid), len(B_grid)) of label strings
    values: dict[str, np.ndarray]

    def label_set(self) -> set[str]:
        return set(np.unique(self.labels).tolist())

    def boundary_mask(self) -> np.ndarray:
        """Cells within half a cell of a region boundary (any 4-neighbour differs)."""
        lab = self.labels
        mask = np.zeros(lab.shape, dtype=bool)
        diff_r = lab[1:, :] != lab[:-1, :]
        diff_c = lab[:, 1:] != lab[:, :-1]
        mask[1:, :] |= diff_r
        mask[:-1, :] |= diff_r
        mask[:, 1:] |= diff_c
        mask[:, :-1] |= diff_c
        return mask

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["B", "train_loss", "binary_kl", "linear", "sqrt", "winner", "boundary"])
        band = self.boundary_mask()
        for r, L in enumerate(self.L_grid):
            for c, B in enumerate(self.B_grid):
                w.writerow([repr(float(B)), repr(float(L))] +
                           [repr(float(self.values[k][r, c])) for k in ("binary_kl", "linear", "sqrt")] +
                           [self.labels[r, c], int(band[r, c])])
        return buf.getvalue()


def region_map(B_grid=None, L_grid=None) -> RegionMap:
    B_grid = default_B_grid() if B_grid is None else np.asarray(B_grid, dtype=np.float64)
    L_grid = default_L_grid() if L_grid is None else np.asarray(L_grid, dtype=np.float64)
    shape = (L_grid.size, B_grid.size)
    vals = {k: np.empty(shape) for k in ("binary_kl", "linear", "sqrt")}
    labels = np.empty(shape, dtype=object)
    for r, L in enumerate(L_grid):
        for c, B in enumerate(B_grid):
            v = cell_values(float(B), float(L))
            for k in vals:
                vals[k][r, c] = v[k]
            labels[r, c] = cell_winner(v)
    return RegionMap(B_grid, L_grid, labels.astype(str), vals)


# --- SVG output ----------------------------------------------------------------

def _svg_header(width: int, height: int) -> list[str]:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
            f'<rect width="{width}" height="{height}" fill="white"/>']


def _legend(names, x: int, y: int) -> list[str]:
    out = []
    for k, name in enumerate(names):
        yy = y + 16 * k
        out.append(f'<rect x="{x}" y="{yy}" width="10" height="10" fill="{COLORS[name]}"/>')
        out.append(f'<text x="{x + 14}" y="{yy + 9}">{name}</text>')
    return out


def region_svg(rmap: RegionMap, width: int = 520, height: int = 400) -> str:
    """Heat map with log-B on the horizontal axis and training loss vertically."""
    left, top, plot_w, plot_h = 50, 20, width - 170, height - 60
    nr, nc = rmap.labels.shape
    cw, ch = plot_w / nc, plot_h / nr
    out = _svg_header(width, height)
    for r in range(nr):
        for c in range(nc):
            x = left + c * cw
            y = top + (nr - 1 - r) * ch
            out.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" '
                       f'fill="{COLORS[rmap.labels[r, c]]}"/>')
    out.append(f'<text x="{left + plot_w / 2:.0f}" y="{height - 15}" text-anchor="middle">'
               f'B (nats, log scale {rmap.B_grid[0]:.0e} to {rmap.B_grid[-1]:.0e})</text>')
    out.append(f'<text x="12" y="{top + plot_h / 2:.0f}" transform="rotate(-90 12 {top + plot_h / 2:.0f})" '
               f'text-anchor="middle">training loss ({rmap.L_grid[0]:g} to {rmap.L_grid[-1]:g})</text>')
    out += _legend(REGION_LABELS, left + plot_w + 15, top + 5)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def curves_svg(curve: dict[str, np.ndarray], width: int = 520, height: int = 400, y_max: float = 2.0) -> str:
    left, top, plot_w, plot_h = 50, 20, width - 170, height - 60
    B = curve["B"]
    lx = np.log10(B)
    span = lx[-1] - lx[0] if lx[-1] > lx[0] else 1.0
    out = _svg_header(width, height)
    out.append(f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>')
    names = ("interpolation", "binary_kl", "linear", "sqrt")
    for name in names:
        ys = np.minimum(curve[name], y_max)
        pts = " ".join(f"{left + (a - lx[0]) / span * plot_w:.2f},{top + plot_h - v / y_max * plot_h:.2f}"
                       for a, v in zip(lx, ys))
        out.append(f'<polyline fill="none" stroke="{COLORS[name]}" stroke-width="1.5" points="{pts}"/>')
    out.append(f'<text x="{left + plot_w / 2:.0f}" y="{height - 15}" text-anchor="middle">'
               f'B (nats, log scale)</text>')
    out.append(f'<text x="12" y="{top + plot_h / 2:.0f}" transform="rotate(-90 12 {top + plot_h / 2:.0f})" '
               f'text-anchor="middle">bound on population loss (0 to {y_max:g})</text>')
    out += _legend(names, left + plot_w + 15, top + 5)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def curves_csv(curve: dict[str, np.ndarray]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = ("interpolation", "binary_kl", "linear", "sqrt")
    w.writerow(["B", *names])
    for k, b in enumerate(curve["B"]):
        w.writerow([repr(float(b))] + [repr(float(curve[n][k])) for n in names])
    return buf.getvalue()


# --- experiment report ---------------------------------------------------------

def subset_ecmi(batch: TrialBatch, supersample_idx: int, m: int, bins: int | None = None) -> float:
    """Plug-in I(losses of rows U; S_U) for U the first m rows.

    Rows of a supersample are exchangeable, so a fixed U has the law of a
    uniformly drawn one.
    """
    b = _bins_for(batch, bins)
    codes = _row_codes(batch.losses[supersample_idx, :, :m, :], b)  # (k2, m)
    keys: dict[tuple, int] = {}
    x = np.array([keys.setdefault(tuple(row), len(keys)) for row in codes.tolist()])
    y = np.array([membership_index(s) for s in batch.membership[supersample_idx, :, :m]])
    return plugin_mi(DiscreteJointHistogram.from_codes(x, y, len(keys), 2 ** m))


def _se(per_draw: np.ndarray) -> float:
    per_draw = np.asarray(per_draw, dtype=np.float64)
    if per_draw.size < 2:
        return 0.0
    return float(per_draw.std(ddof=1) / math.sqrt(per_draw.size))


@dataclass
class ExperimentReport:
    bounds: list[BoundReport]
    gap: dict[str, float]
    validity: dict[str, bool]
    ecmi_mean: np.ndarray
    train_loss: float
    population_loss: float | None
    config: dict[str, Any] = field(default_factory=dict)

    def bound(self, name: str) -> BoundReport:
        for rep in self.bounds:
            if rep.name == name:
                return rep
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": SCHEMA_VERSION,
            "config": _jsonable(self.config),
            "train_loss": self.train_loss,
            "population_loss": self.population_loss,
            "gap": _jsonable(self.gap),
            "ecmi_mean": _jsonable(self.ecmi_mean),
            "validity": self.validity,
            "bounds": [r.to_dict() for r in self.bounds],
        }

    def table(self) -> str:
        lines = [f"{'bound':<26}{'value':>10}{'raw':>12}  {'applicable':<11}{'valid':<6}"]
        for r in self.bounds:
            valid = self.validity.get(r.name)
            lines.append(f"{r.name:<26}{r.value:>10.5f}{r.raw_value:>12.5f}  {str(r.applicable):<11}"
                         f"{'-' if valid is None else str(valid):<6}")
        g = self.gap
        lines.append(f"true gap {g['mean']:.5f} +/- {g['se']:.5f} (population loss "
                     f"{self.population_loss if self.population_loss is None else round(self.population_loss, 5)},"
                     f" training loss {self.train_loss:.5f})")
        return "\n".join(lines)


def experiment_report(batch: TrialBatch, config: dict[str, Any] | None = None, bins: int | None = None,
                      m: int | None = None, which: set[str] | None = None) -> ExperimentReport:
    """Every applicable average bound for the batch, with validity against the exact gap.

    A bound is valid when it is at least its target minus two combined
    standard errors: the absolute gap for gap bounds, the population loss for
    loss bounds and the mean squared gap for the squared bound.  The bound's
    standard error is the spread of its per-supersample version.
    """
    config = dict(batch.config if config is None else config)
    E = ecmi_matrix(batch, bins)  # (k1, n)
    B_z = E.mean(axis=1)
    L_z = batch.train_loss.mean(axis=1)
    Bbar = float(B_z.mean())
    Lhat = float(L_z.mean())
    want = (lambda name: True) if which is None else (lambda name: name in which)

    reports: list[tuple[BoundReport, np.ndarray]] = []

    def add(rep: BoundReport, per_draw) -> None:
        reports.append((rep, np.asarray(per_draw, dtype=np.float64)))

    if want("sqrt_disintegrated"):
        add(bd.sqrt_bound_disintegrated(E), [bd.sqrt_bound_integrated(e).value for e in E])
    if want("sqrt_integrated"):
        add(bd.sqrt_bound_integrated(E.mean(axis=0)), [bd.sqrt_bound_integrated(e).value for e in E])
    randomized = bool(np.any([np.unique(batch.r_seeds[j]).size > 1 for j in range(batch.k1)]))
    if want("r_conditioned_sqrt") and randomized:
        R = np.stack([ecmi_r_conditioned(batch, j, bins) for j in range(batch.k1)])
        add(bd.r_conditioned_sqrt_bound(R), [bd.r_conditioned_sqrt_bound(r).value for r in R])
    if want("squared"):
        mm = m or max(1, batch.n // 2)
        per = np.array([subset_ecmi(batch, j, mm, bins) for j in range(batch.k1)])
        add(bd.squared_bound(float(per.mean()), mm), [bd.squared_bound(v, mm).value for v in per])
    if want("linear"):
        add(bd.linear_bound(Lhat, Bbar), [bd.linear_bound(q, c).value for q, c in zip(L_z, B_z)])
    if want("interpolation"):
        add(bd.interpolation_bound(Lhat, Bbar), B_z / math.log(2.0))
    if want("binary_kl"):
        add(bd.binary_kl_bound(Lhat, Bbar), [bd.binary_kl_bound(q, c).value for q, c in zip(L_z, B_z)])
    if want("binary_kl_disintegrated"):
        rep = bd.binary_kl_bound_disintegrated(L_z, B_z)
        add(rep, np.minimum(rep.intermediates["per_draw"], 1.0))
    if want("kl_interp_disintegrated"):
        rep = bd.kl_interp_bound_disintegrated(B_z, L_z)
        add(rep, np.minimum(rep.intermediates["per_draw"], 1.0))
    if want("affine_kl"):
        add(bd.affine_kl_bound(Lhat, Bbar), [bd.affine_kl_bound(q, c).value for q, c in zip(L_z, B_z)])

    gap: dict[str, float] = {}
    pop_mean = None
    validity: dict[str, bool] = {}
    if batch.population_loss is not None:
        gaps = batch.population_loss - batch.train_loss
        per_gap = gaps.mean(axis=1)
        per_pop = batch.population_loss.mean(axis=1)
        per_sq = (gaps ** 2).mean(axis=1)
        pop_mean = float(per_pop.mean())
        gap = {"mean": float(per_gap.mean()), "se": _se(per_gap), "abs": abs(float(per_gap.mean())),
               "squared_mean": float(per_sq.mean()), "squared_se": _se(per_sq),
               "population_se": _se(per_pop)}
        targets = {"gap": (gap["abs"], gap["se"]), "population_loss": (pop_mean, gap["population_se"]),
                   "squared_gap": (gap["squared_mean"], gap["squared_se"])}
        for rep, per_draw in reports:
            if not rep.applicable:
                continue
            target, se_t = targets[rep.target]
            se_b = _se(per_draw)
            rep.intermediates["se"] = se_b
            sigma = math.sqrt(se_t ** 2 + se_b ** 2)
            validity[rep.name] = bool(rep.value >= target - 2.0 * sigma)
    else:
        gap = {"mean": float("nan"), "se": float("nan")}
    for rep, _ in reports:
        rep.intermediates.setdefault("train_loss", Lhat)
        rep.intermediates.setdefault("ecmi_average", Bbar)
    return ExperimentReport([r for r, _ in reports], gap, validity, E.mean(axis=0), Lhat, pop_mean, config)
