import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecmi.analyze import (COLORS, REGION_LABELS, cell_values, cell_winner, curves, curves_csv, curves_svg,
                          default_B_grid, default_L_grid, experiment_report, interpolating_values,
                          ordering_check, region_map, region_svg, subset_ecmi)
from ecmi.divergence import binary_kl
from ecmi.estimators import ecmi_matrix
from ecmi.simulate import SimConfig, run_experiment

GOLDEN = json.loads((Path(__file__).parent / "golden" / "memorizer_seed1.json").read_text())


def brute_linear(L, B, points=3000):
    """Minimum of g2*L + B/g1 over a dense grid of the feasible set."""
    g1 = np.linspace(1e-3, 0.3654, points)[:, None]
    g2 = np.linspace(1.0, 4.0, points)[None, :]
    feasible = gamma_constraint_grid(g1, g2) <= 0
    return float(np.where(feasible, g2 * L + B / g1, np.inf).min())


def gamma_constraint_grid(g1, g2):
    return g1 * (1 - g2) + (np.expm1(g1) - g1) * (1 + g2 ** 2)


class TestOrdering:
    def test_anchor(self):
        o = ordering_check(0.1)
        assert o.order == ["interpolation", "binary_kl", "linear", "sqrt"]
        assert o.values["interpolation"] == pytest.approx(0.14427, abs=1e-5)
        assert o.values["binary_kl"] == pytest.approx(0.190325, abs=1e-5)
        assert o.values["linear"] == pytest.approx(0.27360, abs=1e-3)
        assert o.values["sqrt"] == pytest.approx(0.44721, abs=1e-5)

    def test_inverted(self):
        o = ordering_check(0.5)
        assert o.values["sqrt"] == pytest.approx(1.0)
        assert o.values["linear"] == pytest.approx(1.368, abs=1e-3)
        assert o.order.index("sqrt") < o.order.index("linear")

    def test_small_B(self):
        for B in (1e-6, 1e-4, 1e-2, 0.2, 0.26):
            assert ordering_check(B).strictly_increasing(["interpolation", "binary_kl", "linear", "sqrt"])

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ordering_check(0.0)

    def test_linear_against_brute_force(self):
        for B in (0.01, 0.1, 0.5):
            assert interpolating_values(B)["linear"] == pytest.approx(brute_linear(0.0, B), rel=5e-4)

    def test_curves(self):
        c = curves(default_B_grid())
        for name in ("interpolation", "binary_kl", "linear", "sqrt"):
            assert np.all(np.diff(c[name]) > 0)
        others = np.minimum.reduce([c["binary_kl"], c["linear"], c["sqrt"]])
        # interpolation is lowest wherever any bound is below 1; at B = ln 2 it meets binary KL at 1
        low = c["B"] <= math.log(2)
        assert np.all(c["interpolation"][low] <= others[low])
        assert np.all(others[~low] >= 1) and np.all(c["interpolation"][~low] >= 1)
        assert interpolating_values(math.log(2))["interpolation"] == pytest.approx(1.0)
        assert interpolating_values(math.log(2))["binary_kl"] == pytest.approx(1.0)


class TestRegions:
    def test_cell_values_against_oracles(self):
        for B, L in [(0.01, 0.01), (0.1, 0.2), (0.3, 0.05)]:
            v = cell_values(B, L)
            assert v["sqrt"] == pytest.approx(L + math.sqrt(2 * B))
            assert v["linear"] == pytest.approx(brute_linear(L, B), rel=5e-4)
            if v["binary_kl"] < 1:
                assert binary_kl(L, (L + v["binary_kl"]) / 2) == pytest.approx(B, abs=1e-8)

    def test_small_corner_binary_kl(self):
        # the example point stated for the low corner of the map
        assert cell_winner(cell_values(0.01, 0.01)) == "binary_kl"

    def test_large_corner_trivial(self):
        assert cell_winner(cell_values(1.0, 0.5)) == "trivial"

    def test_sqrt_beats_linear_at_04(self):
        v = cell_values(0.4, 0.4)
        assert v["sqrt"] < v["linear"]

    def test_winner_trivial_threshold(self):
        assert cell_winner({"binary_kl": 1.0, "linear": 1.2, "sqrt": 1.1}) == "trivial"
        assert cell_winner({"binary_kl": 0.99, "linear": 1.2, "sqrt": 1.1}) == "binary_kl"

    @settings(max_examples=200)
    @given(st.floats(1e-4, 1.0), st.floats(0.0, 0.5))
    def test_pinsker_keeps_kl_below_sqrt(self, B, L):
        v = cell_values(B, L)
        assert v["binary_kl"] <= v["sqrt"] + 1e-9

    def test_default_map_structure(self):
        r = region_map()
        assert r.labels.shape == (50, 50)
        assert r.label_set() <= set(REGION_LABELS)
        assert r.labels[0, 0] == "binary_kl"
        assert r.labels[-1, -1] == "trivial"

    def test_grid_refinement_stable(self):
        coarse = region_map(default_B_grid(25), default_L_grid(25))
        fine = region_map(default_B_grid(49), default_L_grid(49))
        assert np.allclose(fine.B_grid[::2], coarse.B_grid) and np.allclose(fine.L_grid[::2], coarse.L_grid)
        interior = ~coarse.boundary_mask()
        assert np.all(fine.labels[::2, ::2][interior] == coarse.labels[interior])

    def test_csv_and_svg(self):
        r = region_map(default_B_grid(5), default_L_grid(4))
        lines = r.to_csv().splitlines()
        assert lines[0] == "B,train_loss,binary_kl,linear,sqrt,winner,boundary"
        assert len(lines) == 21
        svg = region_svg(r)
        assert svg.startswith("<svg") or svg.startswith("<?xml")
        for label in r.label_set():
            assert COLORS[label] in svg

    def test_curves_outputs(self):
        c = curves(np.linspace(0.01, 1, 5))
        assert curves_csv(c).splitlines()[0] == "B,interpolation,binary_kl,linear,sqrt"
        svg = curves_svg(c)
        assert "</svg>" in svg and COLORS["interpolation"] in svg


class TestReport:
    def test_golden(self):
        batch, _ = run_experiment(SimConfig.from_dict(GOLDEN["config"]))
        rep = experiment_report(batch)
        for name, value in GOLDEN["report"].items():
            assert rep.bound(name).value == pytest.approx(value, abs=1e-12), name
        assert rep.gap["mean"] == GOLDEN["gap_mean"]
        assert all(rep.validity.values())

    def test_constant_learner(self):
        batch, _ = run_experiment(SimConfig(learner="constant", n=6, k1=4, k2=20))
        rep = experiment_report(batch)
        assert np.all(rep.ecmi_mean == 0)
        assert rep.gap["mean"] == 0.0
        assert all(r.value >= 0 for r in rep.bounds)
        assert all(rep.validity.values())

    def test_interpolating_run(self):
        config = SimConfig(learner="memorizer", n=10, K=4096, k1=10, k2=200, seed=2, a=1.0)
        batch, _ = run_experiment(config)
        rep = experiment_report(batch)
        assert rep.train_loss == 0.0
        interp = rep.bound("interpolation")
        assert interp.applicable
        per_draw_interp = ecmi_matrix(batch).mean(axis=1) / math.log(2)
        per_draw_kl = rep.bound("binary_kl_disintegrated").intermediates["per_draw"]
        assert np.all(per_draw_interp <= per_draw_kl + 1e-12)
        assert interp.value <= rep.bound("binary_kl_disintegrated").value + 1e-12

    def test_noninterpolating_marks_interpolation(self):
        batch, _ = run_experiment(SimConfig(learner="erm_finite_class", n=10, k1=5, k2=50, eta=0.2, seed=3))
        rep = experiment_report(batch)
        assert not rep.bound("interpolation").applicable
        assert "interpolation" not in rep.validity
        assert not rep.bound("kl_interp_disintegrated").applicable

    def test_randomized_adds_r_conditioned(self):
        batch, _ = run_experiment(SimConfig(learner="gibbs", n=6, k1=3, k2=40, eta=0.1, seed=3, r_draws=4))
        names = [r.name for r in experiment_report(batch).bounds]
        assert "r_conditioned_sqrt" in names
        assert len(names) == len(set(names))

    def test_selection_and_serialization(self):
        batch, _ = run_experiment(SimConfig(learner="memorizer", n=6, k1=3, k2=30, eta=0.1))
        rep = experiment_report(batch, which={"linear", "binary_kl"})
        assert [r.name for r in rep.bounds] == ["linear", "binary_kl"]
        d = json.loads(json.dumps(rep.to_dict()))
        assert d["schema"] == 1 and d["config"]["learner"] == "memorizer"
        assert "true gap" in rep.table()

    def test_subset_ecmi(self):
        batch, _ = run_experiment(SimConfig(learner="memorizer", n=6, K=1024, k1=1, k2=400, seed=4, a=1.0))
        one = subset_ecmi(batch, 0, 1)
        assert one == pytest.approx(ecmi_matrix(batch)[0, 0], abs=1e-12)
        assert subset_ecmi(batch, 0, 3) >= one
