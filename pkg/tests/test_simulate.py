import hashlib
import itertools
import json
import math
from pathlib import Path

import numpy as np
import pytest

from ecmi.core import rng_stream
from ecmi.estimators import ecmi_matrix
from ecmi.simulate import (SEED_BOUND, ConfigError, SimConfig, check_estimable, draw_supersample, exact_table_law,
                           gap_stats, gibbs_posterior, label_law, loss_tables, natarajan_dimension,
                           population_loss, run_experiment, run_learner, target_function, threshold_class,
                           _class_train_errors)

GOLDEN = json.loads((Path(__file__).parent / "golden" / "memorizer_seed1.json").read_text())


def reference_memorizer_run(cfg):
    """Straight-loop reimplementation of the memorizer sweep, sharing only the stream layout."""
    losses = np.zeros((cfg["k1"], cfg["k2"], cfg["n"], 2))
    members = np.zeros((cfg["k1"], cfg["k2"], cfg["n"]), dtype=int)
    pop = np.zeros((cfg["k1"], cfg["k2"]))
    K, N, n = cfg["K"], cfg["N"], cfg["n"]
    truth = [0 if v < K // 2 else 1 for v in range(K)]
    for j in range(cfg["k1"]):
        g = rng_stream(cfg["seed"], j * (cfg["k2"] + 1))
        x = g.integers(0, K, size=(n, 2))
        y = np.array([[truth[v] for v in row] for row in x])
        flip = g.random((n, 2)) < cfg["eta"]
        other = (y + g.integers(1, N, size=(n, 2))) % N
        y = np.where(flip, other, y)
        corrupt = g.random((n, 2)) < cfg["a"]
        y = np.where(corrupt, g.integers(0, N, size=(n, 2)), y)
        g.integers(0, SEED_BOUND, size=1)
        for t in range(cfg["k2"]):
            s = rng_stream(cfg["seed"], j * (cfg["k2"] + 1) + 1 + t).integers(0, 2, size=n)
            votes = {}
            for i in range(n):
                key = (int(x[i, s[i]]), int(y[i, s[i]]))
                votes[key] = votes.get(key, 0) + 1
            h = []
            for v in range(K):
                counts = [votes.get((v, c), 0) for c in range(N)]
                h.append(counts.index(max(counts)))
            for i in range(n):
                for col in range(2):
                    losses[j, t, i, col] = float(h[x[i, col]] != y[i, col])
            members[j, t] = s
            pop[j, t] = sum(1.0 for v in range(K) if h[v] != truth[v]) / K
    return losses, members, pop


class TestConfig:
    def test_defaults(self):
        c = SimConfig(learner="gibbs", n=5)
        assert (c.k1, c.k2, c.r_draws) == (20, 200, 10)
        assert SimConfig(learner="memorizer", n=5).r_draws == 1

    def test_missing_and_unknown_fields(self):
        with pytest.raises(ConfigError, match="learner"):
            SimConfig.from_dict({"n": 3, "k1": 1, "k2": 2, "seed": 0})
        with pytest.raises(ConfigError, match="colour"):
            SimConfig.from_dict({"learner": "memorizer", "n": 3, "k1": 1, "k2": 2, "seed": 0, "colour": 1})

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            SimConfig(learner="sgd", n=3)
        with pytest.raises(ConfigError):
            SimConfig(learner="memorizer", n=3, eta=1.5)
        with pytest.raises(ConfigError):
            SimConfig.from_json("{not json")

    def test_round_trip(self):
        c = SimConfig(learner="erm_finite_class", n=7, eta=0.1, seed=4)
        assert SimConfig.from_json(json.dumps(c.to_dict())) == c

    def test_degenerate_k2_rejected(self):
        with pytest.raises(ConfigError, match="k2"):
            check_estimable(SimConfig(learner="memorizer", n=3, k2=1))


class TestData:
    def test_clean_labels(self):
        c = SimConfig(learner="memorizer", n=50, K=4)
        x, y = draw_supersample(c, rng_stream(0, 0))
        assert np.array_equal(y, target_function(4)[x])

    def test_full_corruption_independent_of_x(self):
        c = SimConfig(learner="memorizer", n=20000, K=4, a=1.0)
        x, y = draw_supersample(c, rng_stream(1, 0))
        for v in range(4):
            assert abs(y[x == v].mean() - 0.5) < 0.02
        assert np.allclose(label_law(c), 0.5)

    def test_flip_frequency(self):
        eta = 0.15
        c = SimConfig(learner="memorizer", n=50000, K=8, eta=eta)
        x, y = draw_supersample(c, rng_stream(2, 0))
        flips = (y != target_function(8)[x]).ravel()
        sigma = math.sqrt(eta * (1 - eta) / flips.size)
        assert abs(flips.mean() - eta) <= 3 * sigma

    def test_target(self):
        assert target_function(5).tolist() == [0, 0, 1, 1, 1]


class TestPopulationLoss:
    def test_examples(self):
        c = SimConfig(learner="memorizer", n=3, K=2)
        assert population_loss(target_function(2), c) == 0.0
        assert population_loss(np.array([0, 0]), c) == pytest.approx(0.5)

    def test_full_corruption(self):
        c = SimConfig(learner="memorizer", n=3, K=6, N=3, a=1.0)
        for h in ([0] * 6, [2, 1, 0, 0, 1, 2]):
            assert population_loss(np.array(h), c) == pytest.approx(2 / 3)

    def test_enumeration(self):
        c = SimConfig(learner="memorizer", n=3, K=4, N=3, eta=0.2, a=0.3)
        h = np.array([0, 2, 1, 1])
        law = label_law(c)
        assert np.allclose(law.sum(axis=1), 1.0)
        direct = sum(0.25 * (1 - law[v, h[v]]) for v in range(4))
        assert population_loss(h, c) == pytest.approx(direct, abs=1e-15)


class TestLearners:
    def test_memorizer_interpolates(self):
        c = SimConfig(learner="memorizer", n=6, K=64)
        x = np.arange(12).reshape(6, 2)
        y = np.random.default_rng(0).integers(0, 2, (6, 2))
        S = np.random.default_rng(1).integers(0, 2, (30, 6))
        h, _ = run_learner("memorizer", c, x, y, S)
        _, losses = loss_tables(h, x, y)
        assert np.all(losses[np.arange(30)[:, None], np.arange(6), S] == 0)

    def test_memorizer_default_and_ties(self):
        c = SimConfig(learner="memorizer", n=2, K=4)
        x = np.array([[1, 2], [1, 3]])
        y = np.array([[1, 0], [0, 0]])
        h, _ = run_learner("memorizer", c, x, y, np.array([[0, 0]]))
        assert h[0].tolist() == [0, 0, 0, 0]

    @pytest.mark.parametrize("K", [2, 3, 4, 5, 6])
    def test_erm_realizable_recovers_target(self, K):
        c = SimConfig(learner="erm_finite_class", n=K, K=K)
        x = np.repeat(np.arange(K)[:, None], 2, axis=1)
        y = target_function(K)[x]
        cls = threshold_class(K, 2, 1)
        S = np.array(list(itertools.product((0, 1), repeat=K)))
        h, ids = run_learner("erm_finite_class", c, x, y, S, cls=cls)
        assert np.all(h == target_function(K))
        assert np.all(_class_train_errors(cls, x, y, S)[np.arange(len(S)), ids] == 0)

    def test_erm_ties_to_lowest_index(self):
        c = SimConfig(learner="erm_finite_class", n=1, K=4)
        cls = threshold_class(4, 2, 1)
        x, y = np.array([[0, 0]]), np.array([[0, 0]])
        _, ids = run_learner("erm_finite_class", c, x, y, np.array([[0]]), cls=cls)
        zero = np.flatnonzero(_class_train_errors(cls, x, y, np.array([[0]]))[0] == 0)
        assert ids[0] == zero[0]

    def test_gibbs_cold_limit_is_erm_argmin(self):
        c = SimConfig(learner="gibbs", n=6, K=8, eta=0.3, beta=1e4)
        cls = threshold_class(8, 2, 1)
        for trial in range(100):
            g = rng_stream(99, trial)
            x, y = draw_supersample(c, g)
            S = g.integers(0, 2, (1, 6))
            _, ids = run_learner("gibbs", c, x, y, S, np.array([trial]), cls)
            errors = _class_train_errors(cls, x, y, S)[0]
            assert errors[ids[0]] == errors.min()

    def test_gibbs_posterior_rows(self):
        p = gibbs_posterior(np.array([[0, 1, 2], [5, 5, 5]]), 1.0)
        assert np.allclose(p.sum(axis=1), 1.0)
        assert np.allclose(p[1], 1 / 3)
        assert p[0, 0] / p[0, 1] == pytest.approx(math.e)

    def test_gibbs_depends_only_on_seed(self):
        c = SimConfig(learner="gibbs", n=4, K=8)
        x, y = draw_supersample(c, rng_stream(3, 0))
        S = np.array([[0, 1, 1, 0]] * 3)
        _, a = run_learner("gibbs", c, x, y, S, np.array([7, 7, 8]))
        assert a[0] == a[1]

    def test_column_swap_symmetry(self):
        for learner in ("memorizer", "erm_finite_class", "gibbs"):
            c = SimConfig(learner=learner, n=8, K=8, eta=0.2)
            x, y = draw_supersample(c, rng_stream(5, 0))
            S = rng_stream(5, 1).integers(0, 2, (20, 8))
            r = np.arange(20)
            h, _ = run_learner(learner, c, x, y, S, r)
            h2, _ = run_learner(learner, c, x[:, ::-1], y[:, ::-1], 1 - S, r)
            _, l1 = loss_tables(h, x, y)
            _, l2 = loss_tables(h2, x[:, ::-1], y[:, ::-1])
            rows = np.arange(8)
            for t in range(20):
                assert l1[t, rows, S[t]].mean() == l2[t, rows, 1 - S[t]].mean()
                assert l1[t, rows, 1 - S[t]].mean() == l2[t, rows, S[t]].mean()


class TestFiniteClass:
    @pytest.mark.parametrize("K,N,k", [(3, 2, 0), (4, 2, 1), (5, 2, 2), (4, 3, 1), (3, 3, 2), (6, 2, 1)])
    def test_natarajan_dimension(self, K, N, k):
        cls = threshold_class(K, N, k)
        assert cls.natarajan_dim == min(k + 1, K)
        assert natarajan_dimension(cls, N) == cls.natarajan_dim

    def test_distinct_hypotheses(self):
        cls = threshold_class(6, 3, 2)
        assert len({tuple(r) for r in cls.table}) == cls.size


class TestExperiment:
    def test_golden_regenerated(self):
        batch, gap = run_experiment(SimConfig.from_dict(GOLDEN["config"]))
        assert hashlib.sha256(batch.to_json().encode()).hexdigest() == GOLDEN["batch_sha256"]
        assert gap.mean == GOLDEN["gap_mean"]
        assert gap.se == pytest.approx(GOLDEN["gap_se"], abs=1e-15)
        assert np.allclose(ecmi_matrix(batch).mean(axis=0), GOLDEN["ecmi_mean"], atol=1e-12)

    def test_golden_matches_reference_loop(self):
        cfg = GOLDEN["config"]
        batch, gap = run_experiment(SimConfig.from_dict(cfg))
        losses, members, pop = reference_memorizer_run(cfg)
        assert np.array_equal(batch.losses, losses)
        assert np.array_equal(batch.membership, members)
        assert np.array_equal(batch.population_loss, pop)
        train = (losses * np.stack([1 - members, members], axis=-1)).sum(axis=(2, 3)) / cfg["n"]
        assert gap.mean == pytest.approx((pop - train).mean(axis=1).mean(), abs=1e-15)

    def test_reference_loop_noisy_config(self):
        cfg = dict(GOLDEN["config"], eta=0.1, a=0.3, N=3, k1=3, k2=30, seed=8)
        batch, _ = run_experiment(SimConfig.from_dict(cfg))
        losses, members, _ = reference_memorizer_run(cfg)
        assert np.array_equal(batch.losses, losses)
        assert np.array_equal(batch.membership, members)

    def test_thread_count_irrelevant(self):
        c = SimConfig(learner="gibbs", n=6, k1=5, k2=20, seed=3, eta=0.1)
        a, _ = run_experiment(c, threads=1)
        b, _ = run_experiment(c, threads=4)
        assert a.to_json() == b.to_json()

    def test_constant_learner(self):
        batch, _ = run_experiment(SimConfig(learner="constant", n=6, k1=4, k2=20, eta=0.1))
        assert np.all(ecmi_matrix(batch) == 0.0)

    def test_constant_learner_exact_zero_without_noise(self):
        batch, gap = run_experiment(SimConfig(learner="constant", n=6, k1=4, k2=20))
        assert gap.mean == 0.0 and gap.se == 0.0

    def test_test_loss_unbiased(self):
        c = SimConfig(learner="erm_finite_class", n=10, k1=200, k2=10, seed=6, eta=0.2)
        batch, _ = run_experiment(c)
        diff = (batch.test_loss - batch.population_loss).mean(axis=1)
        se = diff.std(ddof=1) / math.sqrt(len(diff))
        assert abs(diff.mean()) <= 3 * se

    def test_memorizer_without_duplicates_interpolates(self):
        batch, _ = run_experiment(SimConfig(learner="memorizer", n=10, K=4096, k1=3, k2=20, a=1.0, seed=1))
        for j in range(3):
            assert len(np.unique(batch.features[j])) == 20
        assert np.all(batch.train_loss == 0.0)

    def test_gap_stats_formula(self):
        batch, gap = run_experiment(SimConfig(learner="memorizer", n=6, k1=5, k2=10, eta=0.2))
        per = (batch.population_loss - batch.train_loss).mean(axis=1)
        assert gap.mean == pytest.approx(per.mean())
        assert gap.se == pytest.approx(per.std(ddof=1) / math.sqrt(5))
        assert gap_stats(batch).mean == gap.mean


class TestExactLaw:
    @pytest.mark.parametrize("learner", ["memorizer", "erm_finite_class", "gibbs"])
    def test_batch_draws_lie_in_support(self, learner):
        c = SimConfig(learner=learner, n=6, k1=2, k2=20, seed=1, eta=0.2)
        batch, _ = run_experiment(c)
        for j in range(2):
            ex = exact_table_law(c, batch.features[j], batch.labels[j])
            for t in range(20):
                ex.law.atom_of(batch.losses[j, t])

    def test_deterministic_train_means_match_batch(self):
        c = SimConfig(learner="erm_finite_class", n=6, k1=1, k2=20, seed=2, eta=0.2)
        batch, _ = run_experiment(c)
        ex = exact_table_law(c, batch.features[0], batch.labels[0])
        idx = (batch.membership[0].astype(int) << np.arange(6)).sum(axis=1)
        assert np.allclose(ex.train_mean[idx], batch.train_loss[0])
        assert np.allclose(ex.test_mean[idx], batch.test_loss[0])

    def test_gibbs_probs_rows(self):
        c = SimConfig(learner="gibbs", n=5, k1=1, k2=10, seed=2, eta=0.2)
        batch, _ = run_experiment(c)
        ex = exact_table_law(c, batch.features[0], batch.labels[0])
        assert np.allclose(ex.hypothesis_probs.sum(axis=1), 1.0)
        assert np.all((ex.train_mean >= 0) & (ex.train_mean <= 1))
