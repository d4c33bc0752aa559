import math
import random

import numpy as np
import pytest

from polyshrink import experiments
from polyshrink.distributions import RngStream
from polyshrink.errors import ChainFailure, ParameterError
from polyshrink.experiments import (ExperimentConfig, PosteriorAccumulator, Signal, aggregate, contraction_probability,
                                    credible_intervals, generate_truth, minimax_reference, naive_zero_spec,
                                    parse_prior_spec, posterior_error_summaries, preset, run_grid, run_replication,
                                    select_by_shrinkage, simulate_data)
from polyshrink.priors import ShrinkageMode, TauSchedule
from polyshrink.sampler import ChainConfig

SHORT = ChainConfig(n_iter=300, burn_in=100)


# --- truth and data ----------------------------------------------------------

def test_truth_constant_signal():
    th = generate_truth(100, 10, Signal.constant(2.2), RngStream(0))
    assert th[:10] == pytest.approx(np.full(10, math.sqrt(2.2 * math.log(10))))
    assert th[0] == pytest.approx(2.2507, abs=1e-4)
    assert np.all(th[10:] == 0)


def test_truth_zero_signal():
    assert np.all(generate_truth(50, 7, Signal.constant(0.0), RngStream(0)) == 0)


def test_truth_uniform_signal_support():
    th = generate_truth(1000, 32, Signal.uniform(0, 5), RngStream(1))
    hi = math.sqrt(5 * math.log(1000 / 32))
    assert np.all((th[:32] >= 0) & (th[:32] <= hi)) and np.unique(th[:32]).size == 32
    assert np.all(th[32:] == 0)


def test_truth_rejects_s_not_below_n():
    with pytest.raises(ParameterError):
        generate_truth(10, 10, Signal.constant(1.0), RngStream(0))


def test_data_moments_and_determinism():
    y = simulate_data(np.zeros(10_000), RngStream(2))
    assert abs(y.mean()) <= 3 / 100
    assert abs(y.var() - 1) <= 3 * math.sqrt(2 / 10_000)
    assert np.array_equal(y, simulate_data(np.zeros(10_000), RngStream(2)))


def test_data_squared_error_mean_is_n():
    theta = np.linspace(-3, 3, 40)
    err = np.array([np.sum((simulate_data(theta, RngStream(3, r)) - theta) ** 2) for r in range(2000)])
    assert abs(err.mean() - 40) <= 3 * math.sqrt(80 / err.size)


# --- metrics -----------------------------------------------------------------

def test_contraction_probability_edges():
    rng = np.random.default_rng(0)
    theta_star = np.zeros(5)
    draws = rng.normal(size=(200, 5))
    assert contraction_probability(draws, theta_star, 0.0) == 1.0
    assert contraction_probability(draws, theta_star, math.inf) == 0.0
    assert contraction_probability(np.zeros((200, 5)), theta_star, 0.1) == 0.0
    probs = [contraction_probability(draws, theta_star, r) for r in np.linspace(0, 20, 41)]
    assert all(b <= a for a, b in zip(probs, probs[1:]))


def test_error_summaries():
    theta_star = np.array([2.0, 0.0, 0.0])
    active = np.array([True, False, False])
    e = posterior_error_summaries(np.tile(theta_star, (100, 1)), theta_star, active)
    assert (e.l2_sq, e.l1, e.l2_sq_active, e.l2_sq_inactive) == (0, 0, 0, 0)
    one = posterior_error_summaries((theta_star + [1.0, 0, 0])[None, :], theta_star, active)
    assert (one.l2_sq, one.l1, one.l2_sq_active, one.l1_active, one.l2_sq_inactive) == (1, 1, 1, 1, 0)
    off = posterior_error_summaries((theta_star + [0, 1.0, 0])[None, :], theta_star, active)
    assert (off.l2_sq_active, off.l2_sq_inactive, off.l1_inactive) == (0, 1, 1)
    draws = np.random.default_rng(1).normal(size=(300, 3))
    e = posterior_error_summaries(draws, theta_star, active)
    assert abs(e.l2_sq - (e.l2_sq_active + e.l2_sq_inactive)) <= 1e-9 * max(1.0, e.l2_sq)
    assert abs(e.l1 - (e.l1_active + e.l1_inactive)) <= 1e-9 * max(1.0, e.l1)


def test_minimax_reference():
    l2, l1 = minimax_reference(100, 10)
    assert l2 == pytest.approx(20 * math.log(10)) and l2 == pytest.approx(46.052, abs=1e-3)
    assert l1 == pytest.approx(10 * math.sqrt(2 * math.log(10))) and l1 == pytest.approx(21.460, abs=1e-3)
    n, s = 10_000, 100
    assert 2 * s * math.log(n) == pytest.approx(2 * minimax_reference(n, s)[0])
    assert minimax_reference(500, 1)[0] == pytest.approx(2 * math.log(500))
    with pytest.raises(ParameterError):
        minimax_reference(10, 10)


def test_selection_by_shrinkage():
    sel = select_by_shrinkage([3.0, 1.0, 0.0, -2.5], [4.0, 4.0, 0.0, -3.0])
    assert sel.tolist() == [True, False, False, True]
    with pytest.raises(ParameterError):
        select_by_shrinkage([1.0], [1.0, 2.0])


def test_intervals_constant_draws():
    iv = credible_intervals(np.tile([0.0, 1.5], (100, 1)))
    assert np.all(iv.sd == 0) and np.array_equal(iv.lower, iv.upper)
    assert iv.selected.tolist() == [False, True]


def test_intervals_synthetic_normal():
    rng = np.random.default_rng(2)
    draws = 2.0 + rng.normal(size=(200_000, 1))
    iv = credible_intervals(draws)
    assert iv.lower[0] == pytest.approx(0.04, abs=0.02) and iv.upper[0] == pytest.approx(3.96, abs=0.02)
    assert iv.selected[0]


def test_interval_coverage_by_construction():
    rng = np.random.default_rng(3)
    p = 2000
    means = rng.normal(size=p)
    truth = means + rng.normal(size=p)          # truth ~ N(mean, 1) per coordinate
    draws = means + rng.normal(size=(400, p))
    cov = credible_intervals(draws, truth).covered.mean()
    assert abs(cov - 0.95) <= 3 * math.sqrt(0.95 * 0.05 / p) + 0.01


def test_accumulator_matches_matrix_route():
    rng = np.random.default_rng(4)
    theta_star = np.array([3.0, 0.0, 0.0, 1.0])
    active = np.array([True, False, False, True])
    draws = rng.normal(size=(1000, 4)) + theta_star
    acc = PosteriorAccumulator(theta_star, active, radius_sq=4.0, block=64)
    for row in draws:
        acc.add(row, 0.5)
    e_acc, e_mat = acc.errors(), posterior_error_summaries(draws, theta_star, active)
    assert e_acc.l2_sq == pytest.approx(e_mat.l2_sq, rel=1e-12)
    assert e_acc.l1_inactive == pytest.approx(e_mat.l1_inactive, rel=1e-12)
    assert acc.contraction_probability() == pytest.approx(contraction_probability(draws, theta_star, 4.0))
    iv, ref = acc.intervals(), credible_intervals(draws, theta_star)
    assert np.allclose(iv.mean, ref.mean, rtol=1e-12) and np.allclose(iv.sd, ref.sd, rtol=1e-9)
    assert acc.tau_sum / acc.count == pytest.approx(0.5)


def test_accumulator_empty_raises():
    with pytest.raises(ParameterError):
        PosteriorAccumulator().mean()


# --- specs and configs -------------------------------------------------------

def test_prior_spec_grammar():
    s = parse_prior_spec("t:1.1/sparsity:sharp")
    assert s.schedule.rule is TauSchedule.power_of_sparsity(1.0).rule and s.schedule.c == pytest.approx(11.5)
    assert parse_prior_spec("t:2.1/sparsity:lower").schedule.c == pytest.approx(1 / 1.1)
    assert parse_prior_spec("hs/hs-oracle").shrinkage_for(100, 10).tau == pytest.approx(0.1 * math.sqrt(math.log(10)))
    assert parse_prior_spec("t:1.1/beta:11.5").shrinkage.mode is ShrinkageMode.BETA_ADAPTIVE
    hc = parse_prior_spec("hs/halfcauchy").shrinkage
    assert hc.mode is ShrinkageMode.TRUNCATED_HALF_CAUCHY and hc.bounds(20) == (0.05, 1.0)
    assert parse_prior_spec("t:3/tbeta:2:0.1:0.6").shrinkage.bounds(9) == (0.1, 0.6)
    assert parse_prior_spec("t:3/fixed:0.2").shrinkage_for(10, 2).tau == 0.2


@pytest.mark.parametrize("text", ["t:1.1", "t/sparsity:1", "cauchy/fixed:1", "t:1.1/beta", "hs/fixed:x", "t:0.5/n:1"])
def test_prior_spec_errors(text):
    with pytest.raises(ParameterError):
        parse_prior_spec(text)


def test_config_invariants_and_sparsity_rule():
    cfg = preset("sim1")
    assert [cfg.sparsity(n) for n in cfg.n_values] == [7, 10, 22, 32]
    assert len(cfg.prior_specs) == 6 and len(cfg.signals) == 4 and cfg.replications == 100
    with pytest.raises(ParameterError):
        preset("sim1", replications=0)
    with pytest.raises(ParameterError):
        preset("sim1", n_values=(10,), s_values=(10,))
    with pytest.raises(ParameterError):
        preset("nope")
    assert preset("varying").signals[0].is_uniform


# --- replications and grids --------------------------------------------------

def test_replication_decomposition_and_selection_shapes():
    cfg = preset("sim1", n_values=(50,), replications=1, chain=SHORT)
    r = run_replication(cfg, 50, Signal.constant(4.2), cfg.prior_specs[0], 0)
    m = r.metrics
    assert not r.failed
    assert abs(m["l2_sq"] - m["l2_sq_active"] - m["l2_sq_inactive"]) <= 1e-9 * m["l2_sq"]
    assert abs(m["l1"] - m["l1_active"] - m["l1_inactive"]) <= 1e-9 * m["l1"]
    assert 0 <= m["contraction_prob"] <= 1 and 0 <= m["coverage_active"] <= 1
    assert len(r.selected_shrink) == 50 and len(r.selected_interval) == 50


def test_naive_zero_prior_calibrates_metrics():
    cfg = ExperimentConfig(n_values=(40,), signals=(Signal.constant(2.2),), prior_specs=(naive_zero_spec(),),
                           replications=3, chain=SHORT)
    for rep in range(3):
        r = run_replication(cfg, 40, cfg.signals[0], cfg.prior_specs[0], rep)
        theta_star = generate_truth(40, cfg.sparsity(40), cfg.signals[0], RngStream(0, rep).child("data", 40, "2.2"))
        assert r.metrics["l2_sq"] == pytest.approx(float(np.sum(theta_star**2)), rel=1e-12)


def test_same_data_across_priors():
    cfg = preset("sim1", n_values=(50,), replications=1, chain=SHORT)
    a = run_replication(cfg, 50, Signal.constant(2.2), cfg.prior_specs[0], 0)
    b = run_replication(cfg, 50, Signal.constant(2.2), naive_zero_spec(), 0)
    # the zero "posterior" reproduces ||theta*||^2, identical for every prior sharing the data
    assert b.metrics["l2_sq"] == pytest.approx(7 * 2.2 * math.log(50 / 7))
    assert a.metrics["l2_sq"] != b.metrics["l2_sq"]


def test_single_replication_has_no_se():
    cfg = preset("sim2", n_values=(50,), replications=1, signals=(Signal.constant(2.2),), chain=SHORT)
    grid = run_grid(cfg)
    assert all(c.se("l1") is None for c in grid.cells)
    assert len(grid.cells) == 2


def test_reduced_sim1_grid_one_row_per_cell():
    cfg = preset("sim1", n_values=(50, 100), replications=2, chain=ChainConfig(n_iter=150, burn_in=50))
    grid = run_grid(cfg)
    keys = [(c.n, c.prior_label, c.t) for c in grid.cells]
    assert len(keys) == len(set(keys)) == 2 * 6 * 4
    assert keys == sorted(keys)
    assert all(c.n_ok == 2 and c.n_fail == 0 for c in grid.cells)


def test_grid_independent_of_parallelism():
    cfg = preset("sim2", n_values=(50,), replications=2, signals=(Signal.constant(4.2),), chain=SHORT)
    assert run_grid(cfg, 1).to_dict() == run_grid(cfg, 2).to_dict()


def test_aggregate_ignores_replication_order():
    cfg = preset("sim1", n_values=(50,), replications=4, signals=(Signal.constant(2.2),), chain=SHORT)
    grid = run_grid(cfg)
    shuffled = list(grid.replications)
    random.Random(0).shuffle(shuffled)
    again = aggregate(cfg, shuffled)
    assert [c.to_dict() for c in again] == [c.to_dict() for c in grid.cells]


def test_failures_are_counted_not_dropped(monkeypatch):
    real = experiments.iter_chain
    calls = {"k": 0}

    def flaky(*args, **kwargs):
        calls["k"] += 1
        if calls["k"] % 3 == 0:
            raise ChainFailure(5, 1)
        return real(*args, **kwargs)

    monkeypatch.setattr(experiments, "iter_chain", flaky)
    cfg = preset("sim1", n_values=(50,), replications=6, signals=(Signal.constant(2.2),),
                 prior_specs=(parse_prior_spec("t:1.1/sparsity:sharp"),), chain=SHORT)
    grid = run_grid(cfg)
    cell = grid.cells[0]
    assert (cell.n_ok, cell.n_fail) == (4, 2) and cell.unreliable
    failed = [r for r in grid.replications if r.failed]
    assert len(failed) == 2 and "sweep 5" in failed[0].error
