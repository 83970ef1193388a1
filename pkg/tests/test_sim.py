import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from nbthin.analytic import HalfSpaceDensity, Model, poisson_mixture
from nbthin.geometry import Window
from nbthin.rules import Constant, Geometric, MaternI
from nbthin.sim import (
    ROLE_MARKS,
    ROLE_POINTS,
    BufferViolationError,
    InvalidBoundError,
    PointPattern,
    SeedSpec,
    neighbour_counts,
    neighbour_counts_bruteforce,
    run_replicates,
    sample_ppp,
    simulate_coupled,
    simulate_input,
    simulate_thinning,
    thin,
    thin_coupled,
)

W = Window.unit(2)
MATERN = Model(2, 0.05, MaternI(), lam=50.0)


def test_seed_streams():
    a = SeedSpec(7, 3).rng(ROLE_POINTS).random(5)
    assert np.array_equal(a, SeedSpec(7, 3).rng(ROLE_POINTS).random(5))
    assert not np.array_equal(a, SeedSpec(7, 4).rng(ROLE_POINTS).random(5))
    assert not np.array_equal(a, SeedSpec(8, 3).rng(ROLE_POINTS).random(5))
    assert not np.array_equal(a, SeedSpec(7, 3).rng(ROLE_MARKS).random(5))


def test_ppp_mean_count():
    counts = run_replicates(lambda s: len(sample_ppp(100.0, W, s)), 11, 1000)
    assert abs(np.mean(counts) - 100.0) <= 3 * math.sqrt(100.0 / 1000)


def test_ppp_zero_intensity():
    assert len(sample_ppp(0.0, W, SeedSpec(0))) == 0


def test_ppp_indicator_density():
    dens = lambda x: np.where(np.asarray(x)[:, 0] < 0.5, 80.0, 0.0)  # noqa: E731
    counts = run_replicates(lambda s: len(sample_ppp((dens, 80.0), W, s)), 5, 800)
    assert abs(np.mean(counts) - 40.0) <= 3 * math.sqrt(40.0 / 800)
    pat = sample_ppp((dens, 80.0), W, SeedSpec(1))
    assert np.all(pat.points[:, 0] < 0.5)


def test_ppp_invalid_bound():
    with pytest.raises(InvalidBoundError):
        sample_ppp((lambda x: np.full(len(x), 10.0), 5.0), W, SeedSpec(0))


def test_points_inside_window():
    box = Window((-1.0, 2.0), (0.5, 2.5))
    pat = sample_ppp(300.0, box, SeedSpec(2))
    assert np.all(box.contains(pat.points))


# neighbour counts ----------------------------------------------------------


def test_closed_ball_tie():
    pts = np.array([[0.0, 0.0], [0.5, 0.0]])
    assert neighbour_counts(pts, 0.5).tolist() == [1, 1]
    assert neighbour_counts(np.array([[0.2, 0.3]]), 0.1).tolist() == [0]


def test_grid_matches_bruteforce_random():
    pts = np.random.default_rng(0).random((200, 2))
    assert np.array_equal(neighbour_counts(pts, 0.08), neighbour_counts_bruteforce(pts, 0.08))


@given(
    st.integers(1, 3),
    st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8), st.integers(0, 8)), min_size=0, max_size=60),
    st.sampled_from([0.25, 0.5, 1.0, 0.3]),
)
def test_grid_matches_bruteforce_with_ties(d, cells, r):
    # lattice coordinates put many pairs at exactly distance r
    pts = np.array(cells, dtype=float).reshape(-1, 3)[:, :d] * 0.25
    assert np.array_equal(neighbour_counts(pts, r), neighbour_counts_bruteforce(pts, r))


# thinning ------------------------------------------------------------------


def test_constant_rules_keep_all_or_nothing():
    pat = simulate_input(MATERN, W, SeedSpec(3))
    keep_all = thin(pat, MATERN.with_rule(Constant(1.0)), W, SeedSpec(3))
    assert keep_all.retained.all()
    assert np.array_equal(keep_all.points, pat.restrict(W).points)
    assert len(thin(pat, MATERN.with_rule(Constant(0.0)), W, SeedSpec(3)).kept()) == 0


def test_matern_retained_points_are_isolated():
    for i in range(50):
        inp = simulate_input(MATERN, W, SeedSpec(9, i))
        out = thin(inp, MATERN, W, SeedSpec(9, i)).kept()
        for x in out.points:
            dist = np.linalg.norm(inp.points - x, axis=1)
            assert np.sum(dist <= MATERN.r) == 1


def test_buffer_violation():
    inp = sample_ppp(50.0, W, SeedSpec(0))
    with pytest.raises(BufferViolationError):
        thin(inp, MATERN, W, SeedSpec(0))


def test_explicit_marks_must_align():
    inp = simulate_input(MATERN, W, SeedSpec(0))
    with pytest.raises(ValueError):
        thin(inp, MATERN, W, marks=np.zeros(3))


def test_mark_tie_retains():
    rule = Geometric(0.5, 0.5)
    model = Model(1, 0.1, rule, lam=1.0)
    inp = PointPattern(np.array([[0.5]]), Window((-0.5,), (1.5,)))
    out = thin(inp, model, Window((0.0,), (1.0,)), marks=np.array([0.5]))
    assert out.retained.tolist() == [True]


def test_buffer_sufficiency():
    model = Model(2, 0.05, Geometric(0.9, 0.5), lam=80.0)
    for i in range(20):
        seed = SeedSpec(21, i)
        wide = simulate_input(model, W, seed, buffer=2 * model.r)
        narrow = wide.restrict(W.dilate(model.r))
        u = seed.rng(ROLE_MARKS).random(len(wide.restrict(W)))
        a = thin(wide, model, W, marks=u)
        b = thin(narrow, model, W, marks=u)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.retained, b.retained)


def test_finite_range_independence():
    model = Model(2, 0.05, Geometric(0.9, 0.5), lam=60.0)
    win = Window((0.0, 0.0), (1.0, 0.4))
    a_box, b_box = Window((0.0, 0.0), (0.4, 0.4)), Window((0.6, 0.0), (1.0, 0.4))

    def task(seed):
        kept = simulate_thinning(model, win, seed).kept()
        return len(kept.restrict(a_box)), len(kept.restrict(b_box))

    counts = np.array(run_replicates(task, 33, 2000))
    rho = np.corrcoef(counts.T)[0, 1]
    assert abs(rho) <= 3 / math.sqrt(len(counts))


def test_coupled_constant_rule_never_differs():
    model = MATERN.with_rule(Constant(0.6))
    assert all(simulate_coupled(model, W, SeedSpec(4, i)).differ_count == 0 for i in range(20))


def test_coupled_dependent_matches_thin():
    for i in range(5):
        seed = SeedSpec(12, i)
        a = simulate_coupled(MATERN, W, seed).dependent
        b = simulate_thinning(MATERN, W, seed)
        assert np.array_equal(a.points, b.points) and np.array_equal(a.retained, b.retained)


def test_coupled_mean_differ_count():
    m_p = poisson_mixture(MATERN.rule, MATERN.mu)
    counts = run_replicates(lambda s: simulate_coupled(MATERN, W, s, m_p=m_p).differ_count, 17, 500)
    mu = MATERN.mu
    target = 50.0 * 2 * math.exp(-mu) * (1 - math.exp(-mu))
    assert abs(np.mean(counts) - target) <= 3 * np.std(counts, ddof=1) / math.sqrt(500)


def test_independent_thinning_counts_are_poisson():
    m_p = poisson_mixture(MATERN.rule, MATERN.mu)
    counts = np.array(
        run_replicates(lambda s: int(simulate_coupled(MATERN, W, s, m_p=m_p).independent.retained.sum()), 41, 1000)
    )
    mean = 50.0 * m_p
    # pool the Poisson cells into bins of expected count >= 20
    edges = np.unique(stats.poisson.ppf(np.linspace(0, 1, 16)[1:-1], mean)).astype(int)
    observed = np.bincount(np.searchsorted(edges, counts, side="right"), minlength=len(edges) + 1)
    cdf = np.concatenate([[0.0], stats.poisson.cdf(edges - 1, mean), [1.0]])
    expected = np.diff(cdf) * len(counts)
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_inhomogeneous_input_thinning():
    model = Model(2, 0.05, MaternI(), density=HalfSpaceDensity(60.0, 0.0, 0, 0.5), lam_bound=60.0)
    out = simulate_thinning(model, W, SeedSpec(5))
    assert np.all(out.points[:, 0] >= 0.5)


# plumbing ------------------------------------------------------------------


def test_threads_do_not_change_results():
    task = lambda s: simulate_thinning(MATERN, W, s).to_bytes()  # noqa: E731
    assert run_replicates(task, 99, 12, threads=1) == run_replicates(task, 99, 12, threads=4)


def test_run_replicates_order_and_validation():
    assert run_replicates(lambda s: s.replicate_index, 0, 7, threads=3) == list(range(7))
    with pytest.raises(ValueError):
        run_replicates(lambda s: 0, 0, 0)


def test_serialisation_round_trips():
    pat = simulate_thinning(MATERN, W, SeedSpec(8))
    back = PointPattern.from_csv(pat.to_csv("hash"), W)
    np.testing.assert_array_equal(back.points, pat.points)
    np.testing.assert_array_equal(back.marks, pat.marks)
    np.testing.assert_array_equal(back.retained, pat.retained)
    blob = pat.to_bytes()
    assert len(blob) == 16 + 8 * len(pat) * 4
    back = PointPattern.from_bytes(blob, W)
    np.testing.assert_array_equal(back.points, pat.points)
    np.testing.assert_array_equal(back.retained, pat.retained)


def test_empty_pattern_round_trips():
    pat = PointPattern(np.zeros((0, 2)), W)
    assert len(PointPattern.from_csv(pat.to_csv(), W)) == 0
    assert len(PointPattern.from_bytes(pat.to_bytes(), W)) == 0


def test_pattern_validation():
    with pytest.raises(ValueError):
        PointPattern(np.zeros((3, 3)), W)
    with pytest.raises(ValueError):
        PointPattern(np.zeros((2, 2)), W, marks=np.array([0.5, 1.5]))


def test_translation_preserves_thinning():
    shift = np.array([3.0, -2.0])
    seed = SeedSpec(6)
    inp = simulate_input(MATERN, W, seed)
    a = thin(inp, MATERN, W, seed)
    b = thin(inp.translate(shift), MATERN, W.translate(shift), seed)
    np.testing.assert_allclose(b.points - shift, a.points, atol=1e-12)
    assert np.array_equal(a.retained, b.retained)


def test_thin_coupled_shares_marks():
    # two close points and one isolated point; Matern I keeps only the isolated one
    win = Window((0.0, 0.0), (1.0, 1.0))
    pts = np.array([[0.2, 0.2], [0.22, 0.2], [0.8, 0.8]])
    inp = PointPattern(pts, win.dilate(0.05))
    model = Model(2, 0.05, MaternI(), lam=1.0)
    res = thin_coupled(inp, model, win, marks=np.array([0.1, 0.9, 0.3]), m_p=0.5)
    assert res.dependent.retained.tolist() == [False, False, True]
    assert res.independent.retained.tolist() == [True, False, True]
    assert res.differ_count == 1
