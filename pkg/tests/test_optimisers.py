import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellident.costs import CostValue
from cellident.errors import ConfigurationError
from cellident.optimisers import (ALGORITHMS, GRADIENT_ALGORITHMS, AdamState, CmaState, NoFeasibleEvaluation,
                                  OptimiserConfig, RpropState, SnesState, Swarm, XnesState, abandon_nests,
                                  adamw_step, cma_update, cuckoo_step, de_select, de_trials, gradient_descent_step,
                                  irprop_minus_step, nelder_mead_step, nes_utilities, pso_step, reflect, run,
                                  snes_update, xnes_update)
from cellident.parameters import Parameter, ParameterSet, Transformation

POPULATION = sorted(set(ALGORITHMS) - GRADIENT_ALGORITHMS)
GRADIENT = sorted(GRADIENT_ALGORITHMS)


def sphere(x, gradient=False):
    x = np.asarray(x, dtype=float)
    return CostValue(float(x @ x), 2 * x if gradient else None)


def rosenbrock(x, gradient=False):
    a, b = x
    return CostValue(float((1 - a) ** 2 + 100 * (b - a * a) ** 2))


def box(d=2, lo=-5.0, hi=5.0):
    init = [2.0, -1.5, 1.0, 0.5][:d]
    return ParameterSet([Parameter(f"x{k}", lo, hi, init[k] if lo <= init[k] <= hi else None) for k in range(d)])


def config(algorithm, **kw):
    kw.setdefault("stall_iterations", 10 ** 6)
    kw.setdefault("abs_tol", 0.0)
    if algorithm in ("gd", "adamw"):
        kw.setdefault("step_size", 0.1)
    return OptimiserConfig(algorithm, **kw)


def evaluations_to_reach(result, level):
    for row in result.log:
        if row["best"] < level:
            return row["evaluations"]
    return math.inf


class TestGradientSteps:
    def test_gd(self):
        assert gradient_descent_step([1.0], [0.0], 0.25)[0] == 1.0
        u = gradient_descent_step([1.0], [2.0], 0.25)
        assert u[0] == 0.5
        assert gradient_descent_step(u, 2 * u, 0.25)[0] == 0.25

    def test_adamw_first_step(self):
        _, u = adamw_step(AdamState.zeros(1), [0.0], [1.0], 0.1, weight_decay=0.0)
        assert u[0] == pytest.approx(-0.1, rel=1e-6)

    def test_adamw_zero_gradient(self):
        state, u = adamw_step(AdamState.zeros(2), [0.3, -0.2], [0.0, 0.0], 0.1, weight_decay=0.0)
        assert np.array_equal(u, [0.3, -0.2]) and state.t == 1

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-10, 10), st.floats(1e-3, 1.0), st.floats(0.0, 0.5))
    def test_adamw_pure_decay(self, u0, eta, lam):
        _, u = adamw_step(AdamState.zeros(1), [u0], [0.0], eta, weight_decay=lam)
        assert u[0] == pytest.approx(u0 * (1 - eta * lam), rel=1e-12, abs=1e-300)

    def test_irprop_growth_and_flip(self):
        s = RpropState.initial(2, 0.1)
        s, u = irprop_minus_step(s, [0.0, 0.0], [1.0, 1.0])
        s, u = irprop_minus_step(s, u, [1.0, -1.0])
        assert s.delta[0] == pytest.approx(0.12)
        assert s.delta[1] == pytest.approx(0.05)
        assert u[1] == -0.1  # flipped coordinate does not move
        assert s.g_prev[1] == 0.0

    def test_irprop_first_step(self):
        _, u = irprop_minus_step(RpropState.initial(1, 0.1), [1.0], [2.0])
        assert u[0] == pytest.approx(0.9)


class TestSimplex:
    def test_reflection(self):
        S = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        c, xr = reflect(S, [0.0, 2.0, 1.0])
        assert np.array_equal(c, [0.0, 0.5])
        assert np.array_equal(xr, [-1.0, 1.0])

    def test_reflect_move(self):
        S = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        f = lambda x: (x[0] + 0.8) ** 2 + (x[1] - 0.9) ** 2  # noqa: E731
        # reflected point beats the best vertex, the expanded one does not
        S2, F2, move = nelder_mead_step(S, [f(v) for v in S], f)
        assert move == "reflect"
        assert any(np.array_equal(v, [-1.0, 1.0]) for v in S2)

    def test_degenerate_simplex_shrinks_to_best(self):
        S = np.ones((3, 2))
        S2, F2, move = nelder_mead_step(S, [1.0, 1.0, 1.0], lambda x: 1.0)
        assert move == "shrink"
        assert np.array_equal(S2[0], [1.0, 1.0])

    def test_sphere_iterations(self):
        r = run(sphere, box(), config("nelder-mead", max_iterations=500, max_evaluations=10 ** 5))
        assert r.cost < 1e-6


class TestPopulationSteps:
    def test_pso_fixed_point(self, rng):
        x = np.array([[0.5, -0.5]])
        sw = pso_step(Swarm(x, np.zeros_like(x), x.copy(), np.zeros(1)), x[0], rng=rng)
        assert np.array_equal(sw.x, x) and np.array_equal(sw.v, np.zeros_like(x))

    def test_pso_hand_update(self):
        x = np.array([[1.0, 2.0]])
        sw = Swarm(x, np.array([[0.5, -0.5]]), np.array([[2.0, 2.0]]), np.zeros(1))
        out = pso_step(sw, [0.0, 4.0], w=0.5, c1=1.0, c2=2.0, r1=np.ones((1, 2)), r2=np.ones((1, 2)))
        # v = 0.5 v + (pbest - x) + 2 (gbest - x)
        assert np.allclose(out.v, [[0.25 + 1.0 - 2.0, -0.25 + 0.0 + 4.0]])
        assert np.allclose(out.x, x + out.v)

    def test_cuckoo_nest_at_best_is_unchanged(self, rng):
        nests = np.array([[0.3, 0.3], [1.0, -1.0], [2.0, 0.5]])
        out = cuckoo_step(nests, nests[0], 0.5, 1.5, rng, partner=False)
        assert np.array_equal(out[0], nests[0])
        assert not np.array_equal(out[1:], nests[1:])

    def test_cuckoo_partner_keeps_incumbent_moving(self, rng):
        nests = np.array([[0.3, 0.3], [1.0, -1.0], [2.0, 0.5]])
        moved = [not np.array_equal(cuckoo_step(nests, nests[0], 0.5, 1.5, rng)[0], nests[0]) for _ in range(20)]
        assert any(moved)

    def test_abandon_zero_fraction(self, rng):
        idx, new = abandon_nests(np.ones((10, 2)), np.arange(10.0), 0.0, rng)
        assert idx.size == 0 and new.shape == (0, 2)

    def test_abandon_never_drops_best(self, rng):
        f = rng.random(8)
        idx, new = abandon_nests(rng.random((8, 2)), f, 0.99, rng)
        assert int(np.argmin(f)) not in idx and idx.size == 7

    def test_de_identical_population(self, rng):
        pop = np.tile([0.4, -0.2], (6, 1))
        trials = de_trials(pop, rng=rng)
        assert np.array_equal(trials, pop)
        new, f = de_select(pop, np.ones(6), trials, np.ones(6))
        assert np.array_equal(new, pop)

    def test_de_full_crossover(self, rng):
        pop = rng.normal(size=(8, 3))
        trials = de_trials(pop, CR=1.0, rng=rng)
        assert np.all(trials != pop)

    def test_de_needs_four(self, rng):
        with pytest.raises(ValueError):
            de_trials(np.zeros((3, 2)), rng=rng)


class TestEsUpdates:
    def test_cma_mean_is_weighted_recombination(self, rng):
        st0 = CmaState.initial(np.zeros(2), 0.5)
        X = rng.normal(size=(6, 2))
        f = np.arange(6.0)
        new = cma_update(st0, X, f)
        from cellident.optimisers import cma_weights
        w, _ = cma_weights(6)
        assert np.allclose(new.mean, w @ X[:3])
        assert np.allclose(new.C, new.C.T)
        assert np.all(np.linalg.eigvalsh(new.C) > 0)

    def test_cma_sampling_covariance(self):
        st0 = CmaState.initial(np.zeros(2), 1.0)
        st0.C = np.array([[2.0, 0.6], [0.6, 1.0]])
        B, D = st0.eig()
        Z = np.random.default_rng(0).standard_normal((200_000, 2))
        Y = Z @ (B * D).T
        assert np.allclose(np.cov(Y.T), st0.C, atol=0.02)

    def test_nes_utilities(self):
        u = nes_utilities(6)
        assert u.sum() == pytest.approx(0.0, abs=1e-15)
        assert np.all(np.diff(u) <= 0)

    def test_zero_utilities_leave_state(self, rng):
        Z = rng.normal(size=(6, 2))
        x = xnes_update(XnesState(np.ones(2), 0.3, np.eye(2)), Z, np.zeros(6))
        assert np.allclose(x.mean, 1.0) and x.sigma == pytest.approx(0.3) and np.allclose(x.B, np.eye(2))
        s = snes_update(SnesState(np.ones(2), np.full(2, 0.3)), Z, np.zeros(6))
        assert np.allclose(s.mean, 1.0) and np.allclose(s.sigma, 0.3)


class TestRun:
    @pytest.mark.parametrize("algorithm", GRADIENT)
    def test_gradient_sphere(self, algorithm):
        r = run(sphere, box(), config(algorithm, max_evaluations=2000, seed=3))
        assert evaluations_to_reach(r, 1e-6) <= 2000

    @pytest.mark.parametrize("algorithm", POPULATION)
    def test_population_sphere(self, algorithm):
        r = run(sphere, box(), config(algorithm, max_evaluations=8000, seed=3))
        assert evaluations_to_reach(r, 1e-6) <= 8000

    def test_cmaes_rosenbrock(self):
        r = run(rosenbrock, box(lo=-2.0, hi=2.0), config("cmaes", max_evaluations=20000, seed=0))
        assert evaluations_to_reach(r, 1e-8) <= 20000
        assert np.allclose(r.x, [1.0, 1.0], atol=1e-3)

    @pytest.mark.parametrize("algorithm", sorted(ALGORITHMS))
    def test_repeat_and_threads_bit_identical(self, algorithm):
        a = run(sphere, box(), config(algorithm, max_evaluations=300, seed=11))
        b = run(sphere, box(), config(algorithm, max_evaluations=300, seed=11))
        c = run(sphere, box(), config(algorithm, max_evaluations=300, seed=11, threads=3))
        assert a.log == b.log == c.log
        assert np.array_equal(a.x, c.x) and a.cost == c.cost

    @pytest.mark.parametrize("algorithm", sorted(ALGORITHMS))
    def test_trace_monotone_and_in_bounds(self, algorithm):
        ps = box(lo=0.5, hi=5.0)
        r = run(sphere, ps, config(algorithm, max_evaluations=500, seed=2))
        assert np.all(np.diff(r.best_trace) <= 0)
        assert np.all(r.x >= ps.lower) and np.all(r.x <= ps.upper)
        assert r.termination in ("tolerance", "stall", "budget")

    def test_log_transform_runs_in_search_space(self):
        ps = ParameterSet([Parameter("k", 1e-6, 1e-2, 1e-3, transform=Transformation.log())])
        target = 3.3e-5
        r = run(lambda x, gradient=False: CostValue(float(np.log(x[0] / target) ** 2)), ps,
                config("nelder-mead", max_evaluations=500))
        assert r.x[0] == pytest.approx(target, rel=1e-3)

    def test_stall_and_tolerance_terminations(self):
        flat = lambda x, gradient=False: CostValue(1.0)  # noqa: E731
        r = run(flat, box(), OptimiserConfig("pso", stall_iterations=5, abs_tol=0.0, tol_iterations=10 ** 6))
        assert r.termination == "stall" and r.iterations == 6
        r = run(flat, box(), OptimiserConfig("pso", abs_tol=1e-9, tol_iterations=3))
        assert r.termination == "tolerance"

    def test_budget_termination(self):
        r = run(sphere, box(), config("cmaes", max_evaluations=30))
        assert r.termination == "budget"

    def test_no_feasible_evaluation(self):
        with pytest.raises(NoFeasibleEvaluation):
            run(lambda x, gradient=False: CostValue.failure(), box(), config("de", max_evaluations=100))

    def test_gradient_algorithm_needs_gradient(self):
        class NoGrad:
            differentiable = False

            def __call__(self, x, gradient=False):
                return sphere(x)

        with pytest.raises(ConfigurationError):
            run(NoGrad(), box(), config("irprop-"))

    @pytest.mark.parametrize("kw", [dict(max_evaluations=0), dict(abs_tol=-1.0), dict(step_size=0.0),
                                    dict(threads=0), dict(algorithm="bfgs")])
    def test_config_validation(self, kw):
        kw.setdefault("algorithm", "cmaes")
        with pytest.raises(ValueError):
            OptimiserConfig(**kw)
