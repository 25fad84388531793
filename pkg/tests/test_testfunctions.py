import numpy as np
import pytest

from saabo.testfunctions import eval_test_function, get_test_function


def _rng(seed):
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def test_registry_contents():
    for name in ("branin", "rosenbrock", "ackley", "hartmann6",
                 "hartmann6_constrained_l1", "hartmann6_constrained_l2"):
        fn = get_test_function(name)
        assert fn.bounds.shape == (fn.dim, 2)
    with pytest.raises(ValueError):
        get_test_function("rastrigin")


def test_branin_optimum():
    # [DERIVED] global minimum 0.397887 at (pi, 2.275)
    fn = get_test_function("branin")
    assert fn.f_min(np.array([np.pi, 2.275])) == pytest.approx(0.397887, abs=1e-4)
    assert fn.known_optimum == pytest.approx(0.397887, abs=1e-4)


def test_ackley_optimum_at_origin():
    fn = get_test_function("ackley")
    assert fn.f_min(np.zeros(fn.dim)) == pytest.approx(0.0, abs=1e-12)


def test_rosenbrock_optimum_at_ones():
    fn = get_test_function("rosenbrock")
    assert fn.f_min(np.ones(fn.dim)) == pytest.approx(0.0, abs=1e-12)


def test_hartmann6_optimum():
    # [DERIVED] published optimum -3.32237
    fn = get_test_function("hartmann6")
    x_star = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])
    assert fn.f_min(x_star) == pytest.approx(-3.32237, abs=1e-4)


def test_objective_is_negated_minimization_form():
    fn = get_test_function("hartmann6")
    x = _rng(0).random(6)
    assert fn.objective(x) == pytest.approx(-fn.f_min(x), abs=1e-12)


def test_evaluating_optimum_reproduces_known_value():
    for name in ("branin", "rosenbrock", "ackley", "hartmann6"):
        fn = get_test_function(name)
        for x_star in np.atleast_2d(fn.optimizers):
            assert fn.f_min(x_star) == pytest.approx(fn.known_optimum, abs=1e-4)


class TestConstrained:
    def test_l1_constraint_sign_convention(self):
        fn = get_test_function("hartmann6_constrained_l1")
        assert fn.constraint(np.zeros(6)) < 0  # ||0||_1 - 3 feasible
        assert fn.constraint(np.ones(6)) > 0
        assert fn.feasible(np.zeros(6))
        assert not fn.feasible(np.ones(6))

    def test_regret_value_zero_when_infeasible(self):
        fn = get_test_function("hartmann6_constrained_l2")
        x_bad = np.full(6, 0.9)
        assert not fn.feasible(x_bad)
        assert fn.regret_value(x_bad) == 0.0
        x_ok = np.full(6, 0.2)
        assert fn.feasible(x_ok)
        assert fn.regret_value(x_ok) == pytest.approx(fn.objective(x_ok), abs=1e-12)


class TestEval:
    def test_noiseless_matches_objective(self):
        fn = get_test_function("branin")
        x = np.array([1.0, 5.0])
        assert eval_test_function(fn, x, noisy=False) == pytest.approx(
            fn.objective(x), abs=1e-12
        )

    def test_noise_statistics(self):
        fn = get_test_function("branin")
        x = np.array([1.0, 5.0])
        rng = _rng(1)
        draws = np.array(
            [eval_test_function(fn, x, noisy=True, rng=rng) for _ in range(2000)]
        )
        assert draws.mean() == pytest.approx(fn.objective(x), abs=0.05)
        assert draws.std() == pytest.approx(fn.noise_sd, abs=0.03)

    def test_bounds_check(self):
        fn = get_test_function("branin")
        with pytest.raises(ValueError):
            eval_test_function(fn, np.array([100.0, 0.0]), noisy=False)
