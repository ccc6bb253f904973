import math

import numpy as np
import pytest

from dwmt.core import ArgumentError, ContractViolation, grad_check
from dwmt.weights import (
    GradMode,
    WeightGenerator,
    closed_form_projection,
    generate_weights,
    generator_gradient,
    naive_generator_gradient,
    two_task_weight_ratio,
    validate_simplex,
    weight_update_loss,
)


def randomized_generator(rng, task_count, feature_dim):
    gen = WeightGenerator(task_count, feature_dim)
    gen.store.set_value("proj", rng.uniform(-1, 1, (task_count, feature_dim)))
    gen.store.set_value("bias", rng.uniform(-1, 1, task_count))
    return gen


class TestWeightGenerator:
    def test_rejects_degenerate_sizes(self):
        with pytest.raises(ArgumentError):
            WeightGenerator(1, 4)
        with pytest.raises(ArgumentError):
            WeightGenerator(3, 0)

    def test_zero_init_gives_uniform_weights(self):
        gen = WeightGenerator(4, 6)
        w = generate_weights(np.arange(6.0), gen)
        assert np.allclose(w, 0.25, atol=1e-15)

    def test_log_two_logit_gap(self):
        gen = WeightGenerator(2, 1)
        gen.store.set_value("bias", [math.log(2.0), 0.0])
        w = generate_weights(np.zeros(1), gen)
        assert np.allclose(w, [2 / 3, 1 / 3], atol=1e-15)

    def test_constant_logit_shift_leaves_weights_unchanged(self):
        rng = np.random.default_rng(13)
        gen = randomized_generator(rng, 3, 5)
        z = rng.uniform(-1, 1, 5)
        w = generate_weights(z, gen)
        gen.store.set_value("bias", gen.bias + 7.5)
        assert np.allclose(generate_weights(z, gen), w, atol=1e-12)

    def test_simplex_invariant_over_many_draws(self):
        rng = np.random.default_rng(29)
        for _ in range(1000):
            t = int(rng.integers(2, 6))
            d = int(rng.integers(1, 9))
            gen = randomized_generator(rng, t, d)
            w = generate_weights(rng.uniform(-5, 5, d), gen)
            assert np.all(w >= 0.0) and np.all(w <= 1.0)
            assert abs(float(w.sum()) - 1.0) <= 1e-9


class TestWeightUpdateLoss:
    def test_equal_split_unit_losses(self):
        assert weight_update_loss([0.5, 0.5], [1.0, 1.0]) == 1.0

    def test_mass_on_largest_loss_minimizes(self):
        losses = [0.5, 2.0, 1.0]
        concentrated = weight_update_loss([0.0, 1.0, 0.0], losses)
        rng = np.random.default_rng(41)
        for _ in range(100):
            w = rng.dirichlet(np.ones(3))
            assert weight_update_loss(w, losses) >= concentrated - 1e-12

    def test_floor_clamps_vanishing_loss(self):
        assert weight_update_loss([1.0, 0.0], [0.0, 5.0], floor=1e-8) == pytest.approx(1e8)

    def test_negative_loss_rejected(self):
        with pytest.raises(ContractViolation):
            weight_update_loss([0.5, 0.5], [1.0, -0.5])

    def test_off_simplex_rejected(self):
        with pytest.raises(ContractViolation):
            weight_update_loss([0.9, 0.9], [1.0, 1.0])


class TestGeneratorGradient:
    def test_worked_two_task_example_simplified(self):
        # zero init, losses (1, 2), z = (1, 0): coefficients 1/4 and 1/8
        gen = WeightGenerator(2, 2)
        proj_grad, bias_grad = generator_gradient(
            [1.0, 0.0], gen, [1.0, 2.0], GradMode.SIMPLIFIED)
        assert np.allclose(proj_grad, [[0.25, 0.0], [0.125, 0.0]], atol=1e-15)
        assert np.allclose(bias_grad, [0.25, 0.125], atol=1e-15)

    def test_worked_two_task_example_exact(self):
        gen = WeightGenerator(2, 2)
        proj_grad, bias_grad = generator_gradient(
            [1.0, 0.0], gen, [1.0, 2.0], GradMode.EXACT)
        assert np.allclose(proj_grad, [[0.125, 0.0], [-0.125, 0.0]], atol=1e-15)
        assert np.allclose(bias_grad, [0.125, -0.125], atol=1e-15)

    def test_exact_gradient_vanishes_for_equal_losses(self):
        rng = np.random.default_rng(3)
        gen = randomized_generator(rng, 3, 4)
        proj_grad, bias_grad = generator_gradient(
            rng.uniform(-1, 1, 4), gen, [0.7, 0.7, 0.7], GradMode.EXACT)
        assert np.allclose(proj_grad, 0.0, atol=1e-15)
        assert np.allclose(bias_grad, 0.0, atol=1e-15)

    def test_exact_mode_passes_finite_differences(self):
        rng = np.random.default_rng(47)
        for _ in range(5):
            gen = randomized_generator(rng, 3, 4)
            z = rng.uniform(-1, 1, 4)
            losses = rng.uniform(0.2, 3.0, 3)

            def f(store):
                value = weight_update_loss(generate_weights(z, gen), losses)
                proj_grad, bias_grad = generator_gradient(z, gen, losses, GradMode.EXACT)
                store.accumulate_grad("proj", proj_grad)
                store.accumulate_grad("bias", bias_grad)
                return value

            assert grad_check(f, gen.store, eps=1e-5) < 1e-6

    def test_simplified_mode_deviates_from_true_gradient(self):
        # the simplified rule drops the softmax cross terms, so against
        # finite differences it must NOT agree when losses differ
        rng = np.random.default_rng(53)
        gen = randomized_generator(rng, 3, 4)
        z = rng.uniform(0.5, 1.0, 4)
        losses = np.asarray([0.3, 1.0, 3.0])

        def f(store):
            value = weight_update_loss(generate_weights(z, gen), losses)
            proj_grad, bias_grad = generator_gradient(z, gen, losses, GradMode.SIMPLIFIED)
            store.accumulate_grad("proj", proj_grad)
            store.accumulate_grad("bias", bias_grad)
            return value

        assert grad_check(f, gen.store, eps=1e-5) > 1e-3

    @pytest.mark.parametrize("mode", [GradMode.SIMPLIFIED, GradMode.EXACT])
    def test_hard_task_dominance_after_one_step(self, mode):
        # from zero init, one descent step orders the weights like the losses
        rng = np.random.default_rng(59)
        for _ in range(50):
            t = int(rng.integers(2, 5))
            d = int(rng.integers(1, 9))
            gen = WeightGenerator(t, d)
            z = rng.uniform(0.1, 1.0, d) * rng.choice([-1.0, 1.0], d)
            losses = rng.uniform(0.2, 3.0, t)
            while len(np.unique(losses)) < t:
                losses = rng.uniform(0.2, 3.0, t)
            proj_grad, bias_grad = generator_gradient(z, gen, losses, mode)
            gen.apply_update(-0.5 * proj_grad, -0.5 * bias_grad)
            w = generate_weights(z, gen)
            assert np.array_equal(np.argsort(w), np.argsort(losses))
            assert np.argmax(w) == np.argmax(losses)

    @pytest.mark.parametrize("mode", [GradMode.SIMPLIFIED, GradMode.EXACT])
    @pytest.mark.parametrize("task_count", [2, 3, 4])
    def test_descent_never_raises_smallest_loss_weight(self, mode, task_count):
        rng = np.random.default_rng(61)
        for _ in range(50):
            gen = WeightGenerator(task_count, 3)
            z = rng.uniform(-1, 1, 3)
            losses = rng.uniform(0.1, 4.0, task_count)
            while len(np.unique(losses)) < task_count:
                losses = rng.uniform(0.1, 4.0, task_count)
            smallest = int(np.argmin(losses))
            before = generate_weights(z, gen)[smallest]
            proj_grad, bias_grad = generator_gradient(z, gen, losses, mode)
            gen.apply_update(-0.3 * proj_grad, -0.3 * bias_grad)
            after = generate_weights(z, gen)[smallest]
            assert after <= before + 1e-15


class TestClosedFormProjection:
    def test_empty_history_is_zero(self):
        proj = closed_form_projection([], task_count=3, feature_dim=4)
        assert np.array_equal(proj, np.zeros((3, 4)))

    def test_single_step_worked_example(self):
        proj = closed_form_projection([(np.asarray([1.0, 0.0]), np.asarray([1.0, 2.0]))])
        assert np.allclose(proj, [[-0.25, 0.0], [-0.125, 0.0]], atol=1e-15)

    def test_replay_matches_iterative_descent(self):
        # the iterative loop is the oracle: explicit gradient descent with a
        # frozen bias, stepping through the same history
        rng = np.random.default_rng(67)
        t, d = 3, 5
        history = [(rng.uniform(-1, 1, d), rng.uniform(0.1, 3.0, t)) for _ in range(50)]
        eta = 0.7

        gen = WeightGenerator(t, d)
        for z, losses in history:
            proj_grad, _ = generator_gradient(z, gen, losses, GradMode.SIMPLIFIED)
            gen.store.set_value("proj", gen.proj - eta * proj_grad)
        iterative = gen.proj

        replayed = closed_form_projection(history, eta=eta)
        assert np.max(np.abs(replayed - iterative)) < 1e-12


class TestTwoTaskWeightRatio:
    def test_equal_losses_give_unit_ratio(self):
        assert two_task_weight_ratio(1.5, 1.5, 1.0, 1.0, 3.0) == 1.0

    def test_worked_example(self):
        # (1/1 - 1/2) * 1/4 * 4 = 1/2; e^{0.5} = 1.6487212707001282
        assert two_task_weight_ratio(2.0, 1.0, 1.0, 1.0, 4.0) == \
            pytest.approx(math.exp(0.5), rel=1e-15)
        assert two_task_weight_ratio(2.0, 1.0, 1.0, 1.0, 4.0) == pytest.approx(1.648721, abs=5e-7)

    def test_larger_first_loss_means_larger_first_weight(self):
        rng = np.random.default_rng(71)
        for _ in range(100):
            l2 = float(rng.uniform(0.1, 2.0))
            l1 = l2 + float(rng.uniform(0.01, 2.0))
            ratio = two_task_weight_ratio(l1, l2, float(rng.uniform(0.1, 3.0)),
                                          float(rng.uniform(0.1, 3.0)),
                                          float(rng.uniform(0.01, 5.0)))
            assert ratio > 1.0

    def test_non_positive_inputs_rejected(self):
        with pytest.raises(ContractViolation):
            two_task_weight_ratio(0.0, 1.0, 1.0, 1.0, 1.0)
        with pytest.raises(ContractViolation):
            two_task_weight_ratio(1.0, 1.0, -1.0, 1.0, 1.0)
        with pytest.raises(ContractViolation):
            two_task_weight_ratio(1.0, 1.0, 1.0, 1.0, -0.1)

    def test_one_simplified_step_reproduces_closed_form(self):
        # a projection-only unit-rate step from zero init must land exactly on
        # the closed-form ratio (the analysis keeps the bias frozen at zero)
        rng = np.random.default_rng(73)
        for _ in range(100):
            d = int(rng.integers(1, 9))
            z = rng.uniform(-1, 1, d)
            losses = rng.uniform(0.3, 3.0, 2)
            gen = WeightGenerator(2, d)
            proj_grad, _ = generator_gradient(z, gen, losses, GradMode.SIMPLIFIED,
                                              floor=1e-8)
            gen.store.set_value("proj", gen.proj - proj_grad)
            w = generate_weights(z, gen)
            expected = two_task_weight_ratio(losses[0], losses[1], 1.0, 1.0, float(z @ z))
            assert w[0] / w[1] == pytest.approx(expected, rel=1e-9, abs=1e-9)


class TestNaiveGradient:
    def test_equal_losses_give_zero_gradient(self):
        rng = np.random.default_rng(79)
        gen = randomized_generator(rng, 3, 4)
        proj_grad, bias_grad = naive_generator_gradient(
            rng.uniform(-1, 1, 4), gen, [1.2, 1.2, 1.2])
        assert np.allclose(proj_grad, 0.0, atol=1e-15)
        assert np.allclose(bias_grad, 0.0, atol=1e-15)

    def test_descent_favors_smaller_loss(self):
        gen = WeightGenerator(2, 2)
        z = np.asarray([1.0, -0.5])
        proj_grad, bias_grad = naive_generator_gradient(z, gen, [2.0, 1.0])
        gen.apply_update(-0.5 * proj_grad, -0.5 * bias_grad)
        w = generate_weights(z, gen)
        assert w[1] > w[0]


def test_validate_simplex_accepts_softmax_output():
    rng = np.random.default_rng(83)
    for _ in range(100):
        gen = randomized_generator(rng, 4, 3)
        validate_simplex(generate_weights(rng.uniform(-3, 3, 3), gen), 4)
