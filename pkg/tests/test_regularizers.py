import math

import numpy as np
import pytest

from ellelab.attacks import fgsm
from ellelab.autodiff import Graph, finite_diff_check
from ellelab.errors import ContractError
from ellelab.models import (
    AffineSurface,
    HingeSurface,
    ModelConfig,
    QuadraticSurface,
    RidgePolynomialSurface,
    model_new,
)
from ellelab.probes import scalar_loss, second_dir_derivative_ad, second_dir_derivative_fd
from ellelab.regularizers import (
    FIVE_POINT_WEIGHTS,
    AdaptiveLambdaState,
    LinearityDraw,
    RegularizerSpec,
    adaptive_lambda_update,
    compute_term,
    cosine_misalignment,
    cure_term,
    draw_linearity_sample,
    elle_2p_term,
    elle_5pt_term,
    elle_term,
    five_point_residual,
    gradalign_term,
    gradnorm_term,
    linearity_residual,
    llr_sq_term,
    taylor_residual,
)

SQUARED = QuadraticSurface.squared_norm(2)


def _bound(objective):
    return objective.bind(Graph())


class TestElle:
    def test_quadratic_closed_form(self):
        draw = LinearityDraw(x_a=[[1.0, 0.0]], x_b=[[0.0, 1.0]], alpha=0.5)
        value, sample = elle_term(_bound(SQUARED), None, None, 0.5, draw=draw)
        np.testing.assert_allclose(sample.residual, [-0.5])
        assert value.item() == pytest.approx(0.25)
        np.testing.assert_allclose(sample.x_c, [[0.5, 0.5]])

    def test_residual_is_half_weighted_directional_curvature_on_quadratics(self, rng):
        surface = QuadraticSurface.random(3, rng)
        x_a = rng.uniform(0, 1, size=(4, 3))
        x_b = rng.uniform(0, 1, size=(4, 3))
        alpha = rng.uniform(0, 1, size=4)
        residual, _ = linearity_residual(_bound(surface), x_a, x_b, alpha, None)
        curvature = np.array([surface.directional_second(a - b) for a, b in zip(x_a, x_b)])
        np.testing.assert_allclose(residual.value, -alpha * (1 - alpha) / 2 * curvature, rtol=1e-9, atol=1e-12)

    def test_curvature_relation_over_many_quadratics(self, rng):
        for _ in range(1000):
            surface = QuadraticSurface.random(3, rng)
            x_a, x_b = rng.uniform(0, 1, size=(2, 1, 3))
            alpha = rng.uniform(0, 1, size=1)
            residual, x_c = linearity_residual(_bound(surface), x_a, x_b, alpha, None)
            v = (x_a - x_b)[0]
            analytic = float(v @ (surface.q + surface.q.T) @ v)
            # central second differences are exact on quadratics, so a unit step avoids cancellation
            fd = second_dir_derivative_fd(scalar_loss(surface, None), x_c, x_a - x_b, h=1.0)
            assert fd == pytest.approx(analytic, rel=1e-9, abs=1e-12)
            assert surface.directional_second(v) == pytest.approx(analytic, rel=1e-12, abs=1e-14)
            weight = alpha[0] * (1 - alpha[0]) / 2
            assert residual.item() == pytest.approx(-weight * analytic, rel=1e-9, abs=1e-12)
            assert residual.item() == pytest.approx(-weight * fd, rel=1e-9, abs=1e-12)

    def test_residual_tracks_curvature_on_smooth_network(self):
        params = model_new(ModelConfig(input_dim=5, hidden=(8,), classes=3, activation="softplus", seed=4))
        rng = np.random.default_rng(21)
        x = rng.uniform(0.3, 0.7, size=(1, 5))
        y = np.array([1])
        draw = draw_linearity_sample(x, 1e-3, rng)
        residual, x_c = linearity_residual(_bound(params), draw.x_a, draw.x_b, draw.alpha, y)
        a = draw.alpha[0]
        curvature = second_dir_derivative_ad(params, x_c, y, draw.x_a - draw.x_b)
        ratio = abs(residual.item()) / (a * (1 - a) / 2 * abs(curvature))
        assert 0.95 <= ratio <= 1.05

    def test_draw_order_is_x_a_then_x_b_then_alpha(self):
        x = np.full((3, 2), 0.5)
        draw = draw_linearity_sample(x, 0.1, np.random.default_rng(8), clamp=False)
        ref = np.random.default_rng(8)
        off_a = ref.uniform(-1, 1, size=(3, 2)) * 0.1
        off_b = ref.uniform(-1, 1, size=(3, 2)) * 0.1
        alpha = ref.uniform(0, 1, size=3)
        np.testing.assert_array_equal(draw.x_a, x + off_a)
        np.testing.assert_array_equal(draw.x_b, x + off_b)
        np.testing.assert_array_equal(draw.alpha, alpha)

    def test_shared_alpha_draws_one_value(self):
        draw = draw_linearity_sample(np.full((4, 2), 0.5), 0.1, np.random.default_rng(0), alpha_mode="shared")
        assert np.all(draw.alpha == draw.alpha[0])

    def test_invalid_alpha(self):
        with pytest.raises(ContractError):
            LinearityDraw(x_a=[[0.0]], x_b=[[1.0]], alpha=1.5)
        with pytest.raises(ContractError):
            draw_linearity_sample(np.zeros((1, 2)), 0.1, np.random.default_rng(0), alpha_mode="batch")


class TestTwoPoint:
    def test_blind_on_hinge_counterexample(self, rng):
        hinge = HingeSurface()
        x = np.full((10_000, 2), 0.5)
        x_fgsm = fgsm(hinge, x, None, 0.5)
        np.testing.assert_allclose(x_fgsm, 0.0)
        value, sample = elle_2p_term(_bound(hinge), x, None, x_fgsm, 0.5, rng=rng)
        np.testing.assert_allclose(sample.residual, 0.0, atol=1e-12)
        assert value.item() == pytest.approx(0.0, abs=1e-20)
        _, three_point = elle_term(_bound(hinge), x, None, 0.5, rng=rng)
        assert three_point.e_lin.max() > 1e-4

    def test_three_point_term_sees_the_kink(self):
        # x_a and x_b lie on opposite sides of ⟨v, x⟩ = 0
        draw = LinearityDraw(x_a=[[1.0, 0.2]], x_b=[[0.0, 1.0]], alpha=0.5)
        value, sample = elle_term(_bound(HingeSurface()), None, None, 0.5, draw=draw)
        np.testing.assert_allclose(sample.residual, [0.25])
        assert value.item() == pytest.approx(0.0625)


class TestFivePoint:
    def test_weights(self):
        assert sum(FIVE_POINT_WEIGHTS) == pytest.approx(0.0)
        assert sum(w * k for w, k in zip(FIVE_POINT_WEIGHTS, range(-2, 3))) == pytest.approx(0.0)

    def test_quadratic_is_curvature_over_sixteen(self):
        residual = five_point_residual(_bound(SQUARED), np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), None)
        assert residual.item() == pytest.approx(4.0 / 16.0, rel=1e-12)
        draw = LinearityDraw(x_a=[[1.0, 0.0]], x_b=[[0.0, 1.0]], alpha=0.5)
        assert elle_5pt_term(_bound(SQUARED), None, None, 0.5, draw=draw).item() == pytest.approx(1.0 / 16.0)

    def test_random_quadratic(self, rng):
        surface = QuadraticSurface.random(4, rng)
        x_a = rng.uniform(0, 1, size=(3, 4))
        x_b = rng.uniform(0, 1, size=(3, 4))
        residual = five_point_residual(_bound(surface), x_a, x_b, None)
        expected = [surface.directional_second(a - b) / 16.0 for a, b in zip(x_a, x_b)]
        np.testing.assert_allclose(residual.value, expected, rtol=1e-9)

    def test_cubic_along_the_segment(self):
        cubic = RidgePolynomialSurface(u=[1.0, 0.0], coeffs=[0.0, 0.0, 0.0, 1.0])
        x_a = np.array([[0.2, 0.5]])
        x_b = np.array([[0.6, 0.5]])
        # quarter spacing 0.1, midpoint t = 0.4, g''(t) = 6t
        residual = five_point_residual(_bound(cubic), x_a, x_b, None)
        assert residual.item() == pytest.approx(0.1**2 * 6 * 0.4, abs=1e-12)

    def test_exact_through_degree_five(self):
        quintic = RidgePolynomialSurface(u=[1.0, 0.0], coeffs=[0.3, -1.0, 2.0, 0.5, -0.7, 1.0])
        residual = five_point_residual(_bound(quintic), np.array([[0.2, 0.5]]), np.array([[0.6, 0.5]]), None)
        assert residual.item() == pytest.approx(0.1**2 * quintic.second_derivative(0.4), abs=1e-12)

    def test_sixth_order_error_on_sextics(self):
        sextic = RidgePolynomialSurface(u=[1.0, 0.0], coeffs=[0.0] * 6 + [1.0])
        errors = []
        for h in (0.1, 0.05):
            x_a = np.array([[0.4 - 2 * h, 0.5]])
            x_b = np.array([[0.4 + 2 * h, 0.5]])
            residual = five_point_residual(_bound(sextic), x_a, x_b, None).item()
            errors.append(abs(residual - h**2 * sextic.second_derivative(0.4)))
        slope = math.log(errors[0] / errors[1]) / math.log(2.0)
        assert slope == pytest.approx(6.0, abs=0.3)


class TestGradientTerms:
    def test_gradalign_orthogonal_and_opposite(self):
        # L = ‖x − c‖², ∇L(x) = 2(x − c)
        surface = QuadraticSurface(np.eye(2), c=[0.0, 0.5])
        x = np.array([[0.5, 0.5]])
        orthogonal = gradalign_term(_bound(surface), x, None, 0.5, eta=np.array([[-0.5, 0.5]]))
        assert orthogonal.item() == pytest.approx(1.0)
        opposite = gradalign_term(_bound(surface), x, None, 1.0, eta=np.array([[-1.0, 0.0]]), clamp=False)
        assert opposite.item() == pytest.approx(2.0)

    def test_gradalign_zero_gradient_convention(self):
        surface = QuadraticSurface(np.eye(2), c=[0.5, 0.5])
        x = np.array([[0.5, 0.5]])
        value = gradalign_term(_bound(surface), x, None, 0.2, eta=np.array([[0.1, -0.1]]))
        assert value.item() == 0.0

    def test_cosine_misalignment_range(self, rng):
        g = Graph()
        g1 = g.input(rng.normal(size=(50, 3)))
        g2 = g.input(rng.normal(size=(50, 3)))
        values = cosine_misalignment(g1, g2).value
        assert np.all(values >= -1e-12) and np.all(values <= 2 + 1e-12)

    def test_llr_closed_form(self):
        surface = QuadraticSurface.squared_norm(2)
        value = llr_sq_term(_bound(surface), np.zeros((1, 2)), None, 1.0, delta=np.array([[1.0, 1.0]]))
        assert value.item() == pytest.approx(4.0)

    def test_taylor_residual_is_half_curvature_on_quadratics(self, rng):
        surface = QuadraticSurface.random(3, rng)
        x = rng.uniform(0, 1, size=(5, 3))
        delta = rng.uniform(-0.2, 0.2, size=(5, 3))
        residual = taylor_residual(_bound(surface), x, delta, None)
        expected = [0.5 * surface.directional_second(d) for d in delta]
        np.testing.assert_allclose(residual.value, expected, rtol=1e-9, atol=1e-12)

    def test_llr_uses_the_clamped_step(self):
        surface = QuadraticSurface.squared_norm(1)
        x = np.array([[0.9]])
        # only 0.1 of the 0.5 step fits in the box: residual δ² = 0.01
        value = llr_sq_term(_bound(surface), x, None, 0.5, delta=np.array([[0.5]]))
        assert value.item() == pytest.approx(1e-4)

    def test_cure_closed_form(self):
        surface = QuadraticSurface.squared_norm(3)
        x = np.full((2, 3), 0.5)
        value = cure_term(_bound(surface), x, None, 0.1)
        assert value.item() == pytest.approx(2 * 0.1 * math.sqrt(3))

    def test_gradnorm_is_not_zero_on_affine_losses(self):
        affine = AffineSurface(w=[3.0, 4.0])
        value = gradnorm_term(_bound(affine), np.full((2, 2), 0.5), None)
        assert value.item() == pytest.approx(25.0)


NULL_ON_AFFINE = ["elle", "elle_a", "elle_2p", "elle_5pt", "gradalign", "llr_sq", "cure"]


@pytest.mark.parametrize("kind", NULL_ON_AFFINE)
def test_terms_vanish_on_affine_losses(kind, rng):
    affine = AffineSurface(w=rng.normal(size=6), b=0.3)
    x = rng.uniform(0.2, 0.8, size=(1000, 6))
    draw = draw_linearity_sample(x, 0.1, rng)
    result = compute_term(RegularizerSpec(kind=kind, lam=1.0), _bound(affine), x, None, 0.1, draw, x_fgsm=fgsm(affine, x, None, 0.1))
    assert result.value.item() == pytest.approx(0.0, abs=1e-10)
    if result.sample is not None:
        assert np.max(np.abs(result.sample.residual)) <= 1e-10


def test_none_kind_has_no_term(rng):
    x = rng.uniform(size=(2, 3))
    assert compute_term(RegularizerSpec(), _bound(AffineSurface(w=[1.0, 1.0, 1.0])), x, None, 0.1, None) is None


def test_two_point_needs_fgsm_point(rng):
    x = rng.uniform(size=(2, 2))
    draw = draw_linearity_sample(x, 0.1, rng)
    with pytest.raises(ContractError):
        compute_term(RegularizerSpec(kind="elle_2p"), _bound(SQUARED), x, None, 0.1, draw)


@pytest.mark.parametrize("kind", ["elle", "elle_5pt", "gradalign", "llr_sq", "cure", "gradnorm"])
def test_parameter_gradient_passes_finite_difference_check(kind):
    params = model_new(ModelConfig(input_dim=3, hidden=(4,), classes=2, activation="softplus", seed=5))
    rng = np.random.default_rng(17)
    x = rng.uniform(0.2, 0.8, size=(3, 3))
    y = np.array([0, 1, 1])
    draw = draw_linearity_sample(x, 0.3, rng)
    spec = RegularizerSpec(kind=kind, lam=1.0)

    def build(graph, leaf):
        bound = params.bind(graph)
        bound.parameters["layer0.weight"] = leaf
        return compute_term(spec, bound, x, y, 0.3, draw).value

    report = finite_diff_check(build, params.tensors["layer0.weight"])
    assert report.passed(1e-4), (kind, report.max_rel_error)


class TestAdaptiveLambda:
    def test_spike_and_decay(self):
        state = AdaptiveLambdaState(lambda_max=5000.0, gamma=0.99)
        assert adaptive_lambda_update(state, 1.0) == 5000.0
        for _ in range(3):
            adaptive_lambda_update(state, 1.0)
        assert state.lam == pytest.approx(5000.0 * 0.99**3)
        # history {1, 1, 1, 1}: μ = 1, σ = 0 and 1 is not strictly above
        assert adaptive_lambda_update(state, 1.0) == pytest.approx(5000.0 * 0.99**4)
        assert state.last_threshold == pytest.approx(1.0)
        assert adaptive_lambda_update(state, 1.01) == 5000.0

    def test_empty_history_triggers_on_positive_value(self):
        state = AdaptiveLambdaState(lambda_max=10.0)
        assert adaptive_lambda_update(state, 1e-9) == 10.0
        zero = AdaptiveLambdaState(lambda_max=10.0)
        assert adaptive_lambda_update(zero, 0.0) == 0.0

    def test_matches_list_based_rule(self):
        rng = np.random.default_rng(3)
        values = np.abs(rng.standard_cauchy(size=10_000)) * 1e-3
        state = AdaptiveLambdaState(lambda_max=100.0, gamma=0.9)
        lam = 0.0
        for i, v in enumerate(values):
            history = values[:i]
            mu = float(np.mean(history)) if i else 0.0
            sigma = float(np.std(history)) if i else 0.0
            assert state.mean == pytest.approx(mu, rel=1e-10, abs=1e-12)
            assert state.std == pytest.approx(sigma, rel=1e-10, abs=1e-12)
            lam = 100.0 if v > mu + 2 * sigma else 0.9 * lam
            assert adaptive_lambda_update(state, v) == pytest.approx(lam, rel=1e-12, abs=1e-300)

    def test_streaming_statistics(self):
        rng = np.random.default_rng(4)
        values = rng.exponential(size=10_000)
        state = AdaptiveLambdaState(lambda_max=1.0)
        for v in values:
            state.record(float(v))
        assert state.mean == pytest.approx(values.mean(), abs=1e-10)
        assert state.std == pytest.approx(values.std(), abs=1e-10)

    @pytest.mark.parametrize("kwargs", [dict(lambda_max=-1.0), dict(lambda_max=1.0, gamma=0.0), dict(lambda_max=1.0, gamma=1.5)])
    def test_invalid_state(self, kwargs):
        with pytest.raises(ContractError):
            AdaptiveLambdaState(**kwargs)


@pytest.mark.parametrize(
    "kwargs",
    [dict(kind="gat"), dict(lam=-1.0), dict(gamma=0.0), dict(alpha_mode="batch")],
)
def test_regularizer_spec_validation(kwargs):
    with pytest.raises(ContractError):
        RegularizerSpec(**kwargs)
