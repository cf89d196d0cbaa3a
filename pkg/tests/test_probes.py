import numpy as np
import pytest

from ellelab.autodiff import exp
from ellelab.errors import ContractError, NonFiniteError
from ellelab.models import AffineSurface, ModelConfig, ModelParams, QuadraticSurface, model_new
from ellelab.probes import (
    ProbeReport,
    default_fd_step,
    elin_residual_norms,
    estimate_elin,
    fd_gradalign_estimate,
    grad_misalignment,
    hessian_vector_product,
    scalar_loss,
    second_dir_derivative_ad,
    second_dir_derivative_fd,
)
from ellelab.regularizers import LinearityDraw, draw_linearity_sample


class _BoundExp:
    parameters: dict = {}

    def __init__(self, graph):
        self.graph = graph

    def per_example_loss(self, x, y):
        return exp(x).sum(axis=1)


class _Exp:
    """L(x) = Σ exp(x_i), for the one-dimensional curvature check."""

    def bind(self, graph):
        return _BoundExp(graph)


def _softplus_mlp(seed=6):
    return model_new(ModelConfig(input_dim=4, hidden=(6,), classes=3, activation="softplus", seed=seed))


class TestEstimateElin:
    def test_affine_model_is_zero(self, rng):
        affine = AffineSurface(w=rng.normal(size=5), b=-0.2)
        x = rng.uniform(0, 1, size=(6, 5))
        report = estimate_elin(affine, x, None, 0.2, n_samples=3, rng=rng)
        assert report.metric == "elin_loss"
        assert report.value == pytest.approx(0.0, abs=1e-10)
        assert report.samples == 3

    def test_quadratic_matches_brute_force(self):
        surface = QuadraticSurface.squared_norm(2)
        x = np.tile([[0.3, 0.6]], (1000, 1))
        report = estimate_elin(surface, x, None, 1.0, n_samples=20, rng=np.random.default_rng(0), clamp=False)
        rng = np.random.default_rng(99)
        n = 400_000
        x_a = x[:1] + rng.uniform(-1, 1, size=(n, 2))
        x_b = x[:1] + rng.uniform(-1, 1, size=(n, 2))
        alpha = rng.uniform(0, 1, size=n)
        # on ‖x‖² the residual is −α(1−α)‖x_a − x_b‖²
        brute = np.mean(alpha * (1 - alpha) * np.sum((x_a - x_b) ** 2, axis=1))
        assert abs(report.value - brute) <= 3 * report.std_error + 1e-3

    def test_four_times_the_samples_halves_the_error(self):
        surface = QuadraticSurface.squared_norm(2)
        x = np.full((100, 2), 0.5)
        small = estimate_elin(surface, x, None, 0.5, n_samples=20, rng=np.random.default_rng(1))
        large = estimate_elin(surface, x, None, 0.5, n_samples=80, rng=np.random.default_rng(2))
        assert large.std_error == pytest.approx(small.std_error / 2, rel=0.2)

    def test_logit_target_on_mlp(self, small_mlp, small_batch, rng):
        x, y = small_batch
        report = estimate_elin(small_mlp, x, y, 0.1, n_samples=2, rng=rng, seed=4, on="logits")
        assert report.metric == "elin_logits"
        assert report.value >= 0.0
        assert report.as_row()["seed"] == 4

    def test_residual_norms_on_quadratic(self):
        surface = QuadraticSurface.squared_norm(2)
        draw = LinearityDraw(x_a=[[1.0, 0.0]], x_b=[[0.0, 1.0]], alpha=0.5)
        np.testing.assert_allclose(elin_residual_norms(surface, draw, None), [0.5])

    @pytest.mark.parametrize("on", ["loss", "logits"])
    def test_swapping_endpoints_leaves_residuals_unchanged(self, rng, on):
        params = _softplus_mlp()
        x = rng.uniform(0.2, 0.8, size=(64, 4))
        y = rng.integers(0, 3, size=64)
        draw = draw_linearity_sample(x, 0.1, rng)
        swapped = LinearityDraw(x_a=draw.x_b, x_b=draw.x_a, alpha=1.0 - draw.alpha)
        forward = elin_residual_norms(params, draw, y, on=on)
        backward = elin_residual_norms(params, swapped, y, on=on)
        np.testing.assert_allclose(forward, backward, rtol=0, atol=1e-12)

    def test_logits_need_a_classifier(self, rng):
        surface = QuadraticSurface.squared_norm(2)
        draw = LinearityDraw(x_a=[[1.0, 0.0]], x_b=[[0.0, 1.0]], alpha=0.5)
        with pytest.raises(ContractError):
            elin_residual_norms(surface, draw, None, on="logits")
        with pytest.raises(ContractError):
            estimate_elin(surface, draw.x_a, None, 0.1, n_samples=0, rng=rng)


class TestCurvature:
    def test_fd_on_squared_norm(self, rng):
        surface = QuadraticSurface.squared_norm(3)
        v = rng.normal(size=(1, 3))
        value = second_dir_derivative_fd(scalar_loss(surface, None), rng.uniform(size=(1, 3)), v)
        assert value == pytest.approx(2 * np.sum(v**2), rel=1e-6)

    def test_fd_on_exponential(self):
        value = second_dir_derivative_fd(scalar_loss(_Exp(), None), np.zeros((1, 1)), np.ones((1, 1)), h=1e-4)
        assert value == pytest.approx(1.0, abs=1e-7)

    def test_ad_matches_fd_on_smooth_network(self, rng):
        params = _softplus_mlp()
        x = rng.uniform(0.2, 0.8, size=(2, 4))
        y = np.array([0, 2])
        v = rng.normal(size=(2, 4))
        ad = second_dir_derivative_ad(params, x, y, v)
        fd = second_dir_derivative_fd(scalar_loss(params, y), x, v)
        assert ad == pytest.approx(fd, rel=1e-4)

    def test_hvp_of_quadratic_is_hessian_times_v(self, rng):
        surface = QuadraticSurface.random(3, rng)
        x = rng.uniform(size=(1, 3))
        v = rng.normal(size=(1, 3))
        np.testing.assert_allclose(hessian_vector_product(surface, x, None, v), v @ surface.hessian.T, rtol=1e-10)

    def test_hessian_is_symmetric_on_smooth_network(self, rng):
        params = _softplus_mlp()
        x = rng.uniform(0.2, 0.8, size=(3, 4))
        y = np.array([0, 1, 2])
        for _ in range(10):
            v, w = rng.normal(size=(2, 3, 4))
            vhw = np.sum(v * hessian_vector_product(params, x, y, w))
            whv = np.sum(w * hessian_vector_product(params, x, y, v))
            assert vhw == pytest.approx(whv, rel=1e-8, abs=1e-12)

    def test_default_step(self):
        assert default_fd_step(np.array([0.5, -0.2])) == pytest.approx(1e-4)
        assert default_fd_step(np.array([3.0, -8.0])) == pytest.approx(8e-4)
        with pytest.raises(ContractError):
            second_dir_derivative_fd(lambda x: 0.0, np.zeros(1), np.ones(1), h=0.0)


class TestMisalignment:
    def test_affine_is_zero(self, rng):
        affine = AffineSurface(w=[1.0, -1.0, 2.0])
        report = grad_misalignment(affine, rng.uniform(size=(4, 3)), None, 0.1, rng=rng)
        assert report.value == pytest.approx(0.0, abs=1e-12)

    def test_constant_model_is_zero(self, small_batch, rng):
        config = ModelConfig(input_dim=6, hidden=(5,), classes=3)
        zeros = ModelParams(config, {k: np.zeros_like(v) for k, v in model_new(config).tensors.items()})
        x, y = small_batch
        assert grad_misalignment(zeros, x, y, 0.1, rng=rng).value == 0.0

    def test_orthogonal_gradients(self):
        surface = QuadraticSurface(np.eye(2), c=[0.0, 0.5])
        report = grad_misalignment(surface, np.array([[0.5, 0.5]]), None, 0.5, eta=np.array([[-0.5, 0.5]]))
        assert report.value == pytest.approx(1.0)

    def test_needs_rng_or_eta(self):
        with pytest.raises(ContractError):
            grad_misalignment(AffineSurface(w=[1.0]), np.zeros((1, 1)), None, 0.1)


class TestFdGradAlign:
    def test_affine_with_equal_directions_is_zero(self, rng):
        affine = AffineSurface(w=[1.0, 2.0, -1.0])
        x = rng.uniform(0.2, 0.8, size=(3, 3))
        u = rng.normal(size=(3, 3))
        report = fd_gradalign_estimate(affine, x, None, 0.1, 1e-3, rng=rng, u=u, v=u.copy())
        assert report.value == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_directions_give_one(self, small_mlp, small_batch, rng):
        x, y = small_batch
        u = np.zeros_like(x)
        v = np.zeros_like(x)
        u[:, 0] = 1.0
        v[:, 1] = 1.0
        report = fd_gradalign_estimate(small_mlp, x, y, 0.1, 1e-3, rng=rng, u=u, v=v)
        assert report.value == pytest.approx(1.0)

    def test_rejects_bad_radius(self, rng):
        with pytest.raises(ContractError):
            fd_gradalign_estimate(AffineSurface(w=[1.0]), np.zeros((1, 1)), None, 0.1, 0.0, rng=rng)


def test_report_validation():
    with pytest.raises(ContractError):
        ProbeReport("elin_loss", 0.1, 0, 0.1)
    with pytest.raises(NonFiniteError):
        ProbeReport("elin_loss", float("nan"), 1, 0.1)


def test_estimates_leave_parameters_untouched(rng):
    params = _softplus_mlp()
    before = params.copy()
    x = rng.uniform(0.2, 0.8, size=(8, 4))
    y = rng.integers(0, 3, size=8)
    estimate_elin(params, x, y, 0.1, n_samples=2, rng=rng, on="loss")
    estimate_elin(params, x, y, 0.1, n_samples=2, rng=rng, on="logits")
    grad_misalignment(params, x, y, 0.1, rng=rng)
    fd_gradalign_estimate(params, x, y, 0.1, 1e-3, rng=rng)
    hessian_vector_product(params, x, y, rng.normal(size=x.shape))
    assert list(params.tensors) == list(before.tensors)
    for name, value in before.tensors.items():
        np.testing.assert_array_equal(params.tensors[name], value)
