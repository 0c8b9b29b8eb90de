import numpy as np
import pytest

from flowcast import autodiff as ad
from flowcast.autodiff import Tensor
from flowcast.errors import ContractViolation
from flowcast.flow import ConditionalFlow, FlowConfig, GaussianHead
from flowcast.params import Adam, ParameterSet
from flowcast.rng import RandomStream

LOG_2PI = np.log(2 * np.pi)


def _fresh_flow(dim, cond_dim, layers=4, hidden=16, seed=0, clamp=3.0):
    params = ParameterSet()
    config = FlowConfig(dim=dim, cond_dim=cond_dim, layers=layers,
                        hidden=hidden, scale_clamp=clamp)
    flow = ConditionalFlow.create(config, params, RandomStream(seed))
    return flow, params


def _zero_flow(dim, layers=1):
    flow, params = _fresh_flow(dim, 0, layers=layers)
    for path, t in params.items():
        t.data[:] = 0.0
    return flow, params


def test_identity_coupling():
    flow, _ = _zero_flow(4)
    z = Tensor(RandomStream(1).normal((5, 4)))
    y, logdet = flow.coupling_forward(z, None, 0)
    np.testing.assert_array_equal(y.data, z.data)
    np.testing.assert_array_equal(logdet.data, np.zeros(5))


def test_constant_scale_closed_form():
    c = 0.7
    flow, params = _zero_flow(2)
    params["flow.l0.s.b2"].data[:] = np.arctanh(c / 3.0)
    z = Tensor(RandomStream(2).normal((8, 2)))
    y, logdet = flow.coupling_forward(z, None, 0)
    np.testing.assert_allclose(y.data[:, 0], z.data[:, 0], atol=0)
    np.testing.assert_allclose(y.data[:, 1], z.data[:, 1] * np.exp(c), atol=1e-12)
    np.testing.assert_allclose(logdet.data, np.full(8, c), atol=1e-12)


def _numerical_logdet(flow, z_row, cond_row, step=1e-6):
    d = z_row.size

    def fwd(z):
        cond = None if cond_row is None else Tensor(cond_row[None])
        with ad.no_grad():
            y, _ = flow.forward(Tensor(z[None]), cond)
        return y.data[0]

    jac = np.empty((d, d))
    for j in range(d):
        up, down = z_row.copy(), z_row.copy()
        up[j] += step
        down[j] -= step
        jac[:, j] = (fwd(up) - fwd(down)) / (2 * step)
    sign, logabs = np.linalg.slogdet(jac)
    assert sign != 0  # coordinate reversals contribute determinant +-1
    return logabs


@pytest.mark.parametrize("dim,layers", [(5, 1), (2, 4), (8, 8), (1, 3), (3, 5)])
def test_logdet_matches_numerical_jacobian(dim, layers):
    flow, _ = _fresh_flow(dim, cond_dim=3, layers=layers, seed=dim * 10 + layers)
    stream = RandomStream(99)
    for _ in range(3):
        z = stream.normal((dim,))
        cond = stream.normal((3,))
        with ad.no_grad():
            _, logdet = flow.forward(Tensor(z[None]), Tensor(cond[None]))
        numeric = _numerical_logdet(flow, z, cond)
        assert abs(logdet.data[0] - numeric) / max(1.0, abs(numeric)) < 1e-5


@pytest.mark.parametrize("dim,layers", [(1, 1), (2, 3), (5, 4), (8, 8)])
def test_round_trip_fuzz(dim, layers):
    flow, _ = _fresh_flow(dim, cond_dim=2, layers=layers, seed=7)
    stream = RandomStream(13)
    z = stream.normal((1000, dim))
    cond = stream.normal((1000, 2))
    with ad.no_grad():
        y, ld_f = flow.forward(Tensor(z), Tensor(cond))
        back, ld_i = flow.inverse(y, Tensor(cond))
    assert np.max(np.abs(back.data - z)) < 1e-8
    np.testing.assert_allclose(ld_f.data + ld_i.data, np.zeros(1000), atol=1e-10)


def test_stack_logdet_is_sum_of_layer_logdets():
    flow, _ = _fresh_flow(4, cond_dim=0, layers=3, seed=3)
    z = Tensor(RandomStream(4).normal((6, 4)))
    with ad.no_grad():
        _, total = flow.forward(z)
        y, running = z, np.zeros(6)
        for layer in range(3):
            if layer:
                y = ad.flip_last(y)
            y, ld = flow.coupling_forward(y, None, layer)
            running = running + ld.data
    np.testing.assert_array_equal(total.data, running)


def test_identity_stack_log_density_is_standard_normal():
    flow, _ = _zero_flow(3, layers=2)
    y = RandomStream(5).normal((10, 3))
    with ad.no_grad():
        logp = flow.log_density(Tensor(y))
    expected = -0.5 * (y**2).sum(axis=1) - 1.5 * LOG_2PI
    np.testing.assert_allclose(logp.data, expected, atol=1e-12)


def test_scaled_coordinate_matches_analytic_density():
    """One layer with s = log 2, t = 0 on D=2: second coordinate is N(0, 4)."""
    flow, params = _zero_flow(2)
    params["flow.l0.s.b2"].data[:] = np.arctanh(np.log(2.0) / 3.0)
    y = RandomStream(6).normal((50, 2)) * 1.5
    with ad.no_grad():
        logp = flow.log_density(Tensor(y))
    expected = (-0.5 * y[:, 0] ** 2 - 0.5 * LOG_2PI) + \
        (-0.5 * y[:, 1] ** 2 / 4.0 - 0.5 * np.log(4.0) - 0.5 * LOG_2PI)
    np.testing.assert_allclose(logp.data, expected, atol=1e-8)


def test_normalization_of_near_identity_flow():
    """Importance-sampled integral of the density over R^2 should be ~1."""
    flow, _ = _fresh_flow(2, cond_dim=0, layers=4, seed=8)
    stream = RandomStream(777)
    sigma = 2.0
    x = stream.normal((100_000, 2)) * sigma
    log_q = -0.5 * (x**2).sum(axis=1) / sigma**2 - np.log(2 * np.pi * sigma**2)
    with ad.no_grad():
        log_p = flow.log_density(Tensor(x)).data
    estimate = np.exp(log_p - log_q).mean()
    assert 0.97 <= estimate <= 1.03


def test_sampling_identity_stack_standard_normal_moments():
    flow, _ = _zero_flow(2, layers=2)
    samples = flow.sample(None, RandomStream(9), n=10_000)
    assert samples.shape == (10_000, 1, 2)
    assert np.max(np.abs(samples.mean(axis=0))) < 0.05


def test_sampling_deterministic_and_shaped():
    flow, _ = _fresh_flow(3, cond_dim=2, seed=10)
    cond = RandomStream(11).normal((4, 2))
    s1 = flow.sample(Tensor(cond), RandomStream(50), n=6)
    s2 = flow.sample(Tensor(cond), RandomStream(50), n=6)
    np.testing.assert_array_equal(s1, s2)
    assert s1.shape == (6, 4, 3)
    one = flow.sample(Tensor(cond), RandomStream(51), n=1)
    assert one.shape == (1, 4, 3)
    with ad.no_grad():
        logp = flow.log_density(Tensor(s1[0]), Tensor(cond))
    assert np.all(np.isfinite(logp.data))


def test_dimension_mismatch_rejected():
    flow, _ = _fresh_flow(3, cond_dim=2)
    with pytest.raises(ContractViolation, match="dimension"):
        flow.forward(Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 2))))
    with pytest.raises(ContractViolation, match="condition"):
        flow.forward(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 5))))


def _fit_flow(flow, params, data, cond=None, steps=300, lr=5e-3, batch=256,
              seed=123):
    optimizer = Adam(params, lr)
    stream = RandomStream(seed)
    n = data.shape[0]
    for _ in range(steps):
        idx = stream.integers(0, n, (batch,))
        y = Tensor(data[idx])
        c = None if cond is None else Tensor(cond[idx])
        params.zero_grad()
        loss = -flow.log_density(y, c).mean()
        loss.backward()
        optimizer.step()
    return flow


def test_conditioning_effectiveness():
    """After fitting y ~ N(direction * h, 0.1), true conditions must beat
    shuffled conditions on average log-density."""
    stream = RandomStream(21)
    n = 2000
    h = np.where(stream.uniform((n, 1)) < 0.5, -2.0, 2.0)
    y = h * np.array([1.0, 0.5]) + 0.1 * stream.normal((n, 2))

    flow, params = _fresh_flow(2, cond_dim=1, layers=3, hidden=24, seed=22)
    _fit_flow(flow, params, y, cond=h, steps=250)

    with ad.no_grad():
        matched = flow.log_density(Tensor(y), Tensor(h)).data.mean()
        shuffled = flow.log_density(
            Tensor(y), Tensor(h[RandomStream(23).permutation(n)])).data.mean()
    assert matched > shuffled + 1.0


def test_gaussian_head_density_and_sampling():
    params = ParameterSet()
    config = FlowConfig(dim=2, cond_dim=3, hidden=8)
    head = GaussianHead.create(config, params, RandomStream(30))
    cond = RandomStream(31).normal((6, 3))
    y = RandomStream(32).normal((6, 2))
    with ad.no_grad():
        logp = head.log_density(Tensor(y), Tensor(cond)).data
        mean, logvar = head._moments(Tensor(cond))
    expected = -0.5 * (logvar.data + (y - mean.data) ** 2 / np.exp(logvar.data)
                       + LOG_2PI).sum(axis=1)
    np.testing.assert_allclose(logp, expected, atol=1e-12)

    samples = head.sample(Tensor(cond), RandomStream(33), n=5)
    assert samples.shape == (5, 6, 2)
