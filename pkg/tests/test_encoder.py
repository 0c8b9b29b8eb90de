import numpy as np
import pytest

from flowcast import autodiff as ad
from flowcast.autodiff import Tensor
from flowcast.encoder import Encoder, EncoderConfig
from flowcast.errors import ContractViolation
from flowcast.params import ParameterSet
from flowcast.rng import RandomStream

from oracles import assert_grads_close, finite_difference_grads

SMALL = EncoderConfig(in_channels=2, latent_dim=8, model_dim=8, heads=2,
                      trend_convs=3, time_dim=4, freq_dim=4, fft_window=8,
                      period_hidden=6)


@pytest.fixture()
def encoder():
    params = ParameterSet()
    return Encoder.create(SMALL, params, RandomStream(1234))


def test_projection_is_pointwise(encoder):
    stream = RandomStream(1)
    w1 = stream.normal((6, 2))
    w2 = w1.copy()
    w2[3] = stream.normal(2)  # differ at one timestamp only
    p1 = encoder.project_input(Tensor(w1)).data
    p2 = encoder.project_input(Tensor(w2)).data
    same = [0, 1, 2, 4, 5]
    np.testing.assert_array_equal(p1[same], p2[same])
    assert not np.array_equal(p1[3], p2[3])


def test_projection_zero_weights_zero_output():
    params = ParameterSet()
    enc = Encoder.create(SMALL, params, RandomStream(0))
    for name in ("proj.l1.w", "proj.l1.b", "proj.l2.w", "proj.l2.b"):
        params[f"encoder.{name}"].data[:] = 0.0
    out = enc.project_input(Tensor(RandomStream(2).normal((5, 2))))
    np.testing.assert_array_equal(out.data, np.zeros((5, 8)))


def test_projection_permutation_equivariance(encoder):
    stream = RandomStream(3)
    x = stream.normal((7, 2))
    perm = stream.permutation(7)
    direct = encoder.project_input(Tensor(x[perm])).data
    permuted = encoder.project_input(Tensor(x)).data[perm]
    np.testing.assert_array_equal(direct, permuted)


def test_projection_channel_mismatch(encoder):
    with pytest.raises(ContractViolation, match="channels"):
        encoder.project_input(Tensor(np.zeros((5, 3))))


def test_attention_single_timestep(encoder):
    z = Tensor(RandomStream(4).normal((1, 8)))
    out, weights = encoder.conv_trans_encode(z, return_attn=True)
    np.testing.assert_array_equal(weights, np.ones((2, 1, 1)))
    assert out.data.shape == (1, 8)


def test_attention_rows_sum_to_one(encoder):
    z = Tensor(RandomStream(5).normal((20, 8)))
    _, weights = encoder.conv_trans_encode(z, return_attn=True)
    np.testing.assert_allclose(weights.sum(axis=-1), np.ones((2, 20)), atol=1e-12)


def test_attention_mask_weights_exactly_zero(encoder):
    z = Tensor(RandomStream(6).normal((12, 8)))
    _, weights = encoder.conv_trans_encode(z, return_attn=True)
    future = np.triu(np.ones((12, 12), dtype=bool), k=1)
    assert np.all(np.abs(weights[:, future]) <= 1e-15)


def test_backbone_causality_bitwise(encoder):
    stream = RandomStream(7)
    z1 = stream.normal((15, 8))
    z2 = z1.copy()
    z2[9:] = stream.normal((6, 8))
    y1 = encoder.conv_trans_encode(Tensor(z1)).data
    y2 = encoder.conv_trans_encode(Tensor(z2)).data
    np.testing.assert_array_equal(y1[:9], y2[:9])


def test_trend_single_branch_degenerate():
    config = EncoderConfig(in_channels=2, latent_dim=8, model_dim=8, heads=2,
                           trend_convs=1, time_dim=4, freq_dim=4, fft_window=8)
    params = ParameterSet()
    enc = Encoder.create(config, params, RandomStream(8))
    rt = Tensor(RandomStream(9).normal((6, 8)))
    direct = ad.causal_conv1d(rt, params["encoder.trend.c0.w"],
                              params["encoder.trend.c0.b"]).data
    np.testing.assert_allclose(enc.trend_extract(rt).data, direct, atol=1e-15)


def test_trend_pointwise_branch_scaling(encoder):
    # zero every branch except the kernel-1 branch; zero all biases
    params = encoder.params
    proj = None
    for i in range(SMALL.trend_convs):
        params[f"encoder.trend.c{i}.b"].data[:] = 0.0
        if i == 0:
            proj = params["encoder.trend.c0.w"].data[0].copy()
        else:
            params[f"encoder.trend.c{i}.w"].data[:] = 0.0
    rt = RandomStream(10).normal((6, 8))
    expected = (rt @ proj) / SMALL.trend_convs
    np.testing.assert_allclose(encoder.trend_extract(Tensor(rt)).data, expected,
                               atol=1e-12)


def test_trend_causality(encoder):
    stream = RandomStream(11)
    r1 = stream.normal((10, 8))
    r2 = r1.copy()
    r2[6:] += 1.0
    t1 = encoder.trend_extract(Tensor(r1)).data
    t2 = encoder.trend_extract(Tensor(r2)).data
    np.testing.assert_array_equal(t1[:6], t2[:6])


def test_period_constant_input_dc_only(encoder):
    rt = Tensor(np.tile(RandomStream(12).normal((1, 8)), (9, 1)))
    spectrum = encoder.period_spectrum(rt).data  # (T, C, bins)
    energy = spectrum**2
    dc_share = energy[..., 0].sum() / energy.sum()
    assert dc_share > 1.0 - 1e-9
    r_freq = encoder.period_extract(rt).data
    for t in range(1, 9):
        np.testing.assert_array_equal(r_freq[t], r_freq[0])


def test_period_single_tone_peaks_at_expected_bin(encoder):
    t = np.arange(16)
    rt_np = np.zeros((16, 8))
    rt_np[:, 0] = np.sin(2 * np.pi * t / 4)  # period 4 => bin fft_window/4 = 2
    spectrum = encoder.period_spectrum(Tensor(rt_np)).data
    full = spectrum[-1, 0]  # full window at the last timestamp
    assert np.argmax(full) == 2


def test_period_output_shape(encoder):
    for t_len in (2, 5, 9):
        rt = Tensor(RandomStream(13).normal((t_len, 8)))
        assert encoder.period_extract(rt).data.shape == (t_len, 4)


def test_encode_concatenates_both_parts(encoder):
    w = Tensor(RandomStream(14).normal((10, 2)))
    r = encoder.encode(w)
    assert r.data.shape == (10, SMALL.repr_dim)
    r_time, r_freq = encoder.encode_parts(w)
    np.testing.assert_array_equal(r.data[:, :4], r_time.data)
    np.testing.assert_array_equal(r.data[:, 4:], r_freq.data)


def test_encode_deterministic_without_masking(encoder):
    w = RandomStream(15).normal((8, 2))
    np.testing.assert_array_equal(encoder.encode(Tensor(w)).data,
                                  encoder.encode(Tensor(w)).data)


def test_encode_rejects_short_windows(encoder):
    with pytest.raises(ContractViolation, match=">= 4"):
        encoder.encode(Tensor(np.zeros((3, 2))))


def test_end_to_end_causality_bitwise(encoder):
    stream = RandomStream(16)
    w1 = stream.normal((14, 2))
    w2 = w1.copy()
    w2[10:] = stream.normal((4, 2))
    r1 = encoder.encode(Tensor(w1)).data
    r2 = encoder.encode(Tensor(w2)).data
    np.testing.assert_array_equal(r1[:10], r2[:10])
    assert not np.array_equal(r1[10:], r2[10:])


def test_prefix_extension_preserves_suffix_causality(encoder):
    """Representations depend only on their own causal prefix: encoding a
    prefix-extended window reproduces nothing new for shared suffix positions
    whose prefix differs, but re-encoding the same prefix does."""
    stream = RandomStream(17)
    w = stream.normal((12, 2))
    r_full = encoder.encode(Tensor(w)).data
    r_head = encoder.encode(Tensor(w[:8])).data
    np.testing.assert_array_equal(r_full[:8], r_head)


def test_encoder_gradients_match_finite_differences():
    params = ParameterSet()
    enc = Encoder.create(SMALL, params, RandomStream(18))
    x = Tensor(RandomStream(19).normal((6, 2)))

    def build():
        return (enc.encode(x) ** 2).mean()

    _, grads = ad.evaluate_with_gradients(build, params)
    fd = finite_difference_grads(build, params)
    assert_grads_close(grads, fd)


def test_masking_applied_between_projection_and_backbone(encoder):
    w = Tensor(RandomStream(20).normal((10, 2)))
    r_masked = encoder.encode(w, mask_stream=RandomStream(21), mask_p=0.0)
    # with everything masked the backbone sees all-zero latents
    z = ad.Tensor(np.zeros((10, SMALL.latent_dim)))
    rt = encoder.conv_trans_encode(z)
    expected = ad.concat([encoder.trend_extract(rt), encoder.period_extract(rt)],
                         axis=-1)
    np.testing.assert_array_equal(r_masked.data, expected.data)
