import math

import numpy as np
import pytest

from flowcast import autodiff as ad
from flowcast.augment import CropPair
from flowcast.autodiff import Tensor
from flowcast.contrastive import (PretrainBatch, PretrainConfig,
                                  encode_batch_views, freq_contrastive_loss,
                                  pretrain, time_contrastive_loss, total_loss)
from flowcast.data import TimeSeries
from flowcast.encoder import Encoder, EncoderConfig
from flowcast.params import ParameterSet
from flowcast.rng import RandomStream

TINY_ENC = EncoderConfig(in_channels=1, latent_dim=6, model_dim=8, heads=2,
                         trend_convs=2, time_dim=4, freq_dim=4, fft_window=8,
                         period_hidden=6)


def _batch_from(time_a, time_b, freq_a=None, freq_b=None):
    time_a = Tensor(np.asarray(time_a, dtype=np.float64))
    time_b = Tensor(np.asarray(time_b, dtype=np.float64))
    freq_a = time_a if freq_a is None else Tensor(np.asarray(freq_a, np.float64))
    freq_b = time_b if freq_b is None else Tensor(np.asarray(freq_b, np.float64))
    crop = CropPair(1, 2, 3, 4)  # placeholder provenance; losses never read it
    return PretrainBatch((crop,) * time_a.data.shape[0], time_a, time_b,
                         freq_a, freq_b)


def _loop_time_loss(ra, rb):
    """Scalar re-derivation of the time-domain loss."""
    b, m, _ = ra.shape
    terms = []
    for i in range(b):
        for t in range(m):
            pos = math.exp(ra[i, t] @ rb[i, t])
            denom = 0.0
            for tp in range(m):
                denom += math.exp(ra[i, t] @ rb[i, tp])
                if tp != t:
                    denom += math.exp(ra[i, t] @ ra[i, tp])
            terms.append(-math.log(pos / denom))
    return sum(terms) / len(terms)


def _loop_freq_loss(ra, rb):
    b, m, _ = ra.shape
    terms = []
    for i in range(b):
        for t in range(m):
            pos = math.exp(ra[i, t] @ rb[i, t])
            denom = 0.0
            for j in range(b):
                denom += math.exp(ra[i, t] @ rb[j, t])
                if j != i:
                    denom += math.exp(ra[i, t] @ ra[j, t])
            terms.append(-math.log(pos / denom))
    return sum(terms) / len(terms)


def test_single_overlap_position_gives_zero_time_loss():
    stream = RandomStream(1)
    batch = _batch_from(stream.normal((3, 1, 4)), stream.normal((3, 1, 4)))
    assert abs(time_contrastive_loss(batch).item()) < 1e-10


def test_single_window_gives_zero_freq_loss():
    stream = RandomStream(2)
    batch = _batch_from(stream.normal((1, 5, 4)), stream.normal((1, 5, 4)))
    assert abs(freq_contrastive_loss(batch).item()) < 1e-10


@pytest.mark.parametrize("m", [2, 3, 7])
def test_all_equal_time_loss_closed_form(m):
    u = np.tile(RandomStream(3).normal(4) * 0.3, (2, m, 1))
    batch = _batch_from(u, u.copy())
    assert abs(time_contrastive_loss(batch).item() - math.log(2 * m - 1)) < 1e-10


@pytest.mark.parametrize("b", [2, 3, 6])
def test_all_equal_freq_loss_closed_form(b):
    u = np.tile(RandomStream(4).normal(4) * 0.3, (b, 5, 1))
    batch = _batch_from(u, u.copy())
    assert abs(freq_contrastive_loss(batch).item() - math.log(2 * b - 1)) < 1e-10


def test_time_loss_matches_loop_oracle():
    stream = RandomStream(5)
    ra, rb = stream.normal((4, 3, 4)) * 0.7, stream.normal((4, 3, 4)) * 0.7
    batch = _batch_from(ra, rb)
    assert abs(time_contrastive_loss(batch).item() - _loop_time_loss(ra, rb)) < 1e-10


def test_freq_loss_matches_loop_oracle():
    stream = RandomStream(6)
    ra, rb = stream.normal((3, 4, 4)) * 0.7, stream.normal((3, 4, 4)) * 0.7
    batch = _batch_from(ra, rb)
    assert abs(freq_contrastive_loss(batch).item() - _loop_freq_loss(ra, rb)) < 1e-10


def test_total_is_sum_of_components():
    stream = RandomStream(7)
    batch = _batch_from(stream.normal((3, 4, 4)), stream.normal((3, 4, 4)),
                        stream.normal((3, 4, 4)), stream.normal((3, 4, 4)))
    total, l_time, l_freq = total_loss(batch)
    assert abs(total.item() - (l_time.item() + l_freq.item())) < 1e-12


def test_loss_invariant_to_window_order():
    stream = RandomStream(8)
    ra, rb = stream.normal((5, 3, 4)), stream.normal((5, 3, 4))
    perm = RandomStream(9).permutation(5)
    total_1, _, _ = total_loss(_batch_from(ra, rb))
    total_2, _, _ = total_loss(_batch_from(ra[perm], rb[perm]))
    assert total_1.item() == total_2.item()


def _toy_series(n=240, seed=0):
    t = np.arange(n)
    noise = RandomStream(seed).normal((n,)) * 0.1
    vals = np.sin(2 * np.pi * t / 24) + 0.5 * np.sin(2 * np.pi * t / 96) + noise
    return [TimeSeries("toy", t * 300, vals[:, None])]


def _grads_for(loss_fn, windows, crop, seed):
    params = ParameterSet()
    encoder = Encoder.create(TINY_ENC, params, RandomStream(100))

    def build():
        batch = encode_batch_views(encoder, windows, crop, RandomStream(seed), 0.5)
        return loss_fn(batch)

    _, grads = ad.evaluate_with_gradients(build, params)
    return grads


def test_gradient_of_total_is_sum_of_component_gradients():
    windows = _toy_series()[0].values[None, :40, :].repeat(3, axis=0)
    windows = windows + RandomStream(11).normal(windows.shape) * 0.05
    crop = CropPair(3, 10, 30, 38)
    g_total = _grads_for(lambda b: total_loss(b)[0], windows, crop, 55)
    g_time = _grads_for(time_contrastive_loss, windows, crop, 55)
    g_freq = _grads_for(freq_contrastive_loss, windows, crop, 55)
    for path in g_total:
        np.testing.assert_allclose(g_total[path], g_time[path] + g_freq[path],
                                   rtol=0, atol=1e-10)


def test_gradient_reaches_every_encoder_parameter():
    windows = _toy_series()[0].values[None, :40, :].repeat(4, axis=0)
    windows = windows + RandomStream(12).normal(windows.shape) * 0.05
    crop = CropPair(2, 8, 32, 39)
    grads = _grads_for(lambda b: total_loss(b)[0], windows, crop, 77)
    for path, g in grads.items():
        assert np.any(g != 0.0), f"no gradient reached {path}"


def test_zero_epochs_leaves_parameters_at_initialization():
    series = _toy_series()
    config = PretrainConfig(window_length=32, batch_size=2, epochs=0)
    params, _, history = pretrain(series, TINY_ENC, config, RandomStream(21))
    assert history == []
    reference = ParameterSet()
    Encoder.create(TINY_ENC, reference, RandomStream(21).split(0))
    for path, tensor in params.items():
        np.testing.assert_array_equal(tensor.data, reference[path].data)


def test_equal_seeds_give_identical_loss_histories():
    series = _toy_series()
    config = PretrainConfig(window_length=32, batch_size=3, epochs=2,
                            steps_per_epoch=3)
    _, _, h1 = pretrain(series, TINY_ENC, config, RandomStream(33))
    _, _, h2 = pretrain(series, TINY_ENC, config, RandomStream(33))
    assert h1 == h2


def test_frozen_batch_descent_strictly_decreases():
    """Full-batch gradient descent on one fixed batch: the first ten steps
    must strictly decrease the loss."""
    series = _toy_series()
    config = PretrainConfig(window_length=32, batch_size=4, lr=1e-3, epochs=1,
                            steps_per_epoch=50, freeze_batch=True)
    _, _, history = pretrain(series, TINY_ENC, config, RandomStream(101))
    losses = [row.loss_total for row in history]
    assert len(losses) == 50
    for a, b in zip(losses[:10], losses[1:11]):
        assert b < a, (a, b)
    assert losses[-1] < losses[0]
