import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnn import layers as L
from bnn.data import gen_two_gaussians
from bnn.errors import ParameterError
from bnn.inference import mc_sample_probs, predict_mc, predict_meanfield
from bnn.masks import SAMPLED_KINDS, MaskKind, MaskSpec
from bnn.network import NetworkParams, TrainConfig, boundary_net, forward, init_params, train
from bnn.tensor import Rng, softmax

from conftest import TINY_B, TINY_P, TINY_W, TINY_X
from oracles import enumerate_bernoulli_dropconnect


def small_net(seed=0):
    layers = [L.Dense(3, 6), L.ReLU(), L.Dense(6, 4, row_gates=False)]
    params = init_params(layers, (3,), Rng(seed))
    x = np.random.default_rng(seed).normal(size=(7, 3))
    return layers, params, x


def tiny():
    return NetworkParams([TINY_W.copy()], [TINY_B.copy()]), [L.Dense(2, 2)]


SPECS = [MaskSpec(k, 0.3,
                  0.2 if k is MaskKind.SPIKE_SLAB_DROPOUT else 0.0) for k in SAMPLED_KINDS]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.label)
def test_single_sample_equals_one_pass(spec):
    layers, params, x = small_net()
    rng = Rng(5)
    batch = predict_mc(params, layers, x, spec, 1, rng)
    expected = softmax(forward(params, layers, x, spec, rng.spawn(0)))
    assert np.array_equal(batch.mean_probs, expected)
    assert np.all(batch.std_probs == 0.0)


def test_map_has_zero_spread():
    layers, params, x = small_net()
    batch = predict_mc(params, layers, x, MaskSpec(), 25, Rng(0))
    assert np.all(batch.std_probs == 0.0)
    assert np.array_equal(batch.mean_probs, softmax(forward(params, layers, x, MaskSpec())))


def test_zero_samples_rejected():
    layers, params, x = small_net()
    with pytest.raises(ParameterError):
        predict_mc(params, layers, x, SPECS[0], 0, Rng(0))


def test_single_weight_dropconnect_two_outcomes():
    # one output would make softmax trivially 1; the second row's weight is zero
    params = NetworkParams([np.array([[1.5], [0.0]])], [np.array([0.0, 0.0])])
    x = np.array([[1.0]])
    spec = MaskSpec(MaskKind.BERNOULLI_DROPCONNECT, 0.5)
    outcomes = [softmax(np.array([[1.5 * m, 0.0]])) for m in (0.0, 2.0)]
    exact = (outcomes[0] + outcomes[1]) / 2
    sigma = np.abs(outcomes[0] - outcomes[1]) / 2
    n = 10**5
    batch = predict_mc(params, [L.Dense(1, 2)], x, spec, n, Rng(8))
    assert np.all(np.abs(batch.mean_probs - exact) <= 4 * sigma / np.sqrt(n))
    assert np.allclose(batch.std_probs, sigma, rtol=1e-2)


@pytest.mark.parametrize("n", [10**2, 10**4])
def test_converges_to_enumeration(n):
    params, layers = tiny()
    exact, sigma = enumerate_bernoulli_dropconnect(TINY_W, TINY_B, TINY_X, TINY_P)
    batch = predict_mc(params, layers, TINY_X, MaskSpec(MaskKind.BERNOULLI_DROPCONNECT, TINY_P), n, Rng(2024))
    assert np.all(np.abs(batch.mean_probs - exact) <= 4 * sigma / np.sqrt(n))


@pytest.mark.slow
def test_converges_to_enumeration_million(tiny_mc_million):
    exact, sigma = enumerate_bernoulli_dropconnect(TINY_W, TINY_B, TINY_X, TINY_P)
    n = tiny_mc_million.n_samples
    assert np.all(np.abs(tiny_mc_million.mean_probs - exact) <= 4 * sigma / np.sqrt(n))
    assert np.allclose(tiny_mc_million.std_probs, sigma, rtol=1e-2)


def test_welford_matches_direct_statistics():
    layers, params, x = small_net(3)
    spec = SPECS[2]
    samples = np.stack(list(mc_sample_probs(params, layers, x, spec, 30, Rng(4))))
    batch = predict_mc(params, layers, x, spec, 30, Rng(4))
    assert np.allclose(batch.mean_probs, samples.mean(axis=0), rtol=0, atol=1e-14)
    assert np.allclose(batch.std_probs, samples.std(axis=0), rtol=0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 12), kind=st.sampled_from(SAMPLED_KINDS))
def test_mean_probs_are_distributions(seed, n, kind):
    layers, params, x = small_net(seed % 7)
    spec = MaskSpec(kind, 0.5, 0.3 if kind is MaskKind.SPIKE_SLAB_DROPOUT else 0.0)
    batch = predict_mc(params, layers, x, spec, n, Rng(seed))
    assert np.allclose(batch.mean_probs.sum(axis=1), 1.0, rtol=0, atol=1e-9)
    assert np.all(batch.mean_probs >= 0) and np.all(batch.mean_probs <= 1)
    assert np.all(batch.std_probs >= 0)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.label)
def test_seed_determinism(spec):
    layers, params, x = small_net()
    a = predict_mc(params, layers, x, spec, 6, Rng(11))
    b = predict_mc(params, layers, x, spec, 6, Rng(11))
    assert np.array_equal(a.mean_probs, b.mean_probs) and np.array_equal(a.std_probs, b.std_probs)
    c = predict_mc(params, layers, x, spec, 6, Rng(12))
    assert not np.array_equal(a.mean_probs, c.mean_probs)


@pytest.mark.parametrize("spec", SPECS + [MaskSpec()], ids=lambda s: s.label)
def test_meanfield_is_deterministic_forward(spec):
    layers, params, x = small_net()
    batch = predict_meanfield(params, layers, x, spec)
    assert np.array_equal(batch.mean_probs, softmax(forward(params, layers, x, spec)))
    assert np.all(batch.std_probs == 0) and batch.n_samples == 1


@pytest.mark.parametrize("kind", SAMPLED_KINDS)
def test_zero_noise_mc_equals_meanfield(kind):
    layers, params, x = small_net()
    spec = MaskSpec(kind, 0.0)
    mc = predict_mc(params, layers, x, spec, 5, Rng(3))
    assert np.array_equal(mc.mean_probs, predict_meanfield(params, layers, x, spec).mean_probs)
    assert np.all(mc.std_probs == 0)


def test_meanfield_recovers_separable_labels():
    d = gen_two_gaussians([-4.0, 0.0], [4.0, 0.0], np.eye(2) * 0.25, np.eye(2) * 0.25, 50, Rng(1))
    layers = boundary_net()
    params, _ = train(init_params(layers, (2,), Rng(0)), layers, d, MaskSpec(),
                      TrainConfig(epochs=50, lr=0.05, batch_size=20))
    probs = predict_meanfield(params, layers, d.inputs, MaskSpec()).mean_probs
    assert np.array_equal(np.argmax(probs, axis=1), d.labels)


def test_csv_layout():
    layers, params, x = small_net()
    batch = predict_mc(params, layers, x, SPECS[0], 3, Rng(0))
    lines = batch.to_csv(labels=np.arange(7) % 4, header_comment="t").splitlines()
    assert lines[0] == "# t"
    assert lines[1].split(",") == ["id", "label", "n_samples", "mean_0", "mean_1", "mean_2", "mean_3",
                                   "std_0", "std_1", "std_2", "std_3"]
    assert len(lines) == 2 + 7
    row = lines[3].split(",")
    assert row[:3] == ["1", "1", "3"] and float(row[3]) == batch.mean_probs[1, 0]
    assert batch.to_csv().splitlines()[1].split(",")[1] == ""
