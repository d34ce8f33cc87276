import math

import numpy as np
import pytest

from bnn.errors import ParameterError
from bnn.masks import (
    SAMPLED_KINDS,
    MaskKind,
    MaskSpec,
    mask_moments,
    mean_mask,
    parse_kind,
    sample_mask,
    sigma_dc_squared,
)
from bnn.tensor import Rng

from oracles import mask_entry_moments

ALL_SPECS_P0 = [MaskSpec(k, 0.0) for k in MaskKind]


def test_sigma_dc_squared_examples():
    assert sigma_dc_squared(0.0) == 0.0
    assert sigma_dc_squared(0.5) == 1.0
    assert sigma_dc_squared(0.4) == pytest.approx(2 / 3, rel=1e-15)


@pytest.mark.parametrize("p", [1.0, 1.5, -0.1])
def test_sigma_dc_squared_rejects_bad_p(p):
    with pytest.raises(ParameterError):
        sigma_dc_squared(p)


def test_maskspec_validation():
    with pytest.raises(ParameterError):
        MaskSpec(MaskKind.BERNOULLI_DROPOUT, 1.0)
    with pytest.raises(ParameterError):
        MaskSpec(MaskKind.MAP, 0.3)
    with pytest.raises(ParameterError):
        MaskSpec(MaskKind.GAUSSIAN_DROPCONNECT, 0.3, p_dc=0.2)
    with pytest.raises(ParameterError):
        MaskSpec("NoSuchKind", 0.1)


def test_maskspec_json_round_trip():
    spec = MaskSpec(MaskKind.SPIKE_SLAB_DROPOUT, 0.5, 0.2)
    d = spec.to_dict()
    assert d == {"kind": "SpikeSlabDropout", "p": 0.5, "p_dc": 0.2}
    assert MaskSpec.from_dict(d) == spec


@pytest.mark.parametrize("name,kind", [("bdc", MaskKind.BERNOULLI_DROPCONNECT), ("GDO", MaskKind.GAUSSIAN_DROPOUT),
                                       ("SpikeSlabDropout", MaskKind.SPIKE_SLAB_DROPOUT)])
def test_parse_kind_aliases(name, kind):
    assert parse_kind(name) is kind


@pytest.mark.parametrize("spec", ALL_SPECS_P0 + [MaskSpec(MaskKind.SPIKE_SLAB_DROPOUT, 0.0, 0.0)])
def test_zero_probability_gives_all_ones(spec):
    m = sample_mask(spec, 7, 5, Rng(1))
    assert np.array_equal(m, np.ones((7, 5)))


def test_bernoulli_dropconnect_zero_fraction():
    m = sample_mask(MaskSpec(MaskKind.BERNOULLI_DROPCONNECT, 0.5), 1000, 1000, Rng(2))
    assert set(np.unique(m)) <= {0.0, 2.0}
    assert abs(np.mean(m == 0) - 0.5) <= 0.002


def test_gaussian_dropout_rows_constant_and_variance():
    spec = MaskSpec(MaskKind.GAUSSIAN_DROPOUT, 0.4)
    small = sample_mask(spec, 3, 4, Rng(3))
    assert np.all(small.max(axis=1) == small.min(axis=1))
    rows = sample_mask(spec, 10**6, 1, Rng(4))[:, 0]
    assert rows.var(ddof=1) == pytest.approx(2 / 3, rel=0.01)


@pytest.mark.parametrize("kind", [MaskKind.BERNOULLI_DROPOUT, MaskKind.GAUSSIAN_DROPOUT])
def test_dropout_kinds_row_structured(kind):
    m = sample_mask(MaskSpec(kind, 0.3), 50, 20, Rng(5))
    assert np.max(m.max(axis=1) - m.min(axis=1)) == 0.0


@pytest.mark.parametrize("kind", [MaskKind.BERNOULLI_DROPOUT, MaskKind.BERNOULLI_DROPCONNECT])
def test_bernoulli_masks_nonnegative(kind):
    assert np.all(sample_mask(MaskSpec(kind, 0.6), 30, 30, Rng(6)) >= 0)


def test_spike_slab_zero_rows_follow_gate():
    m = sample_mask(MaskSpec(MaskKind.SPIKE_SLAB_DROPOUT, 0.5, 0.2), 200, 10, Rng(7))
    zero_rows = np.all(m == 0, axis=1)
    assert 0 < zero_rows.sum() < 200
    # slab entries are continuous: surviving rows contain no exact zeros
    assert np.all(m[~zero_rows] != 0)


def test_mask_moments_examples():
    assert mask_moments(MaskSpec()) == (1.0, 0.0)
    assert mask_moments(MaskSpec(MaskKind.BERNOULLI_DROPOUT, 0.5)) == (1.0, 1.0)
    assert mask_moments(MaskSpec(MaskKind.GAUSSIAN_DROPCONNECT, 0.5)) == (1.0, 1.0)


@pytest.mark.parametrize("spec", [MaskSpec(k, p) for k in SAMPLED_KINDS if k is not MaskKind.SPIKE_SLAB_DROPOUT
                                  for p in (0.1, 0.25, 0.5)]
                         + [MaskSpec(MaskKind.SPIKE_SLAB_DROPOUT, a, b) for a in (0.25, 0.5) for b in (0.1, 0.25)])
def test_mask_moments_match_raw_moment_oracle(spec):
    mean, var, _ = mask_entry_moments(spec.kind.value, spec.p, spec.p_dc)
    got = mask_moments(spec)
    assert got[0] == pytest.approx(mean, rel=1e-12)
    assert got[1] == pytest.approx(var, rel=1e-12)


def test_mean_mask_examples():
    assert np.array_equal(mean_mask(MaskSpec(), 2, 3), np.ones((2, 3)))
    assert np.array_equal(mean_mask(MaskSpec(MaskKind.BERNOULLI_DROPOUT, 0.5), 2, 3), np.ones((2, 3)))
    assert np.array_equal(mean_mask(MaskSpec(MaskKind.SPIKE_SLAB_DROPOUT, 0.5, 0.2), 4, 2), np.ones((4, 2)))


def test_reduction_spike_slab_without_slab_is_bernoulli_dropout():
    ssd = MaskSpec(MaskKind.SPIKE_SLAB_DROPOUT, 0.4, 0.0)
    bdo = MaskSpec(MaskKind.BERNOULLI_DROPOUT, 0.4)
    assert mask_moments(ssd) == mask_moments(bdo)
    a = sample_mask(ssd, 300, 8, Rng(8))
    b = sample_mask(bdo, 300, 8, Rng(8))
    assert np.array_equal(a == 0, b == 0)
    assert np.array_equal(a, b)


def test_reduction_spike_slab_without_spike_is_gaussian_dropconnect():
    ssd = MaskSpec(MaskKind.SPIKE_SLAB_DROPOUT, 0.0, 0.25)
    gdc = MaskSpec(MaskKind.GAUSSIAN_DROPCONNECT, 0.25)
    assert mask_moments(ssd) == pytest.approx(mask_moments(gdc), rel=1e-15)
    n = 10**6
    a = sample_mask(ssd, 1000, 1000, Rng(9)).ravel()
    b = sample_mask(gdc, 1000, 1000, Rng(10)).ravel()
    _, var, mu4 = mask_entry_moments("GaussianDropConnect", 0.25)
    se_mean = math.sqrt(var / n)
    se_var = math.sqrt((mu4 - var**2) / n)
    # difference of two independent estimates
    assert abs(a.mean() - b.mean()) <= 4 * math.sqrt(2) * se_mean
    assert abs(a.var() - b.var()) <= 4 * math.sqrt(2) * se_var


def test_without_row_gates():
    assert MaskSpec(MaskKind.BERNOULLI_DROPOUT, 0.5).without_row_gates() == MaskSpec()
    assert MaskSpec(MaskKind.SPIKE_SLAB_DROPOUT, 0.5, 0.2).without_row_gates() == MaskSpec(
        MaskKind.GAUSSIAN_DROPCONNECT, 0.2)
    bdc = MaskSpec(MaskKind.BERNOULLI_DROPCONNECT, 0.5)
    assert bdc.without_row_gates() == bdc


def test_sample_mask_is_seed_deterministic():
    spec = MaskSpec(MaskKind.SPIKE_SLAB_DROPOUT, 0.3, 0.2)
    assert np.array_equal(sample_mask(spec, 9, 4, Rng(11)), sample_mask(spec, 9, 4, Rng(11)))


def test_sample_mask_rejects_empty_shape():
    with pytest.raises(ParameterError):
        sample_mask(MaskSpec(), 0, 3, Rng(0))
