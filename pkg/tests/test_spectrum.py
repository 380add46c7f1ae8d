import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plateau_dyn.errors import DegenerateData, NegativeEigenvalue, NonUnitFractions, TooSmallN
from plateau_dyn.spectrum import (compress_eigenvalues, empirical_spectrum_from_data,
                                  format_spectrum, moment, multiplicities, new_spectrum,
                                  parse_spectrum, realize_covariance, reduction_coefficients,
                                  scalar_spectrum, two_point_spectrum)

THREE_LEVELS = "0.4:0.5,1.2:0.3,1.6:0.2"


def test_parse_sorts_and_round_trips():
    spec = parse_spectrum("1.6:0.2, 0.4:0.5,1.2:0.3")
    assert spec.eigenvalues == (0.4, 1.2, 1.6)
    assert spec.fractions == pytest.approx((0.5, 0.3, 0.2))
    assert parse_spectrum(format_spectrum(spec)) == spec


def test_duplicates_merge_and_keep_first_moment():
    spec = new_spectrum([(1.0, 0.25), (1.0 + 1e-12, 0.25), (3.0, 0.5)])
    assert spec.d == 2
    assert spec.moment(1) == pytest.approx(0.5 + 1.5)


@pytest.mark.parametrize("pairs,exc", [
    ([(1.0, 0.5), (2.0, 0.4)], NonUnitFractions),
    ([(-0.1, 1.0)], NegativeEigenvalue),
])
def test_invalid_spectra(pairs, exc):
    with pytest.raises(exc):
        new_spectrum(pairs)


def test_bad_literal():
    with pytest.raises(ValueError):
        parse_spectrum("1.0-1.0")


def test_moments_by_hand():
    mu = moment(parse_spectrum(THREE_LEVELS), 3)
    assert mu[0] == 1.0
    assert mu[1] == pytest.approx(0.5 * 0.4 + 0.3 * 1.2 + 0.2 * 1.6)
    assert mu[2] == pytest.approx(0.5 * 0.16 + 0.3 * 1.44 + 0.2 * 2.56)
    assert mu[3] == pytest.approx(0.5 * 0.064 + 0.3 * 1.728 + 0.2 * 4.096)


def test_two_point_spectrum_moments():
    spec = two_point_spectrum(1.0, 1.0)
    assert spec.eigenvalues == (0.5, 1.5)
    assert spec.moment(2) == pytest.approx(1.0 + 1.0 / 4)
    assert two_point_spectrum(2.0, 0.0) == scalar_spectrum(2.0)


@given(st.lists(st.floats(0.01, 10.0), min_size=1, max_size=5, unique=True))
def test_reduction_polynomial_annihilates_eigenvalues(lams):
    spec = new_spectrum([(lam, 1.0 / len(lams)) for lam in lams])
    c = reduction_coefficients(spec)
    for lam in spec.eigenvalues:
        value = lam**spec.d + sum(c[e] * lam**e for e in range(spec.d))
        assert abs(value) <= 1e-9 * max(1.0, max(spec.eigenvalues)) ** spec.d


@settings(max_examples=50)
@given(st.integers(3, 5000), st.lists(st.integers(1, 20), min_size=1, max_size=3))
def test_multiplicities_sum_to_n(N, weights):
    total = sum(weights)
    spec = new_spectrum([(float(k + 1), w / total) for k, w in enumerate(weights)])
    if N < spec.d:
        return
    try:
        counts = multiplicities(spec, N)
    except TooSmallN:
        return
    assert counts.sum() == N
    assert np.all(np.abs(counts - np.asarray(spec.fractions) * N) < 1.0)


def test_multiplicity_ties_go_to_smaller_eigenvalue():
    counts = multiplicities(new_spectrum([(1.0, 0.5), (2.0, 0.5)]), 5)
    assert list(counts) == [3, 2]


def test_too_small_n():
    with pytest.raises(TooSmallN):
        multiplicities(parse_spectrum(THREE_LEVELS), 2)


def test_realized_covariance_has_exact_moments():
    spec = parse_spectrum(THREE_LEVELS)
    lam = realize_covariance(spec, 1000)
    assert lam.size == 1000
    assert lam.mean() == pytest.approx(spec.moment(1), rel=1e-12)


def test_empirical_moments_uncentered_and_centered():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4000, 3)) * [1.0, 2.0, 3.0] + 5.0
    mu, _ = empirical_spectrum_from_data(x)
    assert mu[1] == pytest.approx(np.mean(x**2) * 1.0, rel=1e-12)
    mu_c, _ = empirical_spectrum_from_data(x, center=True)
    assert mu_c[1] == pytest.approx(np.mean(x.var(axis=0)), rel=1e-12)


def test_empirical_spectrum_of_tiny_data():
    with pytest.raises(DegenerateData):
        empirical_spectrum_from_data(np.ones((1, 3)))


def test_compress_keeps_first_moment():
    lam = np.linspace(0.0, 3.0, 100) ** 2
    spec = compress_eigenvalues(lam, 4)
    assert spec.d <= 4
    assert spec.moment(1) == pytest.approx(lam.mean(), rel=1e-12)
    assert compress_eigenvalues(np.zeros(5)).eigenvalues == (0.0,)


@pytest.mark.parametrize("text,N,expected", [
    ("1:1", 4, [4]),
    ("0.4:0.5,1.2:0.3,1.6:0.2", 10, [5, 3, 2]),
    ("0.3:0.5,1.7:0.5", 5, [3, 2]),
])
def test_multiplicity_examples(text, N, expected):
    assert list(multiplicities(parse_spectrum(text), N)) == expected


def test_identical_rows_have_zero_covariance():
    mu, spec = empirical_spectrum_from_data(np.tile([1.0, -2.0, 0.5], (10, 1)), center=True)
    assert np.allclose(mu[1:], 0.0) and spec.eigenvalues == (0.0,)


def test_recovers_first_moment_of_sampled_data():
    rng = np.random.default_rng(42)
    lam = np.array([0.2, 0.5, 1.0, 3.0])
    x = rng.standard_normal((5000, lam.size)) * np.sqrt(lam)
    mu, _ = empirical_spectrum_from_data(x)
    # mu_1 is the mean squared entry; its SE follows from the per-row means
    per_row = (x**2).mean(axis=1)
    assert abs(mu[1] - lam.mean()) < 3 * per_row.std(ddof=1) / np.sqrt(per_row.size)
