"""Input covariance described only by its eigenvalue distribution.

The learning dynamics see the input covariance ``Sigma`` only through
bilinear forms ``u^T Sigma^e v`` of weight vectors, and the isotropic weight
initialization is rotation invariant, so a diagonal ``Sigma`` with the right
eigenvalues is as good as any other.  :class:`EigenSpectrum` stores the
distinct eigenvalues with the fraction of the input dimension each occupies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, NegativeEigenvalue, NonUnitFractions, TooSmallN

FRACTION_TOL = 1e-9
MERGE_RTOL = 1e-8


@dataclass(frozen=True)
class EigenSpectrum:
    """Distinct eigenvalues (ascending) and their multiplicity fractions."""

    eigenvalues: tuple
    fractions: tuple

    def __post_init__(self):
        if not self.eigenvalues or len(self.eigenvalues) != len(self.fractions):
            raise ValueError("spectrum needs matching, non-empty eigenvalue/fraction lists")
        lam = np.asarray(self.eigenvalues, dtype=float)
        if not np.all(np.isfinite(lam)):
            raise ValueError("eigenvalues must be finite")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("eigenvalues must be strictly increasing; use new_spectrum()")
        if abs(sum(self.fractions) - 1.0) > 1e-12:
            raise NonUnitFractions(f"fractions sum to {sum(self.fractions)!r}")

    @property
    def d(self) -> int:
        return len(self.eigenvalues)

    @property
    def entries(self):
        return list(zip(self.eigenvalues, self.fractions))

    def moment(self, e: int) -> float:
        return float(sum(r * lam**e for lam, r in self.entries))

    def moments(self, dmax: int) -> np.ndarray:
        return moment(self, dmax)

    def to_literal(self) -> str:
        return format_spectrum(self)

    def __str__(self):
        return self.to_literal()


def new_spectrum(pairs) -> EigenSpectrum:
    """Canonicalize ``(eigenvalue, fraction)`` pairs.

    Sorts, merges duplicate (or nearly coincident, relative 1e-8) eigenvalues
    by adding their fractions, and renormalizes fractions that sum to 1
    within 1e-9.
    """
    pairs = [(float(lam), float(r)) for lam, r in pairs]
    if not pairs:
        raise ValueError("empty spectrum")
    for lam, r in pairs:
        if not np.isfinite(lam) or not np.isfinite(r):
            raise ValueError("eigenvalues and fractions must be finite")
        if lam < 0:
            raise NegativeEigenvalue(f"eigenvalue {lam!r} < 0")
        if r <= 0:
            raise ValueError(f"fraction {r!r} must be positive")
    total = sum(r for _, r in pairs)
    if abs(total - 1.0) > FRACTION_TOL:
        raise NonUnitFractions(f"fractions sum to {total!r}, expected 1")

    pairs.sort()
    scale = max(lam for lam, _ in pairs)
    merged = []
    for lam, r in pairs:
        if merged and lam - merged[-1][0] < MERGE_RTOL * scale:
            lam0, r0 = merged[-1]
            # fraction-weighted position keeps mu_1 unchanged
            merged[-1] = ((lam0 * r0 + lam * r) / (r0 + r), r0 + r)
        else:
            merged.append((lam, r))
    lams = tuple(lam for lam, _ in merged)
    fracs = np.array([r for _, r in merged]) / total
    return EigenSpectrum(lams, tuple(float(r) for r in fracs))


def scalar_spectrum(sigma: float) -> EigenSpectrum:
    return new_spectrum([(sigma, 1.0)])


def two_point_spectrum(mu1: float, delta: float) -> EigenSpectrum:
    """Eigenvalues ``mu1 -/+ delta/2`` with half the dimensions each."""
    if delta == 0:
        return scalar_spectrum(mu1)
    return new_spectrum([(mu1 - delta / 2, 0.5), (mu1 + delta / 2, 0.5)])


def parse_spectrum(text: str) -> EigenSpectrum:
    """Parse ``"0.4:0.5,1.2:0.3,1.6:0.2"`` (eigenvalue:fraction pairs)."""
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            lam, r = item.split(":")
            pairs.append((float(lam), float(r)))
        except ValueError:
            raise ValueError(f"bad spectrum entry {item!r}; expected eigenvalue:fraction") from None
    return new_spectrum(pairs)


def format_spectrum(spec: EigenSpectrum) -> str:
    return ",".join(f"{lam!r}:{r!r}" for lam, r in spec.entries)


def moment(spec: EigenSpectrum, dmax: int) -> np.ndarray:
    """Moments ``mu_0 .. mu_dmax`` of the eigenvalue distribution."""
    if dmax < 0:
        raise ValueError("dmax must be >= 0")
    lam = np.asarray(spec.eigenvalues)
    r = np.asarray(spec.fractions)
    mu = np.array([float(np.dot(r, lam**e)) for e in range(dmax + 1)])
    mu[0] = 1.0
    return mu


def reduction_coefficients(spec: EigenSpectrum) -> np.ndarray:
    """``c_0 .. c_{d-1}`` of ``prod_i (x - lam_i) = x^d + sum_e c_e x^e``.

    Since that polynomial annihilates Sigma, any order-d overlap reduces to
    ``Omega^(d) = -sum_e c_e Omega^(e)``.
    """
    coeffs = np.array([1.0])
    for lam in spec.eigenvalues:
        coeffs = np.convolve(coeffs, [1.0, -lam])
    # np.convolve gives highest power first
    return coeffs[::-1][:-1].copy()


def multiplicities(spec: EigenSpectrum, N: int) -> np.ndarray:
    """Integer multiplicities summing to N (largest remainder, ties to smaller eigenvalue)."""
    if N < spec.d:
        raise TooSmallN(f"N={N} is smaller than the number of distinct eigenvalues {spec.d}")
    exact = np.asarray(spec.fractions) * N
    base = np.floor(exact + 1e-9).astype(int)
    remainder = exact - base
    short = N - int(base.sum())
    # stable sort on -remainder keeps ascending-eigenvalue order among ties
    order = np.argsort(-np.round(remainder, 9), kind="stable")
    base[order[:short]] += 1
    if np.any(base == 0):
        raise TooSmallN(f"N={N} leaves an eigenvalue with zero multiplicity")
    return base


def realize_covariance(spec: EigenSpectrum, N: int) -> np.ndarray:
    """Diagonal of a concrete N x N covariance with this spectrum (ascending)."""
    counts = multiplicities(spec, N)
    return np.repeat(np.asarray(spec.eigenvalues, dtype=float), counts)


def empirical_spectrum_from_data(rows, max_distinct: int = 8, center: bool = False):
    """Input-correlation moments and a compressed spectrum of a data matrix.

    By default the matrix is the raw second moment ``(1/n) X^T X``, which is
    what the learning dynamics see when inputs are fed without centring.
    ``center=True`` subtracts the column means first (biased covariance).  Returns
    ``(moments, spectrum)`` where ``moments`` holds mu_0..mu_4 of the full
    eigenvalue list and ``spectrum`` bins the eigenvalues into at most
    ``max_distinct`` groups placed at their bin means (so mu_1 is exact).
    """
    x = np.asarray(rows, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateData("need at least 2 rows of data")
    if center:
        x = x - x.mean(axis=0)
    cov = (x.T @ x) / x.shape[0]
    lam = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    mu = np.array([np.mean(lam**e) for e in range(5)])
    return mu, compress_eigenvalues(lam, max_distinct)


def compress_eigenvalues(lam, max_distinct: int = 8) -> EigenSpectrum:
    """Exact spectrum if it has few enough distinct values, else equal-width bins."""
    lam = np.sort(np.asarray(lam, dtype=float))
    n = lam.size
    if max_distinct < 1:
        raise ValueError("max_distinct must be >= 1")
    if lam[-1] <= 0:
        return new_spectrum([(0.0, 1.0)])
    exact = new_spectrum([(float(v), 1.0 / n) for v in lam])
    if exact.d <= max_distinct:
        return exact
    edges = np.linspace(lam[0], lam[-1], max_distinct + 1)
    bins = np.clip(np.searchsorted(edges, lam, side="right") - 1, 0, max_distinct - 1)
    pairs = []
    for b in range(max_distinct):
        sel = lam[bins == b]
        if sel.size:
            pairs.append((float(sel.mean()), sel.size / n))
    return new_spectrum(pairs)
