"""Gaussian expectations of erf-type nonlinearities.

All kernels use the activation ``g(x) = erf(x / sqrt(2))`` with derivative
``g'(x) = sqrt(2/pi) * exp(-x**2 / 2)``, and take the covariance of the
jointly Gaussian arguments ``z ~ N(0, C)``:

* ``i2(C) = <g(z1) g(z2)>``
* ``i3(C) = <g'(z1) z2 g(z3)>``
* ``i4(C) = <g'(z1) g'(z2) g(z3) g(z4)>``

The ``*_entries`` variants take individual covariance entries and broadcast
over numpy arrays; the ODE right-hand sides are built on those.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import CollinearZ1Z3, NonPSD, SingularDenominator

SYM_TOL = 1e-14
PSD_TOL = 1e-10
ARCSIN_GUARD = 1e-12
COLLINEAR_TOL = 1e-12

_TWO_OVER_PI = 2.0 / np.pi
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class GaussianCov:
    """Validated symmetric PSD covariance of order 2, 3 or 4."""

    entries: np.ndarray

    def __post_init__(self):
        c = np.array(self.entries, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] not in (2, 3, 4):
            raise ValueError(f"expected a 2x2, 3x3 or 4x4 matrix, got shape {c.shape}")
        scale = max(1.0, float(np.abs(c).max()))
        if np.abs(c - c.T).max() > SYM_TOL * scale:
            raise NonPSD("covariance is not symmetric")
        c = 0.5 * (c + c.T)
        if np.any(np.diag(c) < 0):
            raise NonPSD("negative variance on the diagonal")
        if np.linalg.eigvalsh(c).min() < -PSD_TOL * scale:
            raise NonPSD("covariance is not positive semidefinite")
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)

    @property
    def order(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, idx):
        return self.entries[idx]


def as_cov(C, order=None) -> GaussianCov:
    cov = C if isinstance(C, GaussianCov) else GaussianCov(C)
    if order is not None and cov.order != order:
        raise ValueError(f"expected order {order} covariance, got order {cov.order}")
    return cov


def _safe_arcsin(u):
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(u) > 1.0 + ARCSIN_GUARD):
        raise ValueError(f"arcsin argument outside [-1, 1] beyond guard band: {np.abs(u).max()!r}")
    return np.arcsin(np.clip(u, -1.0, 1.0))


def i2_entries(c11, c12, c22):
    return _TWO_OVER_PI * _safe_arcsin(c12 / np.sqrt((1.0 + c11) * (1.0 + c22)))


def i3_entries(c11, c12, c13, c23, c33):
    # C22 never enters: the expectation is independent of it.
    a = 1.0 + c11
    lam3 = a * (1.0 + c33) - c13 * c13
    if np.any(lam3 <= 0):
        raise SingularDenominator("(1+C11)(1+C33) - C13^2 <= 0")
    return _TWO_OVER_PI * (c23 * a - c12 * c13) / (a * np.sqrt(lam3))


def i4_entries(c11, c12, c13, c14, c22, c23, c24, c33, c34, c44):
    """Four-point kernel in the classical Lambda form for erf units."""
    a1 = 1.0 + c11
    a2 = 1.0 + c22
    lam4 = a1 * a2 - c12 * c12
    lam0 = (lam4 * c34 - c23 * c24 * a1 - c13 * c14 * a2
            + c12 * c13 * c24 + c12 * c14 * c23)
    lam1 = lam4 * (1.0 + c33) - c23 * c23 * a1 - c13 * c13 * a2 + 2.0 * c12 * c13 * c23
    lam2 = lam4 * (1.0 + c44) - c24 * c24 * a1 - c14 * c14 * a2 + 2.0 * c12 * c14 * c24
    return (4.0 / np.pi**2) / np.sqrt(lam4) * _safe_arcsin(lam0 / np.sqrt(lam1 * lam2))


def i2(C) -> float:
    c = as_cov(C, 2).entries
    return float(i2_entries(c[0, 0], c[0, 1], c[1, 1]))


def i3(C) -> float:
    c = as_cov(C, 3).entries
    return float(i3_entries(c[0, 0], c[0, 1], c[0, 2], c[1, 2], c[2, 2]))


def i3_reduced(C) -> float:
    """I3 rebuilt from the two degenerate cases z2 = z1 and z2 = z3.

    Writing z2 as c1*z1 + c3*z3 plus an independent remainder gives
    ``I3 = (c1 * I3(z1, z1, z3) + c3 * I3(z1, z3, z3))`` with (c1, c3)
    solved from the C12 and C23 constraints.  Raises CollinearZ1Z3 when
    z1 and z3 are (numerically) collinear; callers should use :func:`i3`.
    """
    c = as_cov(C, 3).entries
    c11, c12, c13, c23, c33 = c[0, 0], c[0, 1], c[0, 2], c[1, 2], c[2, 2]
    det = c11 * c33 - c13 * c13
    if det <= COLLINEAR_TOL:
        raise CollinearZ1Z3(f"C11*C33 - C13^2 = {det!r}")
    same_as_z1 = i3_entries(c11, c11, c13, c13, c33)
    same_as_z3 = i3_entries(c11, c13, c13, c33, c33)
    return float(((c12 * c33 - c13 * c23) * same_as_z1
                  + (c11 * c23 - c12 * c13) * same_as_z3) / det)


def i4(C) -> float:
    c = as_cov(C, 4).entries
    return float(i4_entries(c[0, 0], c[0, 1], c[0, 2], c[0, 3], c[1, 1],
                            c[1, 2], c[1, 3], c[2, 2], c[2, 3], c[3, 3]))


def i4_coincident(c11, c12, c13, c22, c23, c33):
    """I4(z1, z1, z2, z3): the three-variable form used when both derivative
    factors share one argument.  Equals :func:`i4_entries` with z1 == z2."""
    a = 1.0 + 2.0 * c11
    num = a * c23 - 2.0 * c12 * c13
    den = np.sqrt(a * (1.0 + c22) - 2.0 * c12**2) * np.sqrt(a * (1.0 + c33) - 2.0 * c13**2)
    return (4.0 / np.pi**2) / np.sqrt(a) * _safe_arcsin(num / den)


# --- Monte Carlo oracle -------------------------------------------------------

def g(x):
    return erf(x / np.sqrt(2.0))


def g_prime(x):
    return _SQRT_2_OVER_PI * np.exp(-0.5 * x * x)


_INTEGRANDS = {
    "I2": (2, lambda z: g(z[0]) * g(z[1])),
    "I3": (3, lambda z: g_prime(z[0]) * z[1] * g(z[2])),
    "I4": (4, lambda z: g_prime(z[0]) * g_prime(z[1]) * g(z[2]) * g(z[3])),
}


def sqrtm_psd(C) -> np.ndarray:
    """Symmetric square root of a PSD matrix; small negative eigenvalues are clipped."""
    c = np.asarray(C, dtype=float)
    w, v = np.linalg.eigh(0.5 * (c + c.T))
    if w.min() < -PSD_TOL * max(1.0, np.abs(w).max()):
        raise NonPSD(f"smallest eigenvalue {w.min()!r}")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def mc_expectation(kind, C, samples=10**6, seed=0, chunk=250_000):
    """Plain Monte Carlo estimate of I2/I3/I4; returns ``(mean, standard_error)``.

    The integrands are even under ``z -> -z``, so antithetic pairing would
    only duplicate samples; independent draws are used instead.
    """
    if samples < 10**4:
        raise ValueError("mc_expectation needs at least 1e4 samples")
    try:
        order, integrand = _INTEGRANDS[kind.upper()]
    except KeyError:
        raise ValueError(f"unknown kernel {kind!r}; expected I2, I3 or I4") from None
    root = sqrtm_psd(np.asarray(C.entries if isinstance(C, GaussianCov) else C, dtype=float))
    if root.shape != (order, order):
        raise ValueError(f"{kind} needs an order-{order} covariance")

    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        z = root @ rng.standard_normal((order, n))
        f = integrand(z)
        total += f.sum()
        total_sq += (f * f).sum()
        done += n
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0) * samples / (samples - 1)
    return float(mean), float(np.sqrt(var / samples))


def random_psd(order, rng, scale=1.0) -> np.ndarray:
    """Random covariance used by the oracle-agreement checks.

    ``A A^T / order`` with ``A`` an ``order x (order + 2)`` standard normal
    matrix, times a log-uniform scale in [0.2, 5] * ``scale``.
    """
    a = rng.standard_normal((order, order + 2))
    s = scale * np.exp(rng.uniform(np.log(0.2), np.log(5.0)))
    c = s * (a @ a.T) / order
    return 0.5 * (c + c.T)
