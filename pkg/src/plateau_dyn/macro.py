"""Macroscopic order-parameter dynamics in normalized time alpha = steps / N.

The state keeps orders e = 0..d-1 of the overlaps (d = number of distinct
input eigenvalues); order d, needed by the top equation, is rebuilt from the
characteristic polynomial of Sigma.  Kernel sums are evaluated on whole index
grids at once: with ``z = (x_1..x_K, y_1..y_M)`` the student's error signal
for unit i is ``sum_c W[i, c] g(z_c)`` where ``W = [-D, E]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import gauss
from .errors import IndexOutOfRange, NonFinite
from .spectrum import EigenSpectrum, moment
from .state import (OrderParameterState, Trajectory, csv_row_values, gram_of_order,
                    lift_coefficients, lift_order)

__all__ = [
    "MacroConfig", "lift_order", "assemble_i3_cov", "derivative",
    "generalization_error", "integrate", "random_initial_state",
    "soft_committee_state", "default_dt",
]


def default_dt(eta: float, spectrum: EigenSpectrum) -> float:
    return 0.05 / (eta * spectrum.moment(1)) if eta > 0 else 1.0


@dataclass
class MacroConfig:
    eta: float
    spectrum: EigenSpectrum
    freeze_second_layer: bool = True
    t_end: float = 1000.0
    dt: float | None = None
    record_every: int | None = None

    def __post_init__(self):
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if self.dt is None:
            self.dt = default_dt(self.eta, self.spectrum)
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @cached_property
    def lift_matrix(self) -> np.ndarray:
        """Row e-1 maps stored orders onto order e, for e = 1..d."""
        return np.array([lift_coefficients(self.spectrum, e) for e in range(1, self.spectrum.d + 1)])

    @cached_property
    def moments(self) -> np.ndarray:
        return moment(self.spectrum, self.spectrum.d)

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))

    @property
    def every(self) -> int:
        if self.record_every is not None:
            return max(1, int(self.record_every))
        return max(1, self.n_steps // 2000)


def assemble_i3_cov(state, spectrum, kind, indices, e):
    """Covariance for ``I3(x_i, a^(e), b)`` where a, b are student (x) or teacher (y).

    ``kind`` is one of ``xx, xy, yx, yy`` naming the types of (a, b);
    ``indices = (i, a_index, b_index)``.  The (2,2) entry does not affect I3
    and is filled with a feasible placeholder (the Schur lower bound plus
    one), so the result is always a valid PSD matrix.
    """
    if kind not in ("xx", "xy", "yx", "yy"):
        raise ValueError(f"kind must be xx, xy, yx or yy, not {kind!r}")
    K, M = state.K, state.M
    i, a, b = indices
    ia = a if kind[0] == "x" else K + a
    ib = b if kind[1] == "x" else K + b
    limits = [(i, K), (a, K if kind[0] == "x" else M), (b, K if kind[1] == "x" else M)]
    for idx, bound in limits:
        if not 0 <= idx < bound:
            raise IndexOutOfRange(f"index {idx} outside [0, {bound})")
    g1 = gram_of_order(state, spectrum, 1)
    ge = gram_of_order(state, spectrum, e + 1)
    c11, c13, c33 = g1[i, i], g1[i, ib], g1[ib, ib]
    c12, c23 = ge[i, ia], ge[ia, ib]
    outer = np.array([[c11, c13], [c13, c33]])
    cross = np.array([c12, c23])
    c22 = float(cross @ np.linalg.pinv(outer) @ cross) + 1.0
    return gauss.GaussianCov(np.array([[c11, c12, c13], [c12, c22, c23], [c13, c23, c33]]))


def _error_weights(state: OrderParameterState):
    """W = [-D, E] (student error signal) and V = [-E^T, F] (teacher side)."""
    W = np.concatenate([-state.D, state.E], axis=1)
    V = np.concatenate([-state.E.T, state.F], axis=1)
    return W, V


def _i2_matrix(g1):
    d = np.diag(g1)
    return gauss.i2_entries(d[:, None], g1, d[None, :])


def _i4_term(g1, W, K):
    """``B[i, j] = sum_{p,q} W[i,p] W[j,q] I4(x_i, x_j, z_p, z_q)``."""
    dg = np.diag(g1)
    gx = g1[:K]  # rows: students, cols: all z
    i4 = gauss.i4_entries(
        dg[:K, None, None, None],            # c11 = <x_i x_i>
        g1[:K, :K][:, :, None, None],        # c12 = <x_i x_j>
        gx[:, None, :, None],                # c13 = <x_i z_p>
        gx[:, None, None, :],                # c14 = <x_i z_q>
        dg[None, :K, None, None],            # c22 = <x_j x_j>
        gx[None, :, :, None],                # c23 = <x_j z_p>
        gx[None, :, None, :],                # c24 = <x_j z_q>
        dg[None, None, :, None],             # c33
        g1[None, None, :, :],                # c34 = <z_p z_q>
        dg[None, None, None, :],             # c44
    )
    return np.einsum("ip,jq,ijpq->ij", W, W, i4)


def derivative(state: OrderParameterState, config: MacroConfig) -> OrderParameterState:
    """Time derivative of every order parameter (constants get zeros)."""
    spec = config.spectrum
    eta = config.eta
    K = state.K
    d = spec.d
    if state.n_orders != d:
        raise ValueError(f"state stores {state.n_orders} orders but spectrum has d={d}")
    mu = config.moments
    grams = np.tensordot(config.lift_matrix, state.gram(), axes=1)
    g1 = grams[0]
    dg = np.diag(g1)
    W, V = _error_weights(state)

    b4 = _i4_term(g1, W, K) if eta != 0 else np.zeros((K, K))
    dQ = np.empty_like(state.Q)
    dR = np.empty_like(state.R)
    for e in range(d):
        ge = grams[e]  # order e + 1
        # I3(x_i, z_b^(e), z_c) over the grid (i, b, c)
        i3 = gauss.i3_entries(dg[:K, None, None], ge[:K, :, None], g1[:K, None, :],
                              ge[None, :, :], dg[None, None, :])
        h = np.einsum("ic,ibc->ib", W, i3)
        hx = h[:, :K]
        dQ[e] = eta * (hx + hx.T) + eta**2 * mu[e + 1] * b4
        dR[e] = eta * h[:, K:]

    if config.freeze_second_layer:
        dD = np.zeros_like(state.D)
        dE = np.zeros_like(state.E)
    else:
        i2x = _i2_matrix(g1)[:K]
        a = i2x @ W.T
        dD = eta * (a + a.T)
        dE = eta * (i2x @ V.T)
    return OrderParameterState(dQ, dR, np.zeros_like(state.T), dD, dE, np.zeros_like(state.F))


def generalization_error_from_gram(g1, D, E, F) -> float:
    S = np.block([[D, -E], [-E.T, F]])
    return 0.5 * float(np.sum(S * _i2_matrix(g1)))


def generalization_error(state: OrderParameterState, spectrum: EigenSpectrum) -> float:
    """eps_g = 1/2 <(s - t)^2> from order-1 overlaps and second-layer products."""
    g1 = gram_of_order(state, spectrum, 1)
    return generalization_error_from_gram(g1, state.D, state.E, state.F)


# --- integration ----------------------------------------------------------------

def _axpy(state, k, h):
    return OrderParameterState(state.Q + h * k.Q, state.R + h * k.R, state.T,
                               state.D + h * k.D, state.E + h * k.E, state.F)


def rk4_step(state, config, h):
    k1 = derivative(state, config)
    k2 = derivative(_axpy(state, k1, h / 2), config)
    k3 = derivative(_axpy(state, k2, h / 2), config)
    k4 = derivative(_axpy(state, k3, h), config)
    out = OrderParameterState(
        state.Q + h / 6 * (k1.Q + 2 * k2.Q + 2 * k3.Q + k4.Q),
        state.R + h / 6 * (k1.R + 2 * k2.R + 2 * k3.R + k4.R),
        state.T,
        state.D + h / 6 * (k1.D + 2 * k2.D + 2 * k3.D + k4.D),
        state.E + h / 6 * (k1.E + 2 * k2.E + 2 * k3.E + k4.E),
        state.F,
    )
    return out.symmetrize()


def record_row(state, spectrum):
    q1, r1, _ = lift_order(state, spectrum, 1)
    return csv_row_values(q1, r1, state.D, state.E)


def integrate(state0: OrderParameterState, config: MacroConfig, recorder=None,
              keep_states: bool = False, stop_below: float | None = None) -> Trajectory:
    """Classical fixed-step RK4 from alpha = 0 to ``config.t_end``.

    Records every ``config.every`` steps (and the final step).  ``recorder``,
    if given, is called as ``recorder(alpha, eps_g, state)`` at each record.
    With ``stop_below`` the run ends at the first record whose eps_g is below
    that value (long runs otherwise sink into round-off noise near 1e-16).
    Raises :class:`NonFinite` if the state blows up.
    """
    spec = config.spectrum
    n = config.n_steps
    h = config.t_end / n
    every = config.every
    state = state0.copy().symmetrize()
    alphas, eps, rows, states = [], [], [], []

    def _record(step, st):
        a = step * h
        eg = generalization_error(st, spec)
        alphas.append(a)
        eps.append(eg)
        rows.append(record_row(st, spec))
        if keep_states:
            states.append(st.copy())
        if recorder is not None:
            recorder(a, eg, st)

    _record(0, state)
    for step in range(1, n + 1):
        try:
            with np.errstate(invalid="raise", over="raise", divide="raise"):
                state = rk4_step(state, config, h)
        except (FloatingPointError, ValueError, ArithmeticError) as exc:
            raise NonFinite(step * h, f"integration failed at alpha={step * h:g}: {exc}") from exc
        if not state.is_finite():
            raise NonFinite(step * h)
        if step % every == 0 or step == n:
            _record(step, state)
            if stop_below is not None and eps[-1] < stop_below:
                break
    return Trajectory(np.array(alphas), np.array(eps), state0.K, state0.M, rows, states)


def integrate_converged(state0, config, rtol=1e-6, max_halvings=6, **kwargs):
    """Integrate, halving dt until eps_g at t_end changes by < rtol (relative).

    Extra keyword arguments go to :func:`integrate`.  Returns the accepted
    trajectory and the config (with its final dt) that produced it.
    """
    cfg = MacroConfig(config.eta, config.spectrum, config.freeze_second_layer,
                      config.t_end, config.dt, config.record_every)
    traj = integrate(state0, cfg, **kwargs)
    for _ in range(max_halvings):
        finer = MacroConfig(cfg.eta, cfg.spectrum, cfg.freeze_second_layer, cfg.t_end,
                            cfg.dt / 2, 2 * cfg.every)
        traj_fine = integrate(state0, finer, **kwargs)
        if abs(traj_fine.eps_g[-1] - traj.eps_g[-1]) <= rtol * abs(traj_fine.eps_g[-1]):
            return traj_fine, finer
        cfg, traj = finer, traj_fine
    return traj, cfg


# --- initial conditions -----------------------------------------------------------

def soft_committee_state(Q, R, T) -> OrderParameterState:
    Q = np.asarray(Q, dtype=float)
    T = np.asarray(T, dtype=float)
    K, M = Q.shape[1], T.shape[1]
    return OrderParameterState(Q, R, T, np.ones((K, K)), np.ones((K, M)), np.ones((M, M)))


def _project_psd(g):
    w, v = np.linalg.eigh(0.5 * (g + g.T))
    if w.min() >= 0:
        return 0.5 * (g + g.T)
    return (v * np.clip(w, 0.0, None)) @ v.T


def random_initial_state(spectrum: EigenSpectrum, K: int, M: int, N_effective: float,
                         rng_seed=None, soft_committee: bool = True,
                         method: str = "moments") -> OrderParameterState:
    """Random initial overlaps mimicking weights drawn i.i.d. N(0, 1/N).

    ``method="moments"`` draws every entry independently from a Gaussian:
    diagonal Q, T with mean mu_e and variance 3 mu_2e / N, off-diagonal Q, T
    and all of R with mean 0 and variance mu_2e / N; each order's Gram block
    is then projected to PSD.  ``method="wishart"`` instead draws the
    per-eigenvalue block Gram matrices exactly (Wishart with r_k N degrees of
    freedom), which reproduces the joint law of a microscopic initialization,
    including the correlations across orders.  ``N_effective = inf`` returns
    the symmetric point ``(mu_e I, 0, mu_e I)``.
    """
    if N_effective < 1:
        raise ValueError("N_effective must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    d = spectrum.d
    mu = moment(spectrum, 2 * d)
    P = K + M
    grams = np.empty((d, P, P))
    if math.isinf(N_effective):
        for e in range(d):
            grams[e] = mu[e] * np.eye(P)
    elif method == "moments":
        for e in range(d):
            sd = math.sqrt(mu[2 * e] / N_effective)
            g = rng.normal(0.0, sd, size=(P, P))
            g = np.triu(g, 1)
            g = g + g.T
            g[np.diag_indices(P)] = rng.normal(mu[e], math.sqrt(3.0) * sd, size=P)
            # student-student and teacher-teacher blocks are independent of R
            grams[e] = _project_psd(g)
    elif method == "wishart":
        lam = np.asarray(spectrum.eigenvalues)
        blocks = []
        for r in spectrum.fractions:
            dof = r * N_effective
            blocks.append(_wishart(rng, dof, P) / N_effective)
        for e in range(d):
            grams[e] = sum(l**e * b for l, b in zip(lam, blocks))
    else:
        raise ValueError(f"unknown method {method!r}")

    Q = grams[:, :K, :K]
    R = grams[:, :K, K:]
    T = grams[:, K:, K:]
    if soft_committee:
        return soft_committee_state(Q, R, T)
    w = rng.standard_normal(K)
    v = rng.standard_normal(M)
    return OrderParameterState(Q, R, T, np.outer(w, w), np.outer(w, v), np.outer(v, v))


def _wishart(rng, dof, p):
    """Wishart(dof, I_p) sample via the Bartlett decomposition (real dof >= p)."""
    A = np.zeros((p, p))
    for i in range(p):
        A[i, i] = math.sqrt(rng.chisquare(dof - i))
        A[i, :i] = rng.standard_normal(i)
    return A @ A.T
