"""Weight-level online SGD for the two-layer student-teacher model.

Two interchangeable engines produce the same Markov chain:

``"weights"``
    Stores J (K x N) and B (M x N) and draws a full input vector every step.
    Cost O(N) per step, dominated by Gaussian sampling.

``"subspace"``
    Stores, for each eigenspace k of Sigma, the Gram matrix ``S_k`` of the
    projected weight vectors ``(P_k J_1..P_k J_K, P_k B_1..P_k B_M)``.  The
    input restricted to eigenspace k is ``sqrt(lam_k) * eta_k`` with
    ``eta_k`` isotropic, so a step only needs ``a_k = V_k eta_k ~ N(0, S_k)``
    and ``|eta_k|^2 = |zeta|^2 + chi2(n_k - p)``; the update of ``S_k`` is then
    exact.  Cost O(d (K+M)^2) per step, independent of N.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from . import macro
from .gauss import g, g_prime
from .spectrum import EigenSpectrum, multiplicities, realize_covariance
from .state import OrderParameterState, Trajectory, csv_row_values

_STREAMS = {"weights": 0, "inputs": 1, "init-state": 2}


def seed_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named randomness stream of a run."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAMS[name],)))


@dataclass
class SimConfig:
    N: int
    K: int = 2
    M: int = 2
    eta: float = 0.1
    soft_committee: bool = True
    seed: int = 0
    steps: int = 1000
    record_every: int | None = None

    def __post_init__(self):
        if self.N < max(self.K, self.M):
            raise ValueError("N must be at least max(K, M)")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def every(self) -> int:
        if self.record_every is not None:
            return max(1, int(self.record_every))
        return max(1, self.steps // 2000)


@dataclass
class NetworkWeights:
    J: np.ndarray  # student first layer, K x N
    w: np.ndarray  # student second layer, K
    B: np.ndarray  # teacher first layer, M x N
    v: np.ndarray  # teacher second layer, M

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(self.J.copy(), self.w.copy(), self.B.copy(), self.v.copy())


def init_weights(config: SimConfig, rng_seed=None) -> NetworkWeights:
    """First layers i.i.d. N(0, 1/N); second layers all ones (soft committee) or N(0, 1)."""
    if rng_seed is None:
        rng = seed_stream(config.seed, "weights")
    elif isinstance(rng_seed, np.random.Generator):
        rng = rng_seed
    else:
        rng = np.random.default_rng(rng_seed)
    N, K, M = config.N, config.K, config.M
    scale = 1.0 / math.sqrt(N)
    J = rng.standard_normal((K, N)) * scale
    B = rng.standard_normal((M, N)) * scale
    if config.soft_committee:
        w, v = np.ones(K), np.ones(M)
    else:
        w, v = rng.standard_normal(K), rng.standard_normal(M)
    return NetworkWeights(J, w, B, v)


def forward(weights: NetworkWeights, xi):
    """Return ``(s, t, x, y)``: student and teacher outputs and pre-activations."""
    x = weights.J @ xi
    y = weights.B @ xi
    s = float(weights.w @ g(x))
    t = float(weights.v @ g(y))
    return s, t, x, y


def sgd_step(weights: NetworkWeights, xi, config: SimConfig) -> NetworkWeights:
    """One online SGD step on ``1/2 (s - t)^2`` with learning rate eta / N."""
    s, t, x, _ = forward(weights, xi)
    rate = config.eta / config.N
    err = t - s
    J = weights.J + np.outer(rate * err * weights.w * g_prime(x), xi)
    w = weights.w if config.soft_committee else weights.w + rate * g(x) * err
    return NetworkWeights(J, np.array(w, dtype=float), weights.B, weights.v)


def measure_order_parameters(weights: NetworkWeights, spectrum: EigenSpectrum, N: int,
                             emax: int) -> OrderParameterState:
    """Overlaps ``J Sigma^e J^T`` etc. for e = 0..emax with diagonal Sigma."""
    lam = realize_covariance(spectrum, N)
    J, B = weights.J, weights.B
    Qs, Rs, Ts = [], [], []
    SJ = J
    SB = B
    for e in range(emax + 1):
        if e:
            SJ = SJ * lam
            SB = SB * lam
        Qs.append(J @ SJ.T)
        Rs.append(J @ SB.T)
        Ts.append(B @ SB.T)
    w, v = weights.w, weights.v
    st = OrderParameterState(np.array(Qs), np.array(Rs), np.array(Ts),
                             np.outer(w, w), np.outer(w, v), np.outer(v, v))
    return st.symmetrize()


def block_grams(weights: NetworkWeights, spectrum: EigenSpectrum, N: int) -> np.ndarray:
    """Per-eigenspace Gram matrices of the stacked (J, B) rows, shape (d, K+M, K+M)."""
    counts = multiplicities(spectrum, N)
    V = np.vstack([weights.J, weights.B])
    out = np.empty((spectrum.d, V.shape[0], V.shape[0]))
    start = 0
    for k, n in enumerate(counts):
        blk = V[:, start:start + n]
        out[k] = blk @ blk.T
        start += n
    return out


def _state_from_blocks(S, lam, K, w, v, n_orders):
    grams = np.array([np.tensordot(lam**e, S, axes=1) for e in range(n_orders)])
    return OrderParameterState(grams[:, :K, :K], grams[:, :K, K:], grams[:, K:, K:],
                               np.outer(w, w), np.outer(w, v), np.outer(v, v))


def _eps_g(g1, K, w, v):
    return macro.generalization_error_from_gram(g1, np.outer(w, w), np.outer(w, v),
                                                np.outer(v, v))


# --- engines -----------------------------------------------------------------------

@njit(cache=True)
def _psd_factor(S, out):
    """Lower-triangular L with L L^T = S for PSD S; zero pivots give zero columns."""
    p = S.shape[0]
    scale = 0.0
    for i in range(p):
        scale = max(scale, abs(S[i, i]))
    tiny = 1e-14 * max(scale, 1e-300)
    for j in range(p):
        for i in range(p):
            out[i, j] = 0.0
    for j in range(p):
        acc = S[j, j]
        for k in range(j):
            acc -= out[j, k] * out[j, k]
        if acc <= tiny:
            continue
        piv = math.sqrt(acc)
        out[j, j] = piv
        for i in range(j + 1, p):
            acc = S[i, j]
            for k in range(j):
                acc -= out[i, k] * out[j, k]
            out[i, j] = acc / piv


@njit(cache=True)
def _subspace_run(S, sqrt_lam, w, v, K, soft, rate, zeta, chi):
    d, p = S.shape[0], S.shape[1]
    M = p - K
    L = np.zeros((p, p))
    a = np.zeros((d, p))
    sq = np.zeros(d)
    z = np.zeros(p)
    c = np.zeros(p)
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    gp_norm = math.sqrt(2.0 / math.pi)
    for t in range(zeta.shape[0]):
        for j in range(p):
            z[j] = 0.0
        for k in range(d):
            _psd_factor(S[k], L)
            nz = 0.0
            for i in range(p):
                acc = 0.0
                for j in range(i + 1):
                    acc += L[i, j] * zeta[t, k, j]
                a[k, i] = acc
                nz += zeta[t, k, i] * zeta[t, k, i]
                z[i] += sqrt_lam[k] * acc
            sq[k] = nz + chi[t, k]
        s_out = 0.0
        for i in range(K):
            s_out += w[i] * math.erf(z[i] * inv_sqrt2)
        t_out = 0.0
        for n in range(M):
            t_out += v[n] * math.erf(z[K + n] * inv_sqrt2)
        err = t_out - s_out
        for k in range(d):
            for i in range(p):
                c[i] = 0.0
            for i in range(K):
                c[i] = rate * err * w[i] * gp_norm * math.exp(-0.5 * z[i] * z[i]) * sqrt_lam[k]
            for i in range(p):
                for j in range(p):
                    S[k, i, j] += c[i] * a[k, j] + a[k, i] * c[j] + sq[k] * c[i] * c[j]
        if not soft:
            for i in range(K):
                w[i] += rate * math.erf(z[i] * inv_sqrt2) * err


def _subspace_update_from_projections(S, sqrt_lam, w, v, K, soft, rate, a, sq):
    """Pure-numpy single step given explicit projections (used to cross-check engines)."""
    d, p = S.shape[0], S.shape[1]
    z = np.tensordot(sqrt_lam, a, axes=1)
    x, y = z[:K], z[K:]
    err = float(v @ g(y) - w @ g(x))
    S = S.copy()
    for k in range(d):
        c = np.zeros(p)
        c[:K] = rate * err * w * g_prime(x) * sqrt_lam[k]
        S[k] += np.outer(c, a[k]) + np.outer(a[k], c) + sq[k] * np.outer(c, c)
    w = w if soft else w + rate * g(x) * err
    return S, w


def run_micro(config: SimConfig, spectrum: EigenSpectrum, weights: NetworkWeights | None = None,
              engine: str = "weights", chunk: int = 256) -> Trajectory:
    """Simulate ``config.steps`` SGD steps, recording alpha = step / N and eps_g.

    eps_g is evaluated exactly from the measured order-1 overlaps (no test
    sampling).  ``weights`` defaults to :func:`init_weights` on the config's
    weight stream; inputs come from the config's input stream.
    """
    if weights is None:
        weights = init_weights(config)
    if engine == "weights":
        return _run_weights(config, spectrum, weights.copy(), chunk)
    if engine == "subspace":
        return _run_subspace(config, spectrum, weights)
    raise ValueError(f"unknown engine {engine!r}")


def _record(traj, step, N, g1, K, w, v, D=None):
    traj["alpha"].append(step / N)
    traj["eps"].append(_eps_g(g1, K, w, v))
    q1, r1 = g1[:K, :K], g1[:K, K:]
    traj["rows"].append(csv_row_values(q1, r1, np.outer(w, w), np.outer(w, v)))


def _run_weights(config, spectrum, wts, chunk):
    N, K = config.N, config.K
    lam = realize_covariance(spectrum, N)
    sd = np.sqrt(lam)
    rng = seed_stream(config.seed, "inputs")
    rate = config.eta / N
    every = config.every
    rec = {"alpha": [], "eps": [], "rows": []}

    def snapshot(step):
        V = np.vstack([wts.J, wts.B])
        g1 = (V * lam) @ V.T
        _record(rec, step, N, g1, K, wts.w, wts.v)

    snapshot(0)
    J, w, B, v = wts.J, wts.w, wts.B, wts.v
    step = 0
    while step < config.steps:
        n = min(chunk, config.steps - step)
        xis = rng.standard_normal((n, N)) * sd
        for xi in xis:
            x = J @ xi
            y = B @ xi
            gx = g(x)
            err = float(v @ g(y) - w @ gx)
            J += np.outer(rate * err * w * g_prime(x), xi)
            if not config.soft_committee:
                w += rate * gx * err
            step += 1
            if step % every == 0 or step == config.steps:
                snapshot(step)
    return Trajectory(np.array(rec["alpha"]), np.array(rec["eps"]), K, config.M, rec["rows"])


def _run_subspace(config, spectrum, weights):
    N, K, M = config.N, config.K, config.M
    p = K + M
    counts = multiplicities(spectrum, N)
    if np.any(counts < p):
        raise ValueError("subspace engine needs every eigenspace dimension >= K + M")
    lam = np.asarray(spectrum.eigenvalues, dtype=float)
    sqrt_lam = np.sqrt(lam)
    S = block_grams(weights, spectrum, N)
    w = weights.w.astype(float).copy()
    v = weights.v.astype(float).copy()
    rng = seed_stream(config.seed, "inputs")
    rate = config.eta / N
    every = config.every
    dof = (counts - p).astype(float)
    rec = {"alpha": [], "eps": [], "rows": []}
    _record(rec, 0, N, np.tensordot(lam, S, axes=1), K, w, v)
    step = 0
    while step < config.steps:
        n = min(every - step % every, config.steps - step)
        zeta = rng.standard_normal((n, spectrum.d, p))
        chi = np.zeros((n, spectrum.d))
        live = dof > 0  # chisquare rejects zero degrees of freedom
        chi[:, live] = rng.chisquare(np.broadcast_to(dof[live], (n, int(live.sum()))))
        _subspace_run(S, sqrt_lam, w, v, K, config.soft_committee, rate, zeta, chi)
        step += n
        if step % every == 0 or step == config.steps:
            _record(rec, step, N, np.tensordot(lam, S, axes=1), K, w, v)
    return Trajectory(np.array(rec["alpha"]), np.array(rec["eps"]), K, M, rec["rows"])


def with_steps_for_alpha(config: SimConfig, alpha_end: float) -> SimConfig:
    return replace(config, steps=max(1, int(round(alpha_end * config.N))))
