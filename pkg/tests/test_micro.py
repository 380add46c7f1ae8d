import numpy as np
import pytest

from plateau_dyn import micro
from plateau_dyn.spectrum import multiplicities, parse_spectrum, realize_covariance

SPEC = parse_spectrum("0.4:0.5,1.2:0.3,1.6:0.2")


def _loss(J, w, B, v, xi):
    s = w @ micro.g(J @ xi)
    t = v @ micro.g(B @ xi)
    return 0.5 * (s - t) ** 2


def test_sgd_step_is_a_gradient_step():
    cfg = micro.SimConfig(N=12, eta=0.7, soft_committee=False, seed=4)
    wts = micro.init_weights(cfg)
    xi = np.random.default_rng(0).standard_normal(cfg.N)
    new = micro.sgd_step(wts, xi, cfg)
    h = 1e-6
    grad = np.zeros_like(wts.J)
    for idx in np.ndindex(*wts.J.shape):
        Jp, Jm = wts.J.copy(), wts.J.copy()
        Jp[idx] += h
        Jm[idx] -= h
        grad[idx] = (_loss(Jp, wts.w, wts.B, wts.v, xi) - _loss(Jm, wts.w, wts.B, wts.v, xi)) / (2 * h)
    assert np.allclose(new.J - wts.J, -cfg.eta / cfg.N * grad, atol=1e-9)
    gw = np.array([(_loss(wts.J, wts.w + h * e, wts.B, wts.v, xi)
                    - _loss(wts.J, wts.w - h * e, wts.B, wts.v, xi)) / (2 * h) for e in np.eye(cfg.K)])
    assert np.allclose(new.w - wts.w, -cfg.eta / cfg.N * gw, atol=1e-9)


def test_teacher_and_soft_committee_weights_never_move():
    cfg = micro.SimConfig(N=50, seed=2)
    wts = micro.init_weights(cfg)
    before = wts.copy()
    new = micro.sgd_step(wts, np.ones(cfg.N), cfg)
    assert np.array_equal(new.B, before.B) and np.array_equal(new.v, before.v)
    assert np.array_equal(new.w, np.ones(cfg.K))
    micro.run_micro(cfg, SPEC, wts, engine="weights")
    assert np.array_equal(wts.J, before.J)  # caller's weights are not mutated


def test_weights_engine_matches_step_by_step():
    cfg = micro.SimConfig(N=30, steps=40, record_every=1, seed=9)
    traj = micro.run_micro(cfg, SPEC, engine="weights", chunk=7)
    wts = micro.init_weights(cfg)
    lam = realize_covariance(SPEC, cfg.N)
    rng = micro.seed_stream(cfg.seed, "inputs")
    xis = rng.standard_normal((cfg.steps, cfg.N)) * np.sqrt(lam)
    for xi in xis:
        wts = micro.sgd_step(wts, xi, cfg)
    V = np.vstack([wts.J, wts.B])
    g1 = (V * lam) @ V.T
    assert traj.eps_g[-1] == pytest.approx(micro._eps_g(g1, cfg.K, wts.w, wts.v), rel=1e-10)


@pytest.mark.parametrize("soft", [True, False])
def test_subspace_update_reproduces_weight_update(soft):
    cfg = micro.SimConfig(N=40, eta=0.5, soft_committee=soft, seed=3)
    wts = micro.init_weights(cfg)
    lam = np.asarray(SPEC.eigenvalues)
    counts = multiplicities(SPEC, cfg.N)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    S = micro.block_grams(wts, SPEC, cfg.N)
    w = wts.w.copy()
    rng = np.random.default_rng(1)
    for _ in range(25):
        eta_vec = rng.standard_normal(cfg.N)
        xi = eta_vec * np.repeat(np.sqrt(lam), counts)
        V = np.vstack([wts.J, wts.B])
        a = np.array([V[:, bounds[k]:bounds[k + 1]] @ eta_vec[bounds[k]:bounds[k + 1]] for k in range(SPEC.d)])
        sq = np.array([eta_vec[bounds[k]:bounds[k + 1]] @ eta_vec[bounds[k]:bounds[k + 1]] for k in range(SPEC.d)])
        S, w = micro._subspace_update_from_projections(S, np.sqrt(lam), w, wts.v, cfg.K, soft,
                                                       cfg.eta / cfg.N, a, sq)
        wts = micro.sgd_step(wts, xi, cfg)
    assert np.allclose(S, micro.block_grams(wts, SPEC, cfg.N), atol=1e-12)
    assert np.allclose(w, wts.w, atol=1e-13)


def test_compiled_kernel_matches_numpy_step():
    cfg = micro.SimConfig(N=60, eta=0.3, soft_committee=False, seed=5)
    wts = micro.init_weights(cfg)
    S = micro.block_grams(wts, SPEC, cfg.N)
    lam = np.asarray(SPEC.eigenvalues)
    rng = np.random.default_rng(2)
    zeta = rng.standard_normal((1, SPEC.d, 4))
    chi = rng.chisquare(5.0, size=(1, SPEC.d))
    a = np.array([np.linalg.cholesky(S[k]) @ zeta[0, k] for k in range(SPEC.d)])
    sq = (zeta[0] ** 2).sum(axis=1) + chi[0]
    S_ref, w_ref = micro._subspace_update_from_projections(S, np.sqrt(lam), wts.w.copy(), wts.v, 2,
                                                           False, cfg.eta / cfg.N, a, sq)
    S_run, w_run = S.copy(), wts.w.copy()
    micro._subspace_run(S_run, np.sqrt(lam), w_run, wts.v, 2, False, cfg.eta / cfg.N, zeta, chi)
    assert np.allclose(S_run, S_ref, atol=1e-14)
    assert np.allclose(w_run, w_ref, atol=1e-14)


def test_engines_agree_in_distribution():
    # 24 seeds per engine at N=200; mean eps_g at alpha=15 within 4 combined SE
    finals = {"weights": [], "subspace": []}
    for engine in finals:
        for seed in range(24):
            cfg = micro.SimConfig(N=200, seed=seed, eta=0.5, steps=3000)
            finals[engine].append(micro.run_micro(cfg, SPEC, engine=engine).eps_g[-1])
    a, b = (np.array(finals[k]) for k in ("weights", "subspace"))
    se = np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    assert abs(a.mean() - b.mean()) < 4 * se


@pytest.mark.parametrize("engine", ["weights", "subspace"])
def test_runs_are_deterministic(engine):
    cfg = micro.SimConfig(N=100, seed=7, steps=500)
    t1 = micro.run_micro(cfg, SPEC, engine=engine)
    t2 = micro.run_micro(cfg, SPEC, engine=engine)
    assert np.array_equal(t1.eps_g, t2.eps_g)
    other = micro.run_micro(micro.SimConfig(N=100, seed=8, steps=500), SPEC, engine=engine)
    assert not np.array_equal(t1.eps_g, other.eps_g)


def test_subspace_engine_handles_tight_eigenspaces():
    spec = parse_spectrum("1.0:0.5,2.0:0.5")
    cfg = micro.SimConfig(N=8, steps=50)  # each eigenspace has exactly K + M = 4 dimensions
    assert np.all(np.isfinite(micro.run_micro(cfg, spec, engine="subspace").eps_g))
    with pytest.raises(ValueError):
        micro.run_micro(micro.SimConfig(N=6, steps=5), spec, engine="subspace")


def test_measured_initial_overlaps_have_expected_scale():
    cfg = micro.SimConfig(N=20_000, seed=0)
    st = micro.measure_order_parameters(micro.init_weights(cfg), SPEC, cfg.N, 1)
    assert np.allclose(np.diag(st.Q[1]), SPEC.moment(1), atol=0.05)
    assert np.abs(st.R[0]).max() < 0.05


def test_invalid_config():
    with pytest.raises(ValueError):
        micro.SimConfig(N=1, K=2)
    with pytest.raises(ValueError):
        micro.run_micro(micro.SimConfig(N=10, steps=1), SPEC, engine="gpu")
