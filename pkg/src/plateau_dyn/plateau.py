"""Plateau length and height from a learning curve.

A record counts as plateauing when the local decrease rate of ``ln eps_g``
is below half of the terminal convergence rate.  The plateau is the longest
contiguous run of such records; its height is the median loss over the run.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateTerminal, TooShort

MIN_POINTS = 16
TERMINAL_EPS = 1e-14


@dataclass(frozen=True)
class PlateauParams:
    window: int = 31
    terminal_fraction: float = 0.1
    min_points: int = 5
    threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.terminal_fraction <= 0.5:
            raise ValueError("terminal_fraction must lie in (0, 0.5]")
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")


@dataclass
class PlateauReport:
    found: bool
    start_alpha: float = float("nan")
    end_alpha: float = float("nan")
    length: float = 0.0
    height: float = float("nan")
    terminal_speed: float = float("nan")
    params: dict = field(default_factory=dict)
    runs: list = field(default_factory=list)  # every qualifying (start, end) pair
    diagnostic: str = ""

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("runs", "diagnostic")}
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                for k, v in out.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _validate(alpha, eps):
    alpha = np.asarray(alpha, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if alpha.ndim != 1 or alpha.shape != eps.shape:
        raise ValueError("alpha and eps_g must be 1-D arrays of equal length")
    if alpha.size < MIN_POINTS:
        raise TooShort(f"need at least {MIN_POINTS} records, got {alpha.size}")
    if np.any(np.diff(alpha) <= 0):
        raise ValueError("alpha must be strictly increasing")
    if not np.all(np.isfinite(eps)) or np.any(eps <= 0):
        raise ValueError("eps_g must be finite and positive")
    return alpha, eps


def _curve(traj):
    if isinstance(traj, tuple):
        return traj
    return traj.alpha, traj.eps_g


def log_loss_slope(traj, window: int = 31):
    """Least-squares slope of ln(eps_g) against alpha in a centred sliding window.

    Near the ends the window is truncated to the available records.  Returns
    ``(alpha, slope)`` arrays.
    """
    alpha, eps = _validate(*_curve(traj))
    n = alpha.size
    if window % 2 == 0 or window < 3:
        raise ValueError("window must be odd and >= 3")
    if window > n // 4:
        raise TooShort(f"window {window} exceeds a quarter of the {n} records")
    y = np.log(eps)
    half = window // 2
    slope = np.empty(n)
    for k in range(n):
        lo, hi = max(0, k - half), min(n, k + half + 1)
        x = alpha[lo:hi] - alpha[lo:hi].mean()
        slope[k] = np.dot(x, y[lo:hi] - y[lo:hi].mean()) / np.dot(x, x)
    return alpha, slope


def terminal_speed(slope, terminal_fraction: float = 0.1) -> float:
    n_term = max(1, int(np.ceil(terminal_fraction * slope.size)))
    speed = float(np.median(np.abs(slope[-n_term:])))
    if speed < TERMINAL_EPS:
        raise DegenerateTerminal(f"terminal log-loss speed {speed!r} ~ 0; loss not converging")
    return speed


def _runs(mask):
    """(start, stop) index pairs of contiguous True stretches, stop exclusive."""
    padded = np.concatenate([[False], mask, [False]]).astype(int)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2], edges[1::2]))


def detect_plateau(traj, params: PlateauParams | None = None, **overrides) -> PlateauReport:
    """Locate the plateau of a learning curve.

    ``traj`` is a :class:`~plateau_dyn.state.Trajectory` or an
    ``(alpha, eps_g)`` tuple.  Keyword overrides replace fields of ``params``.
    """
    params = params or PlateauParams()
    if overrides:
        params = PlateauParams(**{**asdict(params), **overrides})
    alpha, eps = _validate(*_curve(traj))
    _, slope = log_loss_slope((alpha, eps), params.window)
    n = alpha.size
    n_term = max(1, int(np.ceil(params.terminal_fraction * n)))
    pdict = asdict(params)
    try:
        speed = terminal_speed(slope, params.terminal_fraction)
    except DegenerateTerminal as exc:
        return PlateauReport(False, params=pdict, diagnostic=str(exc))

    mask = np.abs(slope) < params.threshold * speed
    mask[:params.window] = False  # truncated-window transient
    mask[n - n_term:] = False
    runs = [(a, b) for a, b in _runs(mask) if b - a >= params.min_points]
    run_alphas = [(float(alpha[a]), float(alpha[b - 1])) for a, b in runs]
    if not runs:
        return PlateauReport(False, terminal_speed=speed, params=pdict,
                             diagnostic="no qualifying plateau run")
    a, b = max(runs, key=lambda r: (alpha[r[1] - 1] - alpha[r[0]], -r[0]))
    start, end = float(alpha[a]), float(alpha[b - 1])
    return PlateauReport(True, start, end, end - start, float(np.median(eps[a:b])), speed,
                         pdict, run_alphas)
