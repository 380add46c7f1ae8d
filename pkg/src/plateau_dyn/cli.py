"""``plateau-dyn`` command line interface.

Settings resolve in three layers: built-in defaults, then an optional
``--config`` file of ``key = value`` lines, then explicit flags.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, gauss, macro, micro
from .errors import InvalidDelta, NonFinite, PlateauDynError
from .plateau import PlateauParams, detect_plateau
from .spectrum import (empirical_spectrum_from_data, format_spectrum, parse_spectrum,
                       scalar_spectrum, two_point_spectrum)
from .state import OrderParameterState, Trajectory

log = logging.getLogger("plateau_dyn")

MODES = ("micro", "macro", "compare", "sweep-mu1", "sweep-mu2", "analyze-dataset", "gauss-check")


@dataclass
class ExperimentConfig:
    mode: str = "macro"
    spectrum: str = "1.0:1.0"
    K: int = 2
    M: int = 2
    eta: float = 0.1
    N: int = 10_000
    n_effective: float = 1e5
    t_end: float | None = None
    dt: float | None = None
    seeds: list = field(default_factory=lambda: [0])
    weight_seed: int | None = None
    soft_committee: bool = True
    engine: str = "subspace"
    window: int = 31
    terminal_fraction: float = 0.1
    min_points: int = 5
    stop_below: float = 1e-10
    grid: list | None = None
    mu1: float = 1.0
    micro: bool = False
    record_every: int | None = None
    out: str = "out"
    jobs: int = 1
    # analyze-dataset / gauss-check
    path: str | None = None
    scale: float | None = None
    center: bool = False
    max_distinct: int = 8
    n_matrices: int = 100
    samples: int = 1_000_000
    resume: str | None = None

    def validate(self):
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r}")
        if not self.seeds:
            raise UsageError("seeds must be non-empty")
        if self.grid is not None and any(v < 0 for v in self.grid):
            raise UsageError("grid values must be non-negative")
        if self.eta < 0 or self.K < 1 or self.M < 1 or self.jobs < 1:
            raise UsageError("eta must be >= 0, K, M and jobs >= 1")
        return self

    def digest(self) -> str:
        # output location and parallelism do not change results
        data = {k: v for k, v in asdict(self).items() if k not in ("out", "jobs")}
        blob = json.dumps(data, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def provenance(self) -> list:
        return [f"plateau-dyn {__version__}", f"mode={self.mode}",
                f"config_sha256={self.digest()}", f"seeds={','.join(map(str, self.seeds))}"]

    @property
    def plateau_params(self) -> PlateauParams:
        return PlateauParams(self.window, self.terminal_fraction, self.min_points)


class UsageError(PlateauDynError):
    pass


# --- config resolution ------------------------------------------------------------

_LIST_KEYS = {"seeds": int, "grid": float}


def _coerce(key, raw):
    ftypes = {f.name: f.type for f in fields(ExperimentConfig)}
    if key not in ftypes:
        raise UsageError(f"unknown config key {key!r}")
    if raw is None or isinstance(raw, (list, bool, int, float)) and not isinstance(raw, str):
        return raw
    text = str(raw).strip()
    if key in _LIST_KEYS:
        return [_LIST_KEYS[key](v) for v in text.replace(" ", "").split(",") if v]
    t = ftypes[key]
    if "bool" in t:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {text!r}")
    try:
        if t.startswith("int"):
            return int(float(text)) if "e" in text.lower() else int(text)
        if t.startswith("float"):
            return float(text)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {text!r}") from None
    return text


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key == "n_eff":
                key = "n_effective"
            out[key] = _coerce(key, value.strip("\"'"))
    return out


def resolve_config(mode: str, flags: dict, config_path=None) -> ExperimentConfig:
    values = {}
    if config_path:
        values.update(read_config_file(config_path))
    for key, value in flags.items():
        if value is not None:
            values[key] = _coerce(key, value)
    values["mode"] = mode
    if mode == "sweep-mu1" and values.get("grid") is None:
        values["grid"] = [0.5, 1.0, 2.0, 4.0]
    if mode == "sweep-mu2" and values.get("grid") is None:
        values["grid"] = [0.0, 0.5, 1.0, 1.5]
    return ExperimentConfig(**values).validate()


# --- helpers -------------------------------------------------------------------------

def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _write_table(path, columns, rows, header_lines):
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _label(x: float) -> str:
    return f"{x:g}".replace(".", "p").replace("-", "m")


# --- commands ------------------------------------------------------------------------

def cmd_micro(cfg: ExperimentConfig) -> dict:
    spec = parse_spectrum(cfg.spectrum)
    out = _out_dir(cfg)
    t_end = cfg.t_end if cfg.t_end is not None else 100.0
    results = {}
    for seed in cfg.seeds:
        sim = micro.SimConfig(cfg.N, cfg.K, cfg.M, cfg.eta, cfg.soft_committee, seed,
                              max(1, int(round(t_end * cfg.N))), cfg.record_every)
        traj = micro.run_micro(sim, spec, engine=cfg.engine)
        name = "micro.csv" if len(cfg.seeds) == 1 else f"micro_seed{seed}.csv"
        traj.to_csv(out / name, cfg.provenance())
        results[seed] = traj
    return results


def _macro_config(cfg, spec, t_end, record_every=None):
    return macro.MacroConfig(cfg.eta, spec, cfg.soft_committee, t_end, cfg.dt,
                             record_every if record_every is not None else cfg.record_every)


def cmd_macro(cfg: ExperimentConfig) -> dict:
    spec = parse_spectrum(cfg.spectrum)
    out = _out_dir(cfg)
    t_end = cfg.t_end if cfg.t_end is not None else 2000.0
    results = {}
    for seed in cfg.seeds:
        if cfg.resume:
            state0 = OrderParameterState.from_json(Path(cfg.resume).read_text())
        else:
            state0 = macro.random_initial_state(spec, cfg.K, cfg.M, cfg.n_effective,
                                                micro.seed_stream(seed, "init-state"),
                                                soft_committee=cfg.soft_committee)
        mcfg = _macro_config(cfg, spec, t_end)
        final = {}
        keep_final = lambda a, e, st: final.update(state=st)  # noqa: E731
        if cfg.dt is None:
            traj, mcfg = macro.integrate_converged(state0, mcfg, recorder=keep_final)
            log.info("accepted dt = %g", mcfg.dt)
        else:
            traj = macro.integrate(state0, mcfg, recorder=keep_final)
        suffix = "" if len(cfg.seeds) == 1 else f"_seed{seed}"
        traj.to_csv(out / f"macro{suffix}.csv", cfg.provenance())
        (out / f"final_state{suffix}.json").write_text(final["state"].to_json() + "\n")
        try:
            report = detect_plateau(traj, cfg.plateau_params).to_dict()
        except PlateauDynError as exc:
            report = {"found": False, "error": str(exc)}
        _write_json(out / f"plateau{suffix}.json", report)
        results[seed] = traj
    return results


def log10_gap(traj_a: Trajectory, traj_b: Trajectory, n_grid: int = 1000):
    """Max and mean of |log10 eps_a - log10 eps_b| on a shared alpha grid."""
    hi = min(traj_a.alpha[-1], traj_b.alpha[-1])
    grid = np.linspace(0.0, hi, n_grid)
    a = np.interp(grid, traj_a.alpha, traj_a.eps_g)
    b = np.interp(grid, traj_b.alpha, traj_b.eps_g)
    gap = np.abs(np.log10(a) - np.log10(b))
    return float(gap.max()), float(gap.mean())


def cmd_compare(cfg: ExperimentConfig) -> dict:
    """Micro SGD and macro ODE from identical initial weights; log-gap report."""
    spec = parse_spectrum(cfg.spectrum)
    out = _out_dir(cfg)
    t_end = cfg.t_end if cfg.t_end is not None else 2500.0
    steps = max(1, int(round(t_end * cfg.N)))
    report = {"spectrum": format_spectrum(spec), "K": cfg.K, "M": cfg.M, "eta": cfg.eta,
              "N": cfg.N, "t_end": t_end, "engine": cfg.engine, "runs": []}
    shared = cfg.weight_seed is not None
    macro_traj = None
    for seed in cfg.seeds:
        sim = micro.SimConfig(cfg.N, cfg.K, cfg.M, cfg.eta, cfg.soft_committee, seed, steps,
                              cfg.record_every)
        # a fixed weight seed gives every run the same initial state and one macro curve
        weights = micro.init_weights(sim, micro.seed_stream(cfg.weight_seed, "weights") if shared else None)
        micro_traj = micro.run_micro(sim, spec, weights, engine=cfg.engine)
        suffix = "" if len(cfg.seeds) == 1 else f"_seed{seed}"
        if macro_traj is None or not shared:
            state0 = micro.measure_order_parameters(weights, spec, cfg.N, spec.d - 1)
            macro_traj = macro.integrate(state0, _macro_config(cfg, spec, t_end))
            macro_traj.to_csv(out / ("macro.csv" if shared else f"macro{suffix}.csv"), cfg.provenance())
        micro_traj.to_csv(out / f"micro{suffix}.csv", cfg.provenance())
        gmax, gmean = log10_gap(micro_traj, macro_traj)
        report["runs"].append({"seed": seed, "max_abs_log10_gap": gmax,
                               "mean_abs_log10_gap": gmean,
                               "eps_g_initial": float(macro_traj.eps_g[0]),
                               "eps_g_final_micro": float(micro_traj.eps_g[-1]),
                               "eps_g_final_macro": float(macro_traj.eps_g[-1])})
    report["max_abs_log10_gap"] = max(r["max_abs_log10_gap"] for r in report["runs"])
    report["mean_abs_log10_gap"] = max(r["mean_abs_log10_gap"] for r in report["runs"])
    _write_json(out / "compare_report.json", report)
    return report


def _sweep_point(task):
    """One grid point of a sweep; runs in a worker process when --jobs > 1."""
    cfg, spec_text, key, value, seed, curve_path = task
    spec = parse_spectrum(spec_text)
    state0 = macro.random_initial_state(spec, cfg.K, cfg.M, cfg.n_effective,
                                        micro.seed_stream(seed, "init-state"),
                                        soft_committee=cfg.soft_committee)
    t_end = cfg.t_end if cfg.t_end is not None else 50_000.0
    mcfg = _macro_config(cfg, spec, t_end, cfg.record_every or 1)
    traj = macro.integrate(state0, mcfg, stop_below=cfg.stop_below)
    traj.to_csv(curve_path, cfg.provenance() + [f"{key}={value!r}", f"spectrum={spec_text}"])
    rep = detect_plateau(traj, cfg.plateau_params)
    row = {key: value, "seed": seed, "mu2": spec.moment(2), "found": rep.found, "length": rep.length, "height": rep.height,
           "start_alpha": rep.start_alpha, "end_alpha": rep.end_alpha,
           "terminal_speed": rep.terminal_speed}
    if cfg.micro:
        steps = max(1, int(round(float(traj.alpha[-1]) * cfg.N)))
        sim = micro.SimConfig(cfg.N, cfg.K, cfg.M, cfg.eta, cfg.soft_committee, seed, steps)
        mtraj = micro.run_micro(sim, spec, engine=cfg.engine)
        mtraj.to_csv(str(curve_path).replace(".csv", "_micro.csv"), cfg.provenance())
        try:
            row["micro_length"] = detect_plateau(mtraj, cfg.plateau_params).length
        except PlateauDynError:
            row["micro_length"] = float("nan")
    return row


def _run_sweep(cfg, tasks):
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]


def cmd_sweep_mu1(cfg: ExperimentConfig) -> list:
    out = _out_dir(cfg)
    (out / "curves").mkdir(exist_ok=True)
    tasks = []
    for mu1 in cfg.grid:
        if mu1 <= 0:
            raise UsageError("mu1 grid values must be positive")
        spec = scalar_spectrum(mu1)
        for seed in cfg.seeds:
            path = out / "curves" / f"mu1_{_label(mu1)}_seed{seed}.csv"
            tasks.append((cfg, format_spectrum(spec), "mu1", mu1, seed, path))
    rows = _run_sweep(cfg, tasks)
    cols = ["mu1", "seed", "length", "height", "found", "start_alpha", "end_alpha",
            "terminal_speed"] + (["micro_length"] if cfg.micro else [])
    _write_table(out / "plateau_table.csv", cols, rows, cfg.provenance())
    return rows


def cmd_sweep_mu2(cfg: ExperimentConfig) -> list:
    out = _out_dir(cfg)
    (out / "curves").mkdir(exist_ok=True)
    tasks = []
    for delta in cfg.grid:
        if delta >= 2 * cfg.mu1:
            raise InvalidDelta(f"delta_lambda={delta} >= 2*mu1={2 * cfg.mu1} gives a negative eigenvalue")
        spec = two_point_spectrum(cfg.mu1, delta)
        for seed in cfg.seeds:
            path = out / "curves" / f"dl_{_label(delta)}_seed{seed}.csv"
            tasks.append((cfg, format_spectrum(spec), "delta_lambda", delta, seed, path))
    rows = _run_sweep(cfg, tasks)
    cols = ["delta_lambda", "mu2", "seed", "length", "height", "found", "start_alpha",
            "end_alpha", "terminal_speed"] + (["micro_length"] if cfg.micro else [])
    _write_table(out / "plateau_table.csv", cols, rows, cfg.provenance())
    return rows


def load_dataset(path) -> np.ndarray:
    """Headerless CSV (one sample per row) or a .npy/.npz array file."""
    path = Path(path)
    if path.suffix == ".npy":
        data = np.load(path)
    elif path.suffix == ".npz":
        with np.load(path) as z:
            key = "x_train" if "x_train" in z else z.files[0]
            data = z[key]
    else:
        rows = []
        width = None
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    vals = [float(v) for v in line.split(",")]
                except ValueError:
                    raise UsageError(f"{path}:{lineno}: non-numeric value in {line[:60]!r}") from None
                if width is None:
                    width = len(vals)
                elif len(vals) != width:
                    raise UsageError(f"{path}:{lineno}: expected {width} columns, got {len(vals)}")
                rows.append(vals)
        data = np.array(rows, dtype=float)
    data = np.asarray(data, dtype=float)
    return data.reshape(data.shape[0], -1)


def analyze_array(data, scale=None, center=False, max_distinct=8) -> dict:
    x = np.asarray(data, dtype=float)
    if scale is not None:
        x = x * scale
    mu, spec = empirical_spectrum_from_data(x, max_distinct, center=center)
    lam = spec.eigenvalues
    report = {
        "n_samples": int(x.shape[0]), "dimension": int(x.shape[1]),
        "normalization": "centered covariance (1/n)" if center else "uncentered second moment (1/n)",
        "scale": scale,
        "mu": {str(e): float(mu[e]) for e in range(1, 5)},
        "eigenvalue_summary": {"bins": spec.d, "min_bin": float(min(lam)),
                               "max_bin": float(max(lam))},
        "spectrum": format_spectrum(spec),
        "warnings": [],
    }
    if mu[1] == 0.0:
        report["warnings"].append("degenerate data: all eigenvalues are zero")
    return report


def cmd_analyze_dataset(cfg: ExperimentConfig) -> dict:
    if not cfg.path:
        raise UsageError("analyze-dataset needs a dataset path")
    data = load_dataset(cfg.path)
    report = analyze_array(data, cfg.scale, cfg.center, cfg.max_distinct)
    report["path"] = str(cfg.path)
    for w in report["warnings"]:
        log.warning(w)
    out = _out_dir(cfg)
    _write_json(out / "moments_report.json", report)
    return report


def gauss_check(n_matrices=100, samples=10**6, seed=0) -> dict:
    """Closed form vs Monte Carlo on random covariances: worst |diff| / SE per kernel."""
    rng = np.random.default_rng(seed)
    kernels = {"I2": (2, gauss.i2), "I3": (3, gauss.i3), "I4": (4, gauss.i4)}
    table = {}
    for name, (order, fn) in kernels.items():
        worst = 0.0
        for _ in range(n_matrices):
            C = gauss.random_psd(order, rng)
            est, se = gauss.mc_expectation(name, C, samples, int(rng.integers(2**31)))
            worst = max(worst, abs(fn(C) - est) / se)
        table[name] = worst
    return table


def cmd_gauss_check(cfg: ExperimentConfig) -> dict:
    table = gauss_check(cfg.n_matrices, cfg.samples, cfg.seeds[0])
    print(f"{'kernel':<8}{'max |delta|/SE':>16}")
    for name, worst in table.items():
        print(f"{name:<8}{worst:>16.3f}")
    out = _out_dir(cfg)
    _write_json(out / "gauss_check.json", table)
    if any(v > 4.0 for v in table.values()):
        raise NumericalCheckFailed("closed form disagrees with Monte Carlo beyond 4 SE")
    return table


class NumericalCheckFailed(PlateauDynError):
    pass


COMMANDS = {
    "micro": cmd_micro, "macro": cmd_macro, "compare": cmd_compare,
    "sweep-mu1": cmd_sweep_mu1, "sweep-mu2": cmd_sweep_mu2,
    "analyze-dataset": cmd_analyze_dataset, "gauss-check": cmd_gauss_check,
}


# --- argument parsing ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plateau-dyn",
                     description="Student-teacher learning dynamics: SGD, order-parameter ODEs, plateaus.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="mode", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value settings file (flags override it)")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--seeds", help="comma-separated integer seeds")
        p.add_argument("-v", "--verbose", action="store_true")

    def model(p):
        p.add_argument("--spectrum", help='eigenvalue:fraction pairs, e.g. "0.4:0.5,1.2:0.3,1.6:0.2"')
        p.add_argument("--eta", type=float)
        p.add_argument("--K", type=int)
        p.add_argument("--M", type=int)
        p.add_argument("--N", type=int, help="input dimension (micro)")
        p.add_argument("--n-effective", dest="n_effective", type=float,
                       help="dimension used for random macro initial states")
        p.add_argument("--t-end", dest="t_end", type=float, help="horizon in alpha = steps / N")
        p.add_argument("--dt", type=float, help="RK4 step in alpha")
        p.add_argument("--record-every", dest="record_every", type=int)
        p.add_argument("--engine", choices=["weights", "subspace"], help="micro engine")
        p.add_argument("--train-second-layer", dest="soft_committee", action="store_const",
                       const=False, help="learn w (default: soft committee, w = v = 1)")
        p.add_argument("--window", type=int)
        p.add_argument("--terminal-fraction", dest="terminal_fraction", type=float)
        p.add_argument("--min-points", dest="min_points", type=int)
        p.add_argument("--jobs", type=int)

    for name in ("micro", "macro", "compare"):
        p = sub.add_parser(name)
        common(p)
        model(p)
        if name == "compare":
            p.add_argument("--weight-seed", dest="weight_seed", type=int,
                           help="draw initial weights from this seed for every run (inputs still follow --seeds)")
        if name == "macro":
            p.add_argument("--resume", help="initial state JSON (from final_state.json)")
    for name in ("sweep-mu1", "sweep-mu2"):
        p = sub.add_parser(name)
        common(p)
        model(p)
        p.add_argument("--grid", help="comma-separated mu1 values (sweep-mu1) or delta-lambda values")
        p.add_argument("--stop-below", dest="stop_below", type=float)
        p.add_argument("--micro", action="store_const", const=True,
                       help="also run the SGD simulator at every grid point")
        if name == "sweep-mu2":
            p.add_argument("--mu1", type=float)
    p = sub.add_parser("analyze-dataset")
    common(p)
    p.add_argument("path", nargs="?")
    p.add_argument("--scale", type=float, help="multiply data by this factor first (e.g. 1/255)")
    p.add_argument("--center", action="store_const", const=True,
                   help="use the mean-centred covariance instead of the raw second moment")
    p.add_argument("--max-distinct", dest="max_distinct", type=int)
    p = sub.add_parser("gauss-check")
    common(p)
    p.add_argument("--n-matrices", dest="n_matrices", type=int)
    p.add_argument("--samples", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("mode", "config", "verbose")}
    try:
        cfg = resolve_config(args.mode, flags, args.config)
        result = COMMANDS[cfg.mode](cfg)
    except (UsageError, InvalidDelta, OSError) as exc:
        print(f"plateau-dyn: error: {exc}", file=sys.stderr)
        return 1
    except (NonFinite, NumericalCheckFailed, PlateauDynError, FloatingPointError) as exc:
        print(f"plateau-dyn: numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"plateau-dyn: error: {exc}", file=sys.stderr)
        return 1
    if cfg.mode in ("compare", "analyze-dataset"):
        print(json.dumps(result, indent=2, sort_keys=True, default=_json_default))
    elif cfg.mode in ("sweep-mu1", "sweep-mu2"):
        for row in result:
            print(", ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
