"""
Command-line front end.

Subcommands: ``simulate``, ``flow``, ``fit``, ``predict`` and ``eval``.
Every option can also be given in a ``key = value`` file passed with
``--config`` (keys are the long option names with dashes or underscores);
command-line flags win over the file.

Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
4 numerical divergence, 5 no usable data.  Diagnostics go to stderr;
stdout only carries the paths of written outputs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from datetime import timedelta
from pathlib import Path

import numpy as np

from . import __version__
from .fusion import (AOD_BOUNDS, EmptyDataError, FGRIDError, ObservationFrame, common_times, fill_first_frame,
                     format_frame, format_time, fuse, load_streams, parse_time, read_key_values)
from .grid import GridSpec, spectral_basis
from .optical_flow import DEFAULT_ITERATIONS, DEFAULT_SMOOTHNESS, estimate_optical_flow
from .physics import FlowFields, kmh_per_unit, uniform_flow
from .pipeline import fit_data_driven, fit_physics
from .simulator import PRESETS, InstabilityError, generate_streams, write_dataset
from .state_space import DivergenceError, GibbsConfig, Priors, compute_mse, predict

log = logging.getLogger("adstm")

EXIT_CONFIG, EXIT_IO, EXIT_DIVERGENCE, EXIT_EMPTY = 2, 3, 4, 5


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- output helpers

def write_pgm(path, field, lo=None, hi=None) -> None:
    """8-bit binary PGM; values are scaled linearly from [lo, hi] to 0..255, NaN maps to 0."""
    a = np.asarray(field, dtype=float)
    ok = np.isfinite(a)
    lo = float(np.min(a[ok])) if lo is None and ok.any() else (0.0 if lo is None else lo)
    hi = float(np.max(a[ok])) if hi is None and ok.any() else (1.0 if hi is None else hi)
    span = hi - lo if hi > lo else 1.0
    img = np.zeros(a.shape, dtype=np.uint8)
    img[ok] = np.clip(np.round((a[ok] - lo) / span * 255.0), 0, 255).astype(np.uint8)
    head = f"P5\n# scale {lo!r} {hi!r}\n{a.shape[1]} {a.shape[0]}\n255\n".encode()
    Path(path).write_bytes(head + img.tobytes())


def write_matrix(path, m) -> None:
    np.savetxt(path, np.atleast_2d(m), delimiter=",", fmt="%.17g")


def read_matrix(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def write_manifest(path, entries: dict) -> None:
    Path(path).write_text("".join(f"{k} = {_fmt(v)}\n" for k, v in entries.items()))


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _emit(path) -> None:
    print(str(path), flush=True)


# ---------------------------------------------------------------- argument parsing

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value file with default option values")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")


def _data_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, help="directory of FGRID frames")
    p.add_argument("--bounds", type=float, nargs=2, metavar=("LO", "HI"),
                   help="valid value range (default: the dataset manifest, else AOD bounds)")
    p.add_argument("--lenient", action="store_true", help="treat out-of-bounds values as missing instead of failing")


def _fit_opts(p: argparse.ArgumentParser) -> None:
    _data_opts(p)
    p.add_argument("--seed", type=int, help="random seed (required)")
    p.add_argument("--train", type=int, default=20, help="number of leading frames to fit (default 20)")
    p.add_argument("--truncation", type=int, nargs=2, default=[6, 6], metavar=("K1", "K2"))
    p.add_argument("--model", choices=["physics", "data-driven"], default="physics")
    p.add_argument("--flow", type=float, nargs=2, metavar=("SPEED", "DIR"),
                   help="uniform flow override: grid fractions per step, degrees from the first axis")
    p.add_argument("--flow-dir", type=Path, help="flow fields written by the 'flow' command")
    p.add_argument("--diffusivity", type=float, default=0.0, help="diffusivity used with --flow")
    p.add_argument("--downsample", type=int, nargs=2, metavar=("G1", "G2"))
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--burn-in", type=int, default=200)
    p.add_argument("--phi-scale", type=float, default=0.01, help="inverse-Wishart scale Phi = s * I")
    p.add_argument("--ig-prior", type=float, default=0.01, help="inverse-gamma shape and rate")
    p.add_argument("--smoothness", type=float, default=DEFAULT_SMOOTHNESS)
    p.add_argument("--of-iterations", type=int, default=DEFAULT_ITERATIONS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adstm", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS), default="table1")
    p.add_argument("--seed", type=int, help="random seed (required)")
    p.add_argument("--frames", type=int, help="number of frames")
    p.add_argument("--grid", type=int, nargs=2, metavar=("N1", "N2"))
    p.add_argument("--noise", type=float, help="observation noise sd")
    p.add_argument("--flow", type=float, nargs=2, metavar=("SPEED", "DIR"))
    p.add_argument("--diffusivity", type=float)

    p = sub.add_parser("flow", help="estimate velocity and diffusivity by optical flow")
    _common(p)
    _data_opts(p)
    p.add_argument("--train", type=int, default=20, help="number of leading frames to use")
    p.add_argument("--smoothness", type=float, default=DEFAULT_SMOOTHNESS)
    p.add_argument("--of-iterations", type=int, default=DEFAULT_ITERATIONS)

    p = sub.add_parser("fit", help="run the Gibbs sampler")
    _common(p)
    _fit_opts(p)

    p = sub.add_parser("predict", help="forecast from a fit")
    _common(p)
    p.add_argument("--fit", type=Path, help="output directory of 'fit'")
    p.add_argument("--horizon", type=int, default=10)

    p = sub.add_parser("eval", help="score forecasts against held-out frames")
    _common(p)
    _fit_opts(p)
    p.add_argument("--fit", type=Path, help="reuse an existing fit instead of fitting")
    p.add_argument("--horizon", type=int, help="number of horizons (default: all held-out frames)")
    p.add_argument("--reference", default=None,
                   help="source id to score against, or 'truth' (default: first source)")
    return ap


def _apply_config_file(ap: argparse.ArgumentParser, argv) -> list:
    """Load ``--config`` values as parser defaults so explicit flags still override them."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None or known.command is None:
        return argv
    try:
        values = read_key_values(known.config)
    except OSError as exc:
        raise ConfigError(f"cannot read config {known.config}: {exc}") from exc
    sub = ap._subparsers._group_actions[0].choices.get(known.command)
    if sub is None:
        return argv
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        act = actions.get(dest)
        if act is None or dest in ("config", "help"):
            raise ConfigError(f"{known.config}: unknown key {key!r} for '{known.command}'")
        try:
            if isinstance(act, argparse._StoreTrueAction):
                defaults[dest] = raw.lower() in ("1", "true", "yes", "on")
            elif raw.lower() == "none":
                defaults[dest] = None
            elif act.nargs is not None:
                conv = act.type or str
                defaults[dest] = [conv(x) for x in raw.split()]
            else:
                defaults[dest] = (act.type or str)(raw)
        except ValueError as exc:
            raise ConfigError(f"{known.config}: bad value for {key!r}: {raw!r}") from exc
        if act.choices is not None and defaults[dest] not in act.choices:
            raise ConfigError(f"{known.config}: {key} must be one of {sorted(act.choices)}")
    sub.set_defaults(**defaults)
    return argv


def _require(args, name: str) -> None:
    if getattr(args, name, None) is None:
        raise ConfigError(f"--{name.replace('_', '-')} is required for '{args.command}'")


def _echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}


def _out_dir(args) -> Path:
    _require(args, "out")
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


# ---------------------------------------------------------------- data loading

def _resolve_bounds(args):
    if args.bounds is not None:
        return tuple(args.bounds)
    man = args.data / "manifest.txt"
    if man.is_file():
        kv = read_key_values(man)
        if "bounds" in kv:
            lo, hi = (float(x) for x in kv["bounds"].split())
            return lo, hi
    return AOD_BOUNDS


def _cadence(args) -> timedelta:
    man = args.data / "manifest.txt"
    if man.is_file():
        kv = read_key_values(man)
        if "cadence_seconds" in kv:
            return timedelta(seconds=float(kv["cadence_seconds"]))
    return timedelta(minutes=5)


def _load(args):
    _require(args, "data")
    bounds = _resolve_bounds(args)
    streams = load_streams(args.data, bounds, strict=not args.lenient, cadence=_cadence(args))
    grid = streams[0].frames[0].grid
    for s in streams:
        for f in s.frames:
            if f.grid.shape != grid.shape:
                raise FGRIDError(f"source {s.source_id}: frame grid {f.grid.shape} differs from {grid.shape}")
    times = common_times(streams)
    log.info("loaded %d sources, %d time steps on a %dx%d grid", len(streams), len(times), *grid.shape)
    return streams, grid, times


def _fused_frames(streams, grid, times) -> list:
    """Per-time pixel average over sources (NaN where nobody observed)."""
    out = []
    for t in times:
        obs = fuse(streams, t, grid)
        filled = fill_first_frame(obs)
        seen = np.zeros(grid.size, bool)
        for idx in obs.pixel_index:
            seen[idx] = True
        out.append(np.where(seen.reshape(grid.shape), filled, np.nan))
    return out


def _estimate_flow(streams, grid, times, smoothness, n_iter) -> FlowFields:
    flow = estimate_optical_flow(_fused_frames(streams, grid, times), grid, smoothness, n_iter)
    kx, ky = kmh_per_unit(grid)
    speed = np.hypot(flow.vx * kx, flow.vy * ky)
    log.info("optical flow: mean velocity (%.4g, %.4g) grid/step, speed %.3g..%.3g km/h, "
             "diffusivity %.3g..%.3g", flow.vx.mean(), flow.vy.mean(), speed.min(), speed.max(),
             flow.diffusivity.min(), flow.diffusivity.max())
    return flow


def _read_flow_dir(path: Path, grid: GridSpec) -> FlowFields:
    try:
        vx, vy, D = (read_matrix(path / f"{n}.csv") for n in ("vx", "vy", "diffusivity"))
    except OSError as exc:
        raise OSError(f"cannot read flow fields from {path}: {exc}") from exc
    if vx.shape != grid.shape:
        raise ConfigError(f"flow fields in {path} are {vx.shape}, data grid is {grid.shape}")
    return FlowFields(vx, vy, D)


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    _require(args, "seed")
    out = _out_dir(args)
    cfg = PRESETS[args.preset](seed=args.seed)
    if args.frames is not None:
        cfg.n_frames = args.frames
    if args.grid is not None:
        cfg.grid = GridSpec(*args.grid)
        for s in cfg.sources:
            if s.region is not None:
                k = args.grid[0] // 4, args.grid[1] // 4
                s.region = (args.grid[0] - k[0], args.grid[0], args.grid[1] - k[1], args.grid[1])
    if args.noise is not None:
        cfg.noise_sd = args.noise
    if args.flow is not None:
        cfg.speed, cfg.direction_deg = args.flow
    if args.diffusivity is not None:
        cfg.diffusivity = args.diffusivity
    cfg.__post_init__()
    ds = generate_streams(cfg)
    manifest = write_dataset(ds, out, {"preset": args.preset})
    log.info("wrote %d frames x %d sources to %s", cfg.n_frames, len(ds.streams), out)
    _emit(manifest)
    return 0


def cmd_flow(args) -> int:
    out = _out_dir(args)
    streams, grid, times = _load(args)
    times = times[: args.train]
    if len(times) < 2:
        raise EmptyDataError("optical flow needs at least two frames")
    flow = _estimate_flow(streams, grid, times, args.smoothness, args.of_iterations)
    for name, m in (("vx", flow.vx), ("vy", flow.vy), ("diffusivity", flow.diffusivity)):
        write_matrix(out / f"{name}.csv", m)
        write_pgm(out / f"{name}.pgm", m)
    write_manifest(out / "manifest.txt", {**_echo(args), "frames_used": len(times)})
    _emit(out)
    return 0


def _priors(args, dim, n_sources) -> Priors:
    return Priors.default(dim, n_sources, phi_scale=args.phi_scale, ab=args.ig_prior)


def _run_fit(args, streams, grid, times):
    _require(args, "seed")
    if args.flow is not None and args.flow_dir is not None:
        raise ConfigError("--flow and --flow-dir are mutually exclusive")
    k1, k2 = args.truncation
    cfg = GibbsConfig(seed=args.seed, iters=args.iters, burn_in=args.burn_in)
    spectral_basis(k1, k2)  # validates the truncation early
    if k1 > grid.n1 or k2 > grid.n2:
        raise ConfigError(f"truncation {(k1, k2)} exceeds grid {grid.shape}")
    q = k1 * k2
    dim = 2 * q if args.model == "physics" else q
    log.info("model %s, truncation (%d, %d), state dimension %d", args.model, k1, k2, dim)
    n_src = len(streams)
    priors = _priors(args, dim, n_src)
    t0 = time.perf_counter()
    if args.model == "physics":
        if args.flow is not None:
            flow = uniform_flow(grid, args.flow[0], args.flow[1], args.diffusivity)
            flow_desc = f"uniform {args.flow[0]!r} {args.flow[1]!r}"
        elif args.flow_dir is not None:
            flow = _read_flow_dir(args.flow_dir, grid)
            flow_desc = f"file {args.flow_dir}"
        else:
            if len(times) < 2:
                raise EmptyDataError("need two frames to estimate the flow")
            flow = _estimate_flow(streams, grid, times, args.smoothness, args.of_iterations)
            flow_desc = "optical flow"
        fit = fit_physics(streams, grid, times, flow, (k1, k2), cfg, priors, args.downsample)
    else:
        flow_desc = "none"
        fit = fit_data_driven(streams, grid, times, (k1, k2), cfg, priors, args.downsample)
    wall = time.perf_counter() - t0
    th = fit.draws.theta_mean
    if not np.all(np.isfinite(th)):
        raise DivergenceError("posterior mean state is not finite")
    log.info("fit finished in %.2f s; sigma2 = %s", wall, np.array2string(fit.draws.sigma2_mean, precision=4))
    return fit, wall, flow_desc


def _save_fit(fit, out: Path, args, wall, flow_desc, streams, times) -> None:
    write_matrix(out / "theta_mean.csv", fit.draws.theta_mean)
    write_matrix(out / "transition.csv", fit.forecast_G)
    write_matrix(out / "w_mean_diag.csv", np.diag(fit.draws.w_mean)[None, :])
    s2 = fit.draws.sigma2
    with open(out / "sigma2.csv", "w") as fh:
        fh.write("source,mean,sd\n")
        for m, sid in enumerate(fit.source_ids):
            fh.write(f"{sid},{s2[:, m].mean()!r},{s2[:, m].std()!r}\n")
    g = fit.grid
    for sub in ("filtered", "bias", "images"):
        (out / sub).mkdir(exist_ok=True)
    with open(out / "diagnostics.csv", "w") as fh:
        fh.write("step,time,n_obs,sources,mse_vs_obs,bias_rms\n")
        for t, ts in enumerate(times, start=1):
            a, b = fit.fields(fit.draws.theta_mean[t])
            est = a + b
            tag = f"{t:03d}"
            (out / "filtered" / f"{tag}.fgrid").write_text(format_frame(ObservationFrame("filtered", ts, est, g)))
            (out / "bias" / f"{tag}.fgrid").write_text(format_frame(ObservationFrame("bias", ts, b, g)))
            write_pgm(out / "images" / f"filtered_{tag}.pgm", est)
            write_pgm(out / "images" / f"bias_{tag}.pgm", b)
            obs = fuse(streams, ts, g, args.downsample)
            mse = ""
            if obs.size:
                idx = np.concatenate(obs.pixel_index)
                mse = repr(float(np.mean((est.ravel()[idx] - obs.y) ** 2)))
            fh.write(f"{t},{format_time(ts)},{obs.size},{'+'.join(obs.source_ids)},{mse},"
                     f"{float(np.sqrt(np.mean(b ** 2)))!r}\n")
    write_manifest(out / "manifest.txt", {
        **_echo(args), "kind": fit.kind, "state_dim": fit.state_dim, "q": fit.q,
        "n1": g.n1, "n2": g.n2, "origin": [g.origin_lat, g.origin_lon], "step": [g.step_lat, g.step_lon],
        "sources": fit.source_ids, "fit_frames": len(times), "last_time": format_time(times[-1]),
        "cadence_seconds": int((times[1] - times[0]).total_seconds()) if len(times) > 1 else 300,
        "flow_source": flow_desc, "wall_time_seconds": round(wall, 3),
    })


def cmd_fit(args) -> int:
    _require(args, "seed")
    out = _out_dir(args)
    streams, grid, times = _load(args)
    times = times[: args.train]
    fit, wall, flow_desc = _run_fit(args, streams, grid, times)
    print(f"state dimension {fit.state_dim}", file=sys.stderr)
    _save_fit(fit, out, args, wall, flow_desc, streams, times)
    _emit(out / "manifest.txt")
    return 0


class _SavedFit:
    """What ``predict`` needs from a fit directory."""

    def __init__(self, path: Path):
        man = path / "manifest.txt"
        if not man.is_file():
            raise OSError(f"{path} is not a fit directory (no manifest.txt)")
        kv = read_key_values(man)
        self.kind = kv["kind"]
        self.q = int(kv["q"])
        self.truncation = tuple(int(x) for x in kv["truncation"].split())
        lat0, lon0 = (float(x) for x in kv["origin"].split())
        dlat, dlon = (float(x) for x in kv["step"].split())
        self.grid = GridSpec(int(kv["n1"]), int(kv["n2"]), lat0, lon0, dlat, dlon)
        self.last_time = parse_time(kv["last_time"])
        self.cadence = timedelta(seconds=float(kv["cadence_seconds"]))
        self.fit_frames = int(kv["fit_frames"])
        self.theta_T = read_matrix(path / "theta_mean.csv")[-1]
        gfile = path / "transition.csv"
        if not gfile.is_file():
            raise ConfigError(f"{path} has no transition matrix; cannot forecast without flow information")
        self.G = read_matrix(gfile)

    def forecast(self, k: int):
        F = spectral_basis(*self.truncation).design_matrix(self.grid)
        out = []
        for s in predict(self.theta_T, self.G, k):
            a = (F @ s[: self.q]).reshape(self.grid.shape)
            b = (F @ s[self.q:]).reshape(self.grid.shape) if self.kind == "physics" else np.zeros_like(a)
            out.append((a, b))
        return out


def _write_forecast(saved: _SavedFit, fc, out: Path) -> None:
    (out / "pred").mkdir(exist_ok=True)
    (out / "bias").mkdir(exist_ok=True)
    (out / "images").mkdir(exist_ok=True)
    for h, (a, b) in enumerate(fc):
        ts = saved.last_time + h * saved.cadence
        tag = f"h{h:02d}"
        (out / "pred" / f"{tag}.fgrid").write_text(format_frame(ObservationFrame("forecast", ts, a + b, saved.grid)))
        (out / "bias" / f"{tag}.fgrid").write_text(format_frame(ObservationFrame("bias", ts, b, saved.grid)))
        write_pgm(out / "images" / f"pred_{tag}.pgm", a + b)


def cmd_predict(args) -> int:
    _require(args, "fit")
    if args.horizon < 0:
        raise ConfigError("--horizon must be >= 0")
    out = _out_dir(args)
    saved = _SavedFit(args.fit)
    fc = saved.forecast(args.horizon)
    _write_forecast(saved, fc, out)
    write_manifest(out / "manifest.txt", {**_echo(args), "kind": saved.kind})
    _emit(out)
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    streams, grid, times = _load(args)
    if args.fit is not None:
        saved = _SavedFit(args.fit)
        n_fit = saved.fit_frames
        label = saved.kind
    else:
        n_fit = min(args.train, len(times))
        fit_dir = out / "fit"
        fit_dir.mkdir(exist_ok=True)
        fit, wall, flow_desc = _run_fit(args, streams, grid, times[:n_fit])
        _save_fit(fit, fit_dir, args, wall, flow_desc, streams, times[:n_fit])
        saved = _SavedFit(fit_dir)
        label = "data-driven" if fit.kind == "data-driven" else f"physics ({flow_desc})"
    held = times[n_fit:]
    if args.horizon is not None:
        held = held[: args.horizon]
    if not held:
        raise EmptyDataError("no held-out frames after the fitting window")

    ref_id = args.reference
    if ref_id == "truth":
        truth_streams = load_streams(args.data / "truth", (-np.inf, np.inf), exclude=())
        ref_stream = truth_streams[0]
    else:
        by_id = {s.source_id: s for s in streams}
        ref_id = ref_id or streams[0].source_id
        if ref_id not in by_id:
            raise ConfigError(f"unknown reference source {ref_id!r}; have {sorted(by_id)}")
        ref_stream = by_id[ref_id]

    fc = saved.forecast(len(held))[1:]
    _write_forecast(saved, [saved.forecast(0)[0]] + fc, out)
    rows = []
    for h, ((a, b), ts) in enumerate(zip(fc, held), start=1):
        fr = ref_stream.frame_at(ts)
        if fr is None:
            rows.append((h, n_fit + h, format_time(ts), None))
            continue
        pred = a + b
        rows.append((h, n_fit + h, format_time(ts), compute_mse(pred, fr.values)))
        write_pgm(out / "images" / f"error_h{h:02d}.pgm", np.abs(pred - fr.values))
    with open(out / "mse.csv", "w") as fh:
        fh.write("horizon,time_index,time,mse\n")
        for h, ti, ts, m in rows:
            fh.write(f"{h},{ti},{ts},{'' if m is None else repr(m)}\n")
    with open(out / "table1.csv", "w") as fh:
        fh.write("model," + ",".join(f"time {ti}" for _, ti, _, _ in rows) + "\n")
        fh.write(label.replace(",", " ") + "," + ",".join("" if m is None else f"{m:.4f}" for *_, m in rows) + "\n")
    for h, ti, _, m in rows:
        log.info("horizon %d (time %d): MSE %s", h, ti, "n/a" if m is None else f"{m:.4f}")
    write_manifest(out / "manifest.txt", {**_echo(args), "reference": ref_id, "fit_frames": n_fit})
    _emit(out / "table1.csv")
    return 0


COMMANDS = {"simulate": cmd_simulate, "flow": cmd_flow, "fit": cmd_fit, "predict": cmd_predict, "eval": cmd_eval}


def _thread_limit():
    raw = os.environ.get("ADSTM_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError as exc:
        raise ConfigError(f"ADSTM_THREADS must be a positive integer, got {raw!r}") from exc
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        argv = _apply_config_file(ap, argv)
        args = ap.parse_args(argv)
    except ConfigError as exc:
        print(f"adstm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse usage errors exit with 2, --help with 0
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        limiter = _thread_limit()
        try:
            return COMMANDS[args.command](args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (FGRIDError, OSError) as exc:
        print(f"adstm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DivergenceError, InstabilityError) as exc:
        print(f"adstm: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except EmptyDataError as exc:
        print(f"adstm: no data: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"adstm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
