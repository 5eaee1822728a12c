"""Command-line front end.

Subcommands: ``sketch``, ``flow``, ``replay``, ``swdist``, ``gmm-gen``.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every command first echoes a ``# swflow <cmd> key=value ...`` line holding
all parameters and seeds, which is enough to rerun it.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._binio import FormatError
from .data import gmm_sample, load_matrix, random_gmm_spec, save_matrix, GmmSpec
from .flow import (FlowConfig, NumericalError, initial_particles, load_record, replay_flow,
                   run_flow)
from .geometry import FIXED, RESAMPLED, sample_directions
from .metrics import MONITOR_N_THETA, sw2_estimate
from .sketch import build_sketch, load_sketch, save_sketch

log = logging.getLogger("swflow")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _echo(cmd, args, skip=("func", "command", "verbose")):
    parts = [f"{k}={v}" for k, v in sorted(vars(args).items()) if k not in skip]
    print(f"# swflow {cmd} " + " ".join(parts), flush=True)


def monitor_path_for(sketch_path) -> Path:
    p = Path(sketch_path)
    return p.with_name(p.stem + ".monitor" + p.suffix)


def _positive(name, value, minimum=1):
    if value is None or value < minimum:
        raise UsageError(f"--{name} must be >= {minimum}, got {value}")


# ----------------------------------------------------------------------------

def cmd_sketch(args):
    _positive("ntheta", args.ntheta)
    _positive("q", args.q, 2)
    _positive("monitor-ntheta", args.monitor_ntheta, 0)
    _positive("threads", args.threads)
    if args.batch is not None:
        _positive("batch", args.batch)
    if args.seed < 0:
        raise UsageError("--seed must be >= 0")
    _echo("sketch", args)
    data = load_matrix(args.data_path, args.format)
    d = data.shape[1]
    dirs = sample_directions(d, args.ntheta, args.seed)
    sketch = build_sketch(data, dirs, args.q, batch=args.batch, seed=args.seed, workers=args.threads)
    save_sketch(sketch, args.out)
    mon_out = Path(args.monitor_out) if args.monitor_out else monitor_path_for(args.out)
    if args.monitor_ntheta:
        mdirs = sample_directions(d, args.monitor_ntheta, args.seed, name="monitor")
        save_sketch(build_sketch(data, mdirs, args.q, workers=args.threads), mon_out)
    print(f"directions={sketch.n_theta} q={sketch.q} d={d} fingerprint=0x{sketch.fingerprint:016x}")
    print(f"wrote {args.out} and monitor sketch {mon_out}")


def _flow_config(args, iterations=None) -> FlowConfig:
    cfg = FlowConfig(
        n_particles=args.n,
        n_theta=args.ntheta if args.ntheta is not None else 1,
        step_size=args.h,
        lam=args.lam,
        iterations=args.iters if iterations is None else iterations,
        # Q and (in fixed mode) n_theta are taken from the sketch once it is loaded
        quantiles=100,
        seed=args.seed,
        direction_mode=RESAMPLED if args.resample_dirs else FIXED,
        record_maps=args.record is not None,
        early_stop=args.early_stop,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _load_monitor(path_arg, sketch_path):
    path = Path(path_arg) if path_arg else monitor_path_for(sketch_path)
    if path.exists():
        return load_sketch(path)
    if path_arg:
        raise FileNotFoundError(f"monitor sketch {path} not found")
    log.warning("no monitor sketch at %s; logging SW2 against the training sketch", path)
    return None


def _snapshotter(every, plot_dir, d, prefix):
    if not every or d != 2:
        if every and d != 2:
            log.info("scatter plots are only drawn for d=2 (d=%d)", d)
        return None
    from .plotting import scatter_particles
    plot_dir.mkdir(parents=True, exist_ok=True)

    def snap(k, pts):
        if k % every == 0:
            scatter_particles(pts, plot_dir / f"{prefix}_k{k:05d}.svg", title=f"{prefix} k={k}")
    return snap


def cmd_flow(args):
    _positive("threads", args.threads)
    cfg = _flow_config(args)
    if args.plot_every is not None and args.plot_every < 0:
        raise UsageError("--plot-every must be >= 0")
    _echo("flow", args)
    sketch = load_sketch(args.sketch_path)
    cfg.quantiles = sketch.q
    if cfg.direction_mode == FIXED:
        if args.ntheta is not None and args.ntheta != sketch.n_theta:
            raise UsageError(f"--ntheta {args.ntheta} differs from the sketch's {sketch.n_theta} directions "
                             "(only --resample-dirs draws subsets)")
        cfg.n_theta = sketch.n_theta
    elif args.ntheta is None:
        raise UsageError("--resample-dirs needs --ntheta (directions drawn per iteration)")
    try:
        cfg.check_sketch(sketch)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    monitor = _load_monitor(args.monitor, args.sketch_path) or sketch

    init = initial_particles(cfg.n_particles, sketch.dim, cfg.seed)
    snap = _snapshotter(args.plot_every, Path(args.plot_dir), sketch.dim, "flow")
    x, record, flog = run_flow(init, sketch, cfg, monitor=monitor, record_path=args.record, callback=snap)
    if snap is not None:
        from .plotting import scatter_particles
        scatter_particles(x, Path(args.plot_dir) / "flow_final.svg", title="flow final")
    save_matrix(x, args.out)
    if args.log:
        flog.to_csv(args.log)
        from .plotting import plot_sw_curve
        plot_sw_curve(flog, Path(args.log).with_suffix(".svg"))
    print(f"iterations={len(flog.iters) - 1} sw2_initial={flog.sw2[0]!r} sw2_final={flog.sw2[-1]!r}")
    print(f"wrote {args.out}" + (f", record {args.record}" if args.record else ""))


def cmd_replay(args):
    _positive("n", args.n)
    if args.seed < 0:
        raise UsageError("--seed must be >= 0")
    _echo("replay", args)
    record = load_record(args.record_path)
    sketch = load_sketch(args.sketch_path)
    monitor = _load_monitor(args.monitor, args.sketch_path) or sketch
    fresh = initial_particles(args.n, sketch.dim, args.seed)
    snap = _snapshotter(args.plot_every, Path(args.plot_dir), sketch.dim, "replay")
    x, flog = replay_flow(fresh, record, sketch, seed=args.seed, monitor=monitor, callback=snap)
    save_matrix(x, args.out)
    if args.log:
        flog.to_csv(args.log)
    print(f"sw2_final={flog.sw2[-1]!r}")


def cmd_swdist(args):
    _positive("ntheta", args.ntheta)
    _positive("q", args.q, 2)
    _positive("resamples", args.resamples)
    _echo("swdist", args)
    a = load_matrix(args.a_path)
    b = load_matrix(args.b_path)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    ests = np.array([sw2_estimate(a, b, sample_directions(a.shape[1], args.ntheta, args.seed, name=f"swdist-{r}"),
                                  args.q) for r in range(args.resamples)])
    se = float(np.std(ests, ddof=1) / np.sqrt(ests.size)) if ests.size > 1 else float("nan")
    print(f"sw2={float(ests.mean())!r} stderr={se!r}")


def cmd_gmm_gen(args):
    if args.spec is None:
        _positive("d", args.d)
        _positive("components", args.components)
    _positive("p", args.p)
    _echo("gmm-gen", args)
    if args.spec is not None:
        spec = GmmSpec.from_json(args.spec)
    else:
        spec = random_gmm_spec(args.d, args.components, args.separation, args.seed)
    save_matrix(gmm_sample(spec, args.p), args.out)
    if args.spec_out:
        spec.to_json(args.spec_out)
    print(f"wrote {args.p} points in d={spec.dim} from {spec.n_components} components to {args.out}")


# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="swflow", description="Sliced-Wasserstein flows for nonparametric generative modelling.")
    p.add_argument("--version", action="version", version=f"swflow {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sketch", help="tabulate projected quantiles of a dataset")
    s.add_argument("data_path")
    s.add_argument("--ntheta", type=int, default=30)
    s.add_argument("--q", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--batch", type=int, default=None, help="rows per direction (default: all)")
    s.add_argument("--out", required=True)
    s.add_argument("--monitor-ntheta", type=int, default=MONITOR_N_THETA)
    s.add_argument("--monitor-out", default=None)
    s.add_argument("--format", choices=("csv", "swmx"), default=None)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_sketch)

    f = sub.add_parser("flow", help="run the flow from standard Gaussian particles")
    f.add_argument("sketch_path")
    f.add_argument("--n", type=int, default=5000)
    f.add_argument("--h", type=float, default=1.0)
    f.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    f.add_argument("--iters", type=int, default=200)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--ntheta", type=int, default=None, help="directions per iteration with --resample-dirs")
    f.add_argument("--resample-dirs", action="store_true")
    f.add_argument("--early-stop", action="store_true")
    f.add_argument("--record", default=None, help="write transport maps (SWTM) here")
    f.add_argument("--log", default=None, help="per-iteration CSV log")
    f.add_argument("--monitor", default=None, help="monitor sketch (default: <sketch>.monitor.swsk)")
    f.add_argument("--plot-every", type=int, default=0)
    f.add_argument("--plot-dir", default="plots")
    f.add_argument("--out", default="particles.swmx")
    f.add_argument("--threads", type=int, default=1)
    f.set_defaults(func=cmd_flow)

    r = sub.add_parser("replay", help="transport fresh particles through recorded maps")
    r.add_argument("record_path")
    r.add_argument("sketch_path")
    r.add_argument("--n", type=int, default=5000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--monitor", default=None)
    r.add_argument("--log", default=None)
    r.add_argument("--plot-every", type=int, default=0)
    r.add_argument("--plot-dir", default="plots")
    r.add_argument("--out", default="replayed.swmx")
    r.set_defaults(func=cmd_replay)

    w = sub.add_parser("swdist", help="Monte-Carlo sliced W2 between two point files")
    w.add_argument("a_path")
    w.add_argument("b_path")
    w.add_argument("--ntheta", type=int, default=MONITOR_N_THETA)
    w.add_argument("--q", type=int, default=100)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--resamples", type=int, default=10)
    w.set_defaults(func=cmd_swdist)

    g = sub.add_parser("gmm-gen", help="sample a random Gaussian mixture")
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--components", type=int, default=10)
    g.add_argument("--p", type=int, default=50000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--separation", type=float, default=6.0)
    g.add_argument("--spec", default=None, help="JSON mixture spec to sample instead of a random one")
    g.add_argument("--spec-out", default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gmm_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"swflow {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"swflow {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ValueError, OSError) as exc:
        print(f"swflow {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
