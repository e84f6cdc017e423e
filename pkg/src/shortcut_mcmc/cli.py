"""Command-line entry point: gen-data, train, sample, eval, plot."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import diffusion as dfn
from .checkpoint import Checkpoint
from .data import generate_swirl, load_points, save_points
from .errors import ConfigError, NumericError, ParseError
from .evaluation import evaluate, snapshot_grid
from .net import NetConfig
from .schedule import ScheduleConfig, build_schedule
from .svgplot import write_svg
from .train import LOG_COLUMNS, TIMING_COLUMNS, TrainConfig, TrainingDiverged, fit, log_row, timing_row

log = logging.getLogger("shortcut_mcmc")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_SEED = 0
FIG_KS = (20, 60, 100, 160, 200)


@dataclass(frozen=True)
class RunConfig:
    """Flat union of training, schedule and network settings plus paths."""

    data: str = ""
    out_dir: str = "run"
    reference: str = ""
    resume: str = ""
    checkpoint_every: int = 100
    # training
    mode: str = "shortcut"
    T: int = 200
    K: int = 10
    epochs: int = 2000
    batch_size: int = 0
    lr: float = 1e-3
    lambda_fidelity: float = 1.0
    chain_grad: str = "full"
    chain_init: str = "teacher_forced"
    weighted_eps_loss: bool = False
    combined_step: bool = False
    shared_optimizer: bool = False
    seed: int = DEFAULT_SEED
    eval_every: int = 100
    eval_n: int = 1024
    full_eval_every: int = 10
    # schedule
    gamma_min: float = -13.3
    gamma_max: float = 5.0
    # network
    hidden_dim: int = 128
    n_freqs: int = 6
    time_embed: bool = True
    n_time_freqs: int = 6

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(T=self.T, gamma_min=self.gamma_min, gamma_max=self.gamma_max)

    def net_config(self) -> NetConfig:
        return NetConfig(hidden_dim=self.hidden_dim, n_freqs=self.n_freqs, time_embed=self.time_embed,
                         n_time_freqs=self.n_time_freqs, max_step=self.T)

    def validate(self) -> None:
        if not self.data:
            raise ConfigError("--data is required")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        self.train_config().validate()
        self.schedule_config().validate()
        self.net_config().validate()


def _config_overrides(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path) from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a flat JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return obj


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then --config file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(_config_overrides(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


# -- commands ----------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    ps = generate_swirl(args.n, args.seed, args.jitter)
    save_points(ps, args.out)
    print(f"wrote {len(ps)} swirl points (seed={args.seed}, jitter={args.jitter}) to {args.out}")
    return EXIT_OK


class _LogStream:
    """Appends one row per epoch to the training log and the timing table."""

    def __init__(self, out: Path, append: bool):
        self.files = []
        for name, cols, row in (("train_log.csv", LOG_COLUMNS, log_row),
                                ("train_timing.csv", TIMING_COLUMNS, timing_row)):
            path = out / name
            fresh = not (append and path.exists())
            fh = open(path, "w" if fresh else "a", newline="")
            if fresh:
                fh.write(",".join(cols) + "\n")
            self.files.append((fh, row))

    def __call__(self, r) -> None:
        for fh, row in self.files:
            fh.write(row(r))
            fh.flush()

    def close(self) -> None:
        for fh, _ in self.files:
            fh.close()


def cmd_train(args) -> int:
    rc = build_run_config(args)
    resume = None
    if rc.resume:
        resume = Checkpoint.load(rc.resume)
        # Continue with the stored configuration; only the epoch budget can move.
        tc = resume.train_config
        rc = RunConfig(**{**asdict(rc), **asdict(tc), "epochs": rc.epochs if args.epochs is not None else tc.epochs,
                          "gamma_min": resume.schedule_config.gamma_min,
                          "gamma_max": resume.schedule_config.gamma_max,
                          **{k: getattr(resume.net_config, k) for k in
                             ("hidden_dim", "n_freqs", "time_embed", "n_time_freqs")}})
    rc.validate()
    data = load_points(rc.data)
    reference = load_points(rc.reference) if rc.reference else None
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(asdict(rc), sort_keys=True, indent=1) + "\n")

    def on_checkpoint(ck: Checkpoint) -> None:
        ck.save(out / "last.ckpt")

    stream = _LogStream(out, append=resume is not None)
    try:
        _, tlog, final = fit(data, rc.train_config(), rc.schedule_config(), rc.net_config(),
                             reference=reference, resume=resume, checkpoint_every=rc.checkpoint_every,
                             on_checkpoint=on_checkpoint, on_record=stream)
    except TrainingDiverged as exc:
        if exc.last_good is not None:
            exc.last_good.save(out / "last_good.ckpt")
        raise
    finally:
        stream.close()
    final.save(out / "final.ckpt")
    last = tlog.records[-1] if tlog.records else None
    if last is not None:
        print(f"trained {rc.mode} to epoch {last.epoch}: eps_loss={last.eps_loss:.5f} "
              f"fidelity_loss={last.fidelity_loss:.5f}; checkpoint {out / 'final.ckpt'}")
    return EXIT_OK


def _parse_steps(value: str | None, T: int) -> int | str:
    if value is None:
        return value
    if value == "full":
        return "full"
    try:
        k = int(value)
    except ValueError:
        raise ConfigError(f"--steps must be an integer or 'full', got {value!r}") from None
    if not 1 <= k <= T:
        raise ConfigError(f"--steps must lie in [1, {T}]")
    return k


def cmd_sample(args) -> int:
    ck = Checkpoint.load(args.checkpoint)
    sch = build_schedule(ck.schedule_config)
    net = ck.restore_net()
    steps = _parse_steps(args.steps, sch.T)
    if steps is None:
        steps = ck.train_config.K
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    if steps == "full":
        ps = dfn.sample_full(net, args.n, sch, args.seed)
        if args.snapshots_dir:
            ks = [int(k) for k in args.snapshot_ks.split(",")] if args.snapshot_ks else list(FIG_KS)
            snapshot_grid(net, sch, args.seed, args.snapshots_dir, n=args.n, ks=ks, sampler="full")
    else:
        spec = dfn.inference_spec(sch.T, steps)
        ps = dfn.sample_shortcut(net, args.n, spec, sch, args.seed)
        if args.snapshots_dir:
            snapshot_grid(net, sch, args.seed, args.snapshots_dir, n=args.n, spec=spec, sampler="shortcut")
    save_points(ps, args.out)
    print(f"wrote {len(ps)} samples ({'full T=' + str(sch.T) if steps == 'full' else f'K={steps}'}) to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    gen, real = load_points(args.generated), load_points(args.real)
    report = evaluate(gen, real, sampler=args.sampler)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_plot(args) -> int:
    sets = [load_points(p).points for p in args.inputs]
    if args.grid:
        rows, cols = args.grid
        if rows * cols != len(sets):
            raise ConfigError(f"--grid {rows} {cols} needs {rows * cols} inputs, got {len(sets)}")
        panels = [sets[i * cols:(i + 1) * cols] for i in range(rows)]
    else:
        panels = [sets]
    write_svg(args.out, panels, row_labels=args.row_labels or (), col_labels=args.col_labels or (),
              title=args.title)
    print(f"wrote {args.out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shortcut-mcmc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the swirl dataset")
    g.add_argument("--n", type=int, default=1024)
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--jitter", type=float, default=0.01)
    g.add_argument("--out", default="swirl.csv")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a denoiser (shortcut or baseline)")
    t.add_argument("--config", help="flat JSON object of RunConfig overrides")
    # None defaults let --config values through unless a flag is given explicitly.
    t.add_argument("--data")
    t.add_argument("--out-dir", dest="out_dir")
    t.add_argument("--reference", help="held-out points used for in-training evaluation")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    t.add_argument("--mode", choices=("baseline", "shortcut"))
    t.add_argument("--T", type=int)
    t.add_argument("--K", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lambda-fidelity", dest="lambda_fidelity", type=float)
    t.add_argument("--chain-grad", dest="chain_grad", choices=("full", "last_step"))
    t.add_argument("--chain-init", dest="chain_init", choices=("teacher_forced", "pure_noise"))
    t.add_argument("--weighted-eps-loss", dest="weighted_eps_loss", type=_bool)
    t.add_argument("--combined-step", dest="combined_step", type=_bool)
    t.add_argument("--shared-optimizer", dest="shared_optimizer", type=_bool)
    t.add_argument("--seed", type=int)
    t.add_argument("--eval-every", dest="eval_every", type=int)
    t.add_argument("--eval-n", dest="eval_n", type=int)
    t.add_argument("--full-eval-every", dest="full_eval_every", type=int,
                   help="run the full T-step sampler on every n-th evaluation (0 = never)")
    t.add_argument("--gamma-min", dest="gamma_min", type=float)
    t.add_argument("--gamma-max", dest="gamma_max", type=float)
    t.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    t.add_argument("--n-freqs", dest="n_freqs", type=int)
    t.add_argument("--time-embed", dest="time_embed", type=_bool)
    t.add_argument("--n-time-freqs", dest="n_time_freqs", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, default=1024)
    s.add_argument("--steps", help="number of shortcut steps K, or 'full' for T ancestral steps")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--out", default="samples.csv")
    s.add_argument("--snapshots-dir", dest="snapshots_dir")
    s.add_argument("--snapshot-ks", dest="snapshot_ks", help="comma-separated k values for full runs")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="compare generated points with real points")
    e.add_argument("generated")
    e.add_argument("real")
    e.add_argument("--sampler", default="unknown")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="render point CSVs as an SVG scatter (grid)")
    pl.add_argument("inputs", nargs="+")
    pl.add_argument("--out", default="plot.svg")
    pl.add_argument("--grid", nargs=2, type=int, metavar=("ROWS", "COLS"))
    pl.add_argument("--row-labels", dest="row_labels", nargs="*")
    pl.add_argument("--col-labels", dest="col_labels", nargs="*")
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, ParseError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
