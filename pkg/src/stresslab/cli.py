"""``stresslab`` command line: gen, solve, train, eval, predict.

Exit status is 0 on success, 2 on usage errors (argparse) and 1 on data or
model errors, which print one line ``error: <code>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
from pathlib import Path

import numpy as np

from stresslab.dataset import (
    SweepConfig,
    dataset_stats,
    default_workers,
    generate_dataset,
    read_dataset,
    split_indices,
    write_dataset,
)
from stresslab.errors import CatalogParseError, InvalidParameters, StressLabError
from stresslab.fem import solve_problem
from stresslab.geometry import GridSpec, LoadSpec, ProblemSpec, load_catalog
from stresslab.imageio import read_raw_f32, render_field_image, write_raw_f32
from stresslab.material import Material
from stresslab import models


class UsageError(Exception):
    pass


def _q_schedule(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad q schedule {text!r}; use START:STOP:STEP or a single value")
    if len(vals) == 1:
        return vals[0], vals[0], 1.0
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"bad q schedule {text!r}; use START:STOP:STEP or a single value")
    return vals[0], vals[1], vals[2]


def _widths(text: str) -> tuple[int, int, int]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad widths {text!r}; use three comma-separated integers")
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"bad widths {text!r}; use three comma-separated integers")
    return vals


def _fmt(x: float) -> str:
    return f"{x:g}"


# -- subcommands ----------------------------------------------------------------


def cmd_gen(args) -> int:
    start, stop, step = args.q
    cfg = SweepConfig(
        catalog=args.catalog,
        q_start=start,
        q_stop=stop,
        q_step=step,
        theta_count=args.angles,
        material=Material(args.youngs, args.poisson),
        copies=args.copies,
        expand_seed=args.seed,
        dedupe_zero_load=args.dedupe_zero,
        seed=args.seed,
    )
    workers = args.workers if args.workers is not None else default_workers()
    d = generate_dataset(cfg, workers)
    write_dataset(d, args.out)
    st = dataset_stats(d)
    print(f"samples={len(d)} min={_fmt(st.min)} max={_fmt(st.max)} mean={_fmt(st.mean)}")
    return 0


def _read_problem_file(path: str) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise InvalidParameters(f"cannot read problem file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise CatalogParseError(f"{path}: {exc}") from exc
    if not parser.has_section("problem"):
        raise CatalogParseError(f"{path}: missing [problem] section")
    sec = parser["problem"]
    known = {"catalog", "entry", "q", "theta", "youngs_modulus", "poisson_ratio"}
    unknown = set(sec) - known
    if unknown:
        raise CatalogParseError(f"{path}: unknown keys {sorted(unknown)}")
    return dict(sec)


def cmd_solve(args) -> int:
    pfile = {}
    if args.problem:
        pfile = _read_problem_file(args.problem)
    catalog = args.catalog or pfile.get("catalog")
    entry_id = args.entry or pfile.get("entry")
    if entry_id is None:
        raise UsageError("solve needs --entry or a problem file naming an entry")
    try:
        q = args.q if args.q is not None else float(pfile.get("q", "nan"))
        theta = args.theta if args.theta is not None else float(pfile.get("theta", "0"))
        youngs = float(pfile.get("youngs_modulus", args.youngs))
        poisson = float(pfile.get("poisson_ratio", args.poisson))
    except ValueError as exc:
        raise CatalogParseError(f"bad number in problem file: {exc}") from exc
    if math.isnan(q):
        raise UsageError("solve needs --q or a problem file giving q")
    entries = {e.id: e for e in load_catalog(catalog)}
    if entry_id not in entries:
        raise CatalogParseError(f"no catalog entry {entry_id!r}")
    grid = GridSpec()
    p = ProblemSpec(entries[entry_id].mask(grid), LoadSpec(q, theta), Material(youngs, poisson), grid)
    field = solve_problem(p)
    if args.out_raw:
        write_raw_f32(field, args.out_raw)
    if args.out_img:
        render_field_image(field, args.out_img)
    print(f"entry={entry_id} q={_fmt(q)} theta={_fmt(theta)} max={field.max()!r}")
    return 0


def cmd_train(args) -> int:
    d = read_dataset(args.data)
    tr_idx, te_idx = split_indices(len(d), args.split, args.seed)
    x = d.model_input()
    y = d.targets.astype(np.float64)
    take = models.take_batch
    cfg = models.ArchitectureConfig(
        args.arch, widths=args.widths, height=d.shape[0], width=d.shape[1], seed=args.seed
    )
    model = models.build_model(cfg)
    hyper = models.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr0=args.lr,
        gamma=args.gamma,
        decay_steps=args.decay_steps,
        seed=args.seed,
        target_scale=args.target_scale,
        keep_best=args.keep_best,
    )
    log = (lambda s: print(s, file=sys.stderr)) if args.verbose else None
    ckpt, report = models.train(model, (take(x, tr_idx), y[tr_idx]), (take(x, te_idx), y[te_idx]), hyper, log)
    ckpt.metadata["split"] = {"train_fraction": args.split, "seed": args.seed, "train": len(tr_idx), "test": len(te_idx)}
    models.save_checkpoint(ckpt, args.out)
    if args.log:
        Path(args.log).write_text(report.csv())
    f = report.final
    print(
        f"arch={args.arch} epochs={args.epochs} train_mse={f['train_mse']!r} test_mse={f['test_mse']!r} "
        f"train_mae={f['train_mae']!r} test_mae={f['test_mae']!r}"
    )
    return 0


def _subset(d, which: str, meta: dict):
    if which == "all":
        return np.arange(len(d))
    split = meta.get("split")
    if not split:
        raise InvalidParameters(f"--subset {which} needs a checkpoint trained through the CLI split")
    tr, te = split_indices(len(d), split["train_fraction"], split["seed"])
    return tr if which == "train" else te


def cmd_eval(args) -> int:
    d = read_dataset(args.data)
    ckpt = models.load_checkpoint(args.model) if args.model else None
    idx = _subset(d, args.subset, ckpt.metadata if ckpt else {})
    x = models.take_batch(d.model_input(), idx)
    y = d.targets[idx].astype(np.float64)
    preds = None
    if args.predictions:
        preds = read_raw_f32(args.predictions, (len(d),) + d.shape)[idx].astype(np.float64)
    elif ckpt is None:
        raise UsageError("eval needs --model or --predictions")
    rep = models.evaluate(ckpt, x, y, predictions=preds, solid_only=args.solid_only)
    text = rep.to_text()
    if args.report:
        try:
            Path(args.report).write_text(text)
        except OSError as exc:
            raise InvalidParameters(f"cannot write report {args.report}: {exc}") from exc
    sys.stdout.write(text)
    return 0


def cmd_predict(args) -> int:
    d = read_dataset(args.data)
    if not 0 <= args.index < len(d):
        raise InvalidParameters(f"index {args.index} outside dataset of {len(d)} samples")
    ckpt = models.load_checkpoint(args.model)
    x = models.take_batch(d.model_input(), [args.index])
    field = models.predict(ckpt, x)[0]
    if args.out_raw:
        write_raw_f32(field, args.out_raw)
    if args.out_img:
        render_field_image(field, args.out_img)
    print(f"index={args.index} max={field.max()!r} true_max={float(d.targets[args.index].max())!r}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stresslab", description="FEM ground truth and CNN stress surrogates")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset")
    g.add_argument("--catalog", help="geometry catalog (default: built-in 28 entries)")
    g.add_argument("--out", required=True)
    g.add_argument("--q", type=_q_schedule, default=(0.0, 100.0, 20.0), help="START:STOP:STEP in N")
    g.add_argument("--angles", type=int, default=24, help="load directions per full turn")
    g.add_argument("--workers", type=int, help="worker processes (overrides STRESSLAB_THREADS)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--copies", type=int, default=0, help="jittered variants per catalog entry")
    g.add_argument("--dedupe-zero", action="store_true", help="keep one q=0 sample per geometry")
    g.add_argument("--youngs", type=float, default=200_000.0)
    g.add_argument("--poisson", type=float, default=0.3)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve one problem")
    s.add_argument("--problem", help="problem file with a [problem] section")
    s.add_argument("--catalog")
    s.add_argument("--entry")
    s.add_argument("--q", type=float)
    s.add_argument("--theta", type=float)
    s.add_argument("--youngs", type=float, default=200_000.0)
    s.add_argument("--poisson", type=float, default=0.3)
    s.add_argument("--out-raw")
    s.add_argument("--out-img")
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("train", help="train a surrogate")
    t.add_argument("--arch", choices=models.ARCHS, required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--split", type=float, default=0.8)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch", type=int, default=256)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--gamma", type=float, default=0.97)
    t.add_argument("--decay-steps", type=int, default=100)
    t.add_argument("--widths", type=_widths)
    t.add_argument("--target-scale", type=float, default=1.0)
    t.add_argument("--keep-best", action="store_true")
    t.add_argument("--out", required=True)
    t.add_argument("--log")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--model")
    e.add_argument("--predictions", help="raw f32 fields N x H x W instead of a model")
    e.add_argument("--data", required=True)
    e.add_argument("--subset", choices=("all", "train", "test"), default="all")
    e.add_argument("--solid-only", action="store_true")
    e.add_argument("--report")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict one sample")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--out-raw")
    p.add_argument("--out-img")
    p.set_defaults(func=cmd_predict)
    return ap


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: usage-error: {exc}", file=sys.stderr)
        return 2
    except StressLabError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
