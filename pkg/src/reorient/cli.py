"""Command-line entry points for the full experiment pipeline.

Every training/eval subcommand reads an optional ``key = value`` config
file (--config) plus repeatable --set key=value overrides; unknown keys
are rejected rather than ignored.  Exit codes: 0 success, 1 user error
(bad arguments, missing artifacts, malformed config), 2 internal error.
"""

import argparse
import json
import os
import sys
import traceback

from . import env as E
from . import pipeline as P
from .config import apply_kv, load_kv, parse_kv_text
from .plots import emit_plots


def _add_common(sp):
    sp.add_argument("--config", help="key = value config file")
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config field (repeatable)")
    sp.add_argument("--out", help="output directory for run artifacts")
    sp.add_argument("--objects", help="object-set JSON path")
    sp.add_argument("--seed", type=int, help="master seed")


def _add_resume(sp):
    sp.add_argument("--resume", action="store_true",
                    help="continue from the run's training-state checkpoint")


def build_parser():
    p = argparse.ArgumentParser(
        prog="reorient",
        description="train, distill, and evaluate in-hand reorientation policies")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-objects", help="generate a procedural object set")
    g.add_argument("--family", default="EgadLike",
                   choices=("EgadLike", "YcbLike"))
    g.add_argument("--n-base", type=int, default=8)
    g.add_argument("--variants", type=int, default=4)
    g.add_argument("--holdout-base", type=int, default=0,
                   help="held-out base shapes (0 = family default)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output JSON path")
    g.set_defaults(fn=_cmd_gen_objects)

    t = sub.add_parser("train-teacher",
                       help="PPO teacher on full observations")
    _add_common(t)
    _add_resume(t)
    t.set_defaults(fn=_cmd_train, base={
        "task": E.TASK_REORIENT, "obs": "full", "run_name": "teacher"})

    l = sub.add_parser("train-lift", help="PPO lift policy (tabletop grasps)")
    _add_common(l)
    _add_resume(l)
    l.set_defaults(fn=_cmd_train, base={
        "scenario": E.HAND_DOWN_TABLE, "task": E.TASK_LIFT, "obs": "full",
        "run_name": "lift"})

    b = sub.add_parser("build-posebank",
                       help="harvest stable grasps with a trained lift policy")
    _add_common(b)
    b.add_argument("--checkpoint", help="lift policy checkpoint")
    b.add_argument("--entries", type=int, help="target grasps per object")
    b.set_defaults(fn=_cmd_posebank, base={
        "scenario": E.HAND_DOWN_TABLE, "task": E.TASK_LIFT,
        "run_name": "posebank"})

    d = sub.add_parser("train-downair",
                       help="PPO teacher in the hand-facing-down scenario")
    _add_common(d)
    _add_resume(d)
    d.add_argument("--g-curriculum", action="store_true",
                   help="start weightless and ramp gravity down on success")
    d.add_argument("--init", choices=("default", "posebank"),
                   help="episode initialization mode")
    d.add_argument("--pose-bank", help="pose-bank JSON (for --init posebank)")
    d.set_defaults(fn=_cmd_train_downair, base={
        "scenario": E.HAND_DOWN_AIR, "task": E.TASK_REORIENT, "obs": "full",
        "run_name": "downair"})

    s = sub.add_parser("distill-student",
                       help="distill a teacher into a reduced-observation student")
    _add_common(s)
    _add_resume(s)
    s.add_argument("--teacher", help="teacher policy checkpoint")
    s.set_defaults(fn=_cmd_distill, base={"run_name": "student"})

    ev = sub.add_parser("eval", help="evaluate a policy checkpoint")
    _add_common(ev)
    ev.add_argument("--checkpoint", help="policy checkpoint to evaluate")
    ev.add_argument("--episodes", type=int, help="episodes per object")
    ev.add_argument("--seeds", type=int, help="independent eval seeds")
    ev.add_argument("--criterion", choices=("state", "vision"))
    ev.add_argument("--split", choices=("train", "holdout", "all"))
    ev.add_argument("--pose-bank", help="pose-bank JSON for bank-init envs")
    ev.set_defaults(fn=_cmd_eval, base={"run_name": "eval"}, cross=False)

    xv = sub.add_parser("xeval",
                        help="zero-shot evaluation on a foreign object set")
    _add_common(xv)
    xv.add_argument("--checkpoint", help="policy checkpoint to evaluate")
    xv.add_argument("--test-objects", required=True,
                    help="object-set JSON the policy never trained on")
    xv.add_argument("--episodes", type=int, help="episodes per object")
    xv.add_argument("--seeds", type=int, help="independent eval seeds")
    xv.add_argument("--criterion", choices=("state", "vision"))
    xv.add_argument("--split", choices=("train", "holdout", "all"))
    xv.set_defaults(fn=_cmd_eval, base={"run_name": "xeval"}, cross=True)

    r = sub.add_parser("report",
                       help="aggregate eval reports and render metric plots")
    r.add_argument("reports", nargs="*", help="eval-report JSON files")
    r.add_argument("--metrics", nargs="*", default=[],
                   help="metrics JSONL files to plot")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--force", action="store_true",
                   help="aggregate despite mismatched config hashes")
    r.set_defaults(fn=_cmd_report)

    return p


def _run_config(args, flags=()):
    """RunConfig from subcommand base -> config file -> --set -> flags."""
    kv = dict(getattr(args, "base", {}))
    if args.config:
        kv.update(load_kv(args.config))
    override_text = "\n".join(args.set)
    kv.update(parse_kv_text(override_text, origin="--set"))
    for field, value in flags:
        if value is not None:
            kv[field] = value
    kv = {k: str(v) if not isinstance(v, str) else v for k, v in kv.items()}
    return apply_kv(P.RunConfig(), kv)


def _common_flags(args):
    flags = [("out_dir", getattr(args, "out", None)),
             ("objects", getattr(args, "objects", None)),
             ("seed", getattr(args, "seed", None))]
    return flags


def _print_summary(summary):
    print(json.dumps(summary, sort_keys=True, indent=1, default=str))


def _cmd_gen_objects(args):
    cfg = P.GenObjectsConfig(
        family=args.family, n_base=args.n_base, variants=args.variants,
        holdout_base=args.holdout_base, seed=args.seed, out=args.out)
    _print_summary(P.gen_objects(cfg))
    return 0


def _cmd_train(args):
    cfg = _run_config(args, _common_flags(args))
    _print_summary(P.train(cfg, resume=args.resume))
    return 0


def _cmd_train_downair(args):
    flags = _common_flags(args)
    if args.g_curriculum:
        flags.append(("g_curriculum", "true"))
    if args.init:
        flags.append(("init_mode",
                      E.INIT_POSE_BANK if args.init == "posebank"
                      else E.INIT_DEFAULT))
    flags.append(("pose_bank", args.pose_bank))
    cfg = _run_config(args, flags)
    _print_summary(P.train(cfg, resume=args.resume))
    return 0


def _cmd_posebank(args):
    flags = _common_flags(args)
    flags.append(("checkpoint", args.checkpoint))
    flags.append(("bank_entries", args.entries))
    cfg = _run_config(args, flags)
    _print_summary(P.build_posebank(cfg))
    return 0


def _cmd_distill(args):
    flags = _common_flags(args)
    flags.append(("teacher", args.teacher))
    cfg = _run_config(args, flags)
    _print_summary(P.distill_student(cfg, resume=args.resume))
    return 0


def _cmd_eval(args):
    flags = _common_flags(args)
    flags.append(("checkpoint", args.checkpoint))
    flags.append(("eval_episodes", args.episodes))
    flags.append(("eval_seeds", args.seeds))
    flags.append(("criterion", args.criterion))
    flags.append(("split", args.split))
    flags.append(("pose_bank", getattr(args, "pose_bank", None)))
    cfg = _run_config(args, flags)
    if cfg.eval_episodes < 1:
        raise ValueError("evaluation needs at least one episode per object")
    cross = getattr(args, "test_objects", None) if args.cross else None
    report, path = P.evaluate_policy(cfg, cross_set=cross)
    _print_summary({"report": path, "success_mean": report.success_mean,
                    "success_std": report.success_std,
                    "drop_rate": report.drop_rate})
    return 0


def _cmd_report(args):
    if not args.reports and not args.metrics:
        raise ValueError("report needs eval-report files and/or --metrics files")
    out = {}
    os.makedirs(args.out, exist_ok=True)
    if args.reports:
        merged = P.aggregate_reports(args.reports, force=args.force)
        path = os.path.join(args.out, "report.json")
        with open(path, "w") as f:
            json.dump(merged, f, sort_keys=True, indent=1)
            f.write("\n")
        out["report"] = path
        out.update({k: merged[k] for k in ("grand_mean", "grand_std")})
    if args.metrics:
        out["plots"] = emit_plots(args.metrics, args.out)
    _print_summary(out)
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage problems; that's a user error here
        return 0 if not e.code else 1
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as e:
        print(f"internal error: {e}", file=sys.stderr)
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
