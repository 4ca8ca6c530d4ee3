"""Command-line entry point: ``demoscore <command> [--config PATH] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from demoscore import config as config_mod
from demoscore import pipeline
from demoscore.config import ConfigError
from demoscore.imitation import VARIANTS
from demoscore.pipeline import StageError


def _csv_list(text: str, cast=str):
    return [cast(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="demoscore", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", type=Path, help="experiment config or manifest (JSON)")
        sp.add_argument("--family", choices=sorted(config_mod.FAMILY_DEFAULTS),
                        help="use this family's defaults when no --config is given")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", type=Path, required=out_required, help="output directory")

    sp = sub.add_parser("init-config", help="write a fully spelled-out default config")
    common(sp, out_required=False)
    sp.add_argument("path", type=Path)

    common(sub.add_parser("gen-demos", help="generate demonstrations and feasible samples"))
    common(sub.add_parser("score", help="fit inverse dynamics and score every demonstration"))

    sp = sub.add_parser("train-eval", help="train one weighting variant and evaluate it")
    common(sp)
    sp.add_argument("--variant", choices=VARIANTS, required=True)

    sp = sub.add_parser("pipeline", help="gen-demos, score and train-eval in one go")
    common(sp)
    sp.add_argument("--variants", type=_csv_list, help="comma-separated variants")

    sp = sub.add_parser("ablate", help="full pipeline over variants x seeds")
    common(sp)
    sp.add_argument("--variants", type=_csv_list)
    sp.add_argument("--seeds", type=lambda s: _csv_list(s, int))

    sp = sub.add_parser("sweep", help="scale sigma or delta_s and retrain")
    common(sp)
    sp.add_argument("--param", choices=("sigma", "delta_s"))
    sp.add_argument("--factors", type=lambda s: _csv_list(s, float))
    sp.add_argument("--seeds", type=lambda s: _csv_list(s, int))
    sp.add_argument("--variants", type=_csv_list, default=["ours"])
    return p


def resolve_config(args) -> config_mod.ExperimentConfig:
    if args.config is not None:
        cfg = config_mod.load(args.config)
    else:
        cfg = config_mod.default_config(args.family or "driving2d")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _check_variants(names):
    bad = [v for v in names or [] if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variant(s) {bad}; choose from {VARIANTS}")


def run(args) -> int:
    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "init-config":
        config_mod.save(cfg, args.path)
        print(f"wrote {args.path}")
        return 0
    out = args.out
    if cmd == "gen-demos":
        counts = pipeline.cmd_gen_demos(cfg, out)
        print(json.dumps(counts))
    elif cmd == "score":
        scores = pipeline.cmd_score(cfg, out)
        print(f"scored {len(scores.tags)} demonstrations -> {out / pipeline.SCORES}")
    elif cmd == "train-eval":
        rep = pipeline.cmd_train_eval(cfg, out, args.variant)
        print(f"{args.variant}: mean {rep.mean:.3f} std {rep.std:.3f} over {rep.n} episodes")
    elif cmd == "pipeline":
        _check_variants(args.variants)
        for row in pipeline.cmd_pipeline(cfg, out, args.variants):
            print(f"{row['variant']}: mean {row['mean']:.3f} std {row['std']:.3f}")
    elif cmd == "ablate":
        _check_variants(args.variants)
        pipeline.cmd_ablate(cfg, out, args.variants, args.seeds)
        print(f"wrote {out / 'ablation.csv'}")
    elif cmd == "sweep":
        _check_variants(args.variants)
        pipeline.cmd_sweep(cfg, out, args.factors, args.seeds, args.variants, args.param)
        print(f"wrote {out / 'sweep_summary.csv'}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ConfigError as exc:
        print(f"demoscore: error [config] {exc}", file=sys.stderr)
    except StageError as exc:
        print(f"demoscore: error {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"demoscore: error [io] {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
