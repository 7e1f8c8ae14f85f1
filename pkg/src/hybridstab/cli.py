"""Command-line entry point: ``hybridstab {train,eval,radial,drift,noise}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, ExperimentConfig, load_config
from .experiments import load_agent, run_drift, run_eval, run_noise_sweep, run_radial, run_train
from .ppo import CheckpointError

log = logging.getLogger("hybridstab")

RATIO_CHOICES = ("0", "1/8", "1/4", "1/2", "1")


def _common(p: argparse.ArgumentParser, checkpoint: bool = True) -> None:
    p.add_argument("--config", type=Path, default=None, help="YAML experiment configuration (defaults if omitted)")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides train.seed)")
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides the config's out)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    if checkpoint:
        p.add_argument("--checkpoint", type=Path, default=None,
                       help="trained model; the analytical baseline is evaluated when omitted")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridstab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a residual policy and write learning curves")
    _common(p, checkpoint=False)
    p.add_argument("--ratio", choices=RATIO_CHOICES, default=None, help="symmetry augmentation ratio")

    p = sub.add_parser("eval", help="deterministic evaluation (duration, NNI, MSI)")
    _common(p)
    p.add_argument("--scenario", choices=("l1", "l2", "t1"), default=None)
    p.add_argument("--episodes", type=int, default=None)

    p = sub.add_parser("radial", help="maximum recoverable push per direction")
    _common(p)
    p = sub.add_parser("drift", help="500 s walk-in-place drift test")
    _common(p)
    p = sub.add_parser("noise", help="duration versus multiplicative observation noise")
    _common(p)
    return ap


def _resolve(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "ratio", None) is not None:
        cfg = cfg.with_ratio(args.ratio)
    if getattr(args, "scenario", None) is not None:
        cfg = cfg.with_scenario(args.scenario)
    out = args.out if args.out is not None else Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return cfg, out


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg, out = _resolve(args)
        agent = None
        if getattr(args, "checkpoint", None) is not None:
            agent = load_agent(args.checkpoint)
        if args.command == "train":
            art = run_train(cfg, out, log=log.info)
            print(f"checkpoint {art.checkpoint}")
            print(f"curves {art.curve_csv} {art.eval_curve_csv}")
        elif args.command == "eval":
            rep = run_eval(agent, cfg, out, episodes=args.episodes)
            print(f"{rep.scenario}: mean duration {rep.mean_duration:.2f} s over {rep.episodes} episodes, "
                  f"NNI {rep.mean_nni:.3f}, MSI {rep.mean_msi:.3f}, falls {rep.falls}")
        elif args.command == "radial":
            rows = run_radial(agent, cfg, out)
            for deg, f in rows:
                print(f"{deg:6.1f} deg  {f:8.1f} N")
        elif args.command == "drift":
            d = run_drift(agent, cfg, out)
            print(f"travelled {d.distance:.3f} m in {d.duration:.1f} s" + (" (fell)" if d.fell else ""))
        elif args.command == "noise":
            for pct, dur in run_noise_sweep(agent, cfg, out):
                print(f"noise {pct:5.1f} %  mean duration {dur:.2f} s")
    except (ConfigError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
