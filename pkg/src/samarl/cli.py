"""Command-line driver: train / evaluate / probe-attention / render.

Flag precedence: CLI flags > --config document > defaults. The output root
directory can be set with the SAMARL_OUT_ROOT environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import ExperimentConfig
from .model import ALGOS
from .noise import REGIMES


def _out_root() -> Path:
    return Path(os.environ.get("SAMARL_OUT_ROOT", "runs"))


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config document; flags override it")
    p.add_argument("--env", dest="map", help="built-in map name or map file path")
    p.add_argument("--algo", choices=ALGOS)
    p.add_argument("--noise", choices=REGIMES)
    p.add_argument("--R", dest="window", type=int, help="observation window side")
    p.add_argument("--profile", choices=("exp1", "exp2"))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--objects", dest="n_objects", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-final", dest="lr_final", type=float,
                   help="switch to this learning rate late in training")
    p.add_argument("--lr-decay-at", dest="lr_decay_at", type=float,
                   help="epoch fraction at which --lr-final takes over")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--target-sync-every", dest="target_sync_every", type=int)
    p.add_argument("--out", dest="out_dir", help="run directory")
    p.add_argument("--progress", type=int, default=0,
                   help="print a progress line every N epochs")


def cmd_train(args) -> int:
    overrides = {k: getattr(args, k) for k in ExperimentConfig.__dataclass_fields__
                 if hasattr(args, k)}
    cfg = harness.resolve_config(overrides, args.config)
    if cfg.out_dir is None:
        cfg.out_dir = str(_out_root() / f"{cfg.algo}_{cfg.noise}_seed{cfg.seed}")
    out = harness.run_experiment(cfg, progress=args.progress or None)
    print(f"run directory: {out}")
    return 0


def cmd_evaluate(args) -> int:
    result = harness.evaluate_policy(args.run_dir, episodes=args.episodes,
                                     seed=args.seed)
    print(result.summary_row())
    for i, count in sorted(result.per_agent_objects.items()):
        print(f"agent {i}: {count} objects")
    if args.heatmap_dir:
        hm_dir = Path(args.heatmap_dir)
        hm_dir.mkdir(parents=True, exist_ok=True)
        for i, grid in result.collection_heatmaps.items():
            pgm, text = harness.render_heatmap(grid)
            (hm_dir / f"agent{i}.pgm").write_text(pgm)
            (hm_dir / f"agent{i}.txt").write_text(text)
        print(f"collection heatmaps written to {hm_dir}")
    return 0


def cmd_probe(args) -> int:
    cfg = ExperimentConfig.from_json((Path(args.run_dir) / "metadata.json").read_text())
    states = harness.probe_states(cfg, count=args.count, seed=args.seed)
    out = Path(args.out or (Path(args.run_dir) / "probes"))
    out.mkdir(parents=True, exist_ok=True)
    for k, state in enumerate(states):
        probe = harness.probe_attention(args.run_dir, state, agent=args.agent,
                                        noise_seed=args.seed + k)
        (out / f"probe{k}.txt").write_text(harness.format_probe_document(probe))
    print(f"{len(states)} probe documents written to {out}")
    return 0


def cmd_render(args) -> int:
    grid = harness.parse_grid_text(Path(args.grid).read_text())
    pgm, _ = harness.render_heatmap(grid)
    Path(args.out).write_text(pgm)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="samarl")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one experiment arm")
    _add_train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="greedy evaluation of a trained run")
    p_eval.add_argument("run_dir")
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=1234)
    p_eval.add_argument("--heatmap-dir", help="write per-agent collection heatmaps")
    p_eval.set_defaults(func=cmd_evaluate)

    p_probe = sub.add_parser("probe-attention", help="export attention heatmaps")
    p_probe.add_argument("run_dir")
    p_probe.add_argument("--agent", type=int, default=0)
    p_probe.add_argument("--count", type=int, default=1)
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.add_argument("--out")
    p_probe.set_defaults(func=cmd_probe)

    p_render = sub.add_parser("render", help="render a grid text file to PGM")
    p_render.add_argument("grid")
    p_render.add_argument("out")
    p_render.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
