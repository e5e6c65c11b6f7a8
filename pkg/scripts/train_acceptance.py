#!/usr/bin/env python3
"""Populate the acceptance-run cache used by the slow acceptance tests.

Trains the reduced-arm comparison matrix (two algorithms x two noise regimes
x three seeds), one wide-window outer-ring-noise arm for attention probing,
and one short coordination-profile run. Existing runs are skipped; every run
is byte-reproducible from its emitted metadata, so the cache is equivalent
to retraining inside the tests, just paid once.

Several hours of single-core compute on first use. Override the cache
location with SAMARL_ACCEPTANCE_DIR.
"""

import os
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from samarl.config import ExperimentConfig
from samarl.learner import run_training

ACC_DIR = Path(os.environ.get("SAMARL_ACCEPTANCE_DIR",
                              Path(__file__).resolve().parent.parent / "acceptance_runs"))

REDUCED_ARM = dict(map="reduced", window=7, profile="exp1", epochs=600,
                   horizon=50, n_objects=10, batch_size=16, lr=1e-3,
                   lr_final=2e-4, lr_decay_at=0.7, target_sync_every=500,
                   eps_final=0.01)
DA3_EXTRA = dict(loops=2)


def jobs():
    for algo in ("dqn", "da3-dqn"):
        extra = DA3_EXTRA if algo.startswith("da3") else {}
        for noise in ("small-full", "noiseless"):
            for seed in (0, 1, 2):
                yield ExperimentConfig(algo=algo, noise=noise, seed=seed,
                                       **REDUCED_ARM, **extra,
                                       out_dir=str(ACC_DIR / f"{algo}_{noise}_r7_seed{seed}"))
    yield ExperimentConfig(algo="da3-dqn", noise="large-marginal", seed=0,
                           **{**REDUCED_ARM, "window": 9}, **DA3_EXTRA,
                           out_dir=str(ACC_DIR / "da3-dqn_large-marginal_r9_seed0"))
    yield ExperimentConfig(map="simple", algo="da3-dqn", noise="noiseless",
                           window=7, profile="exp2", seed=0, epochs=8,
                           horizon=30, n_objects=25, batch_size=8,
                           embed_dim=16, heads=2,
                           out_dir=str(ACC_DIR / "exp2_mechanics"))


def main():
    for cfg in jobs():
        out = Path(cfg.out_dir)
        if (out / "metrics.csv").exists():
            print(f"skip   {out.name}")
            continue
        t0 = time.time()
        print(f"train  {out.name} ...", flush=True)
        run_training(cfg)
        print(f"done   {out.name} in {(time.time() - t0) / 60:.1f} min", flush=True)


if __name__ == "__main__":
    main()
