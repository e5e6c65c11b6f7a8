#!/usr/bin/env python3
"""Probe where a trained attentive agent looks: capture the saliency token's
attention over the observation window, print the probe document, and write a
PGM image of the mean heatmap.

Pass a run directory from demo 03 (or `samarl train`); with no argument a
quick throwaway model is trained first.

    python3 demos/04_attention_probe.py [run_dir]
"""

import sys
import tempfile
from pathlib import Path

from samarl.config import ExperimentConfig
from samarl.harness import (attention_ring_masses, format_probe_document,
                            has_neighbor_in_top, probe_attention, probe_states,
                            render_heatmap, run_experiment)


def main():
    if len(sys.argv) > 1:
        run_dir = Path(sys.argv[1])
    else:
        out = tempfile.mkdtemp(prefix="demo_probe_")
        print("No run directory given; training a quick model first ...")
        cfg = ExperimentConfig(map="reduced", algo="da3-dqn", noise="small-full",
                               window=7, seed=0, epochs=30, horizon=50,
                               n_objects=10, batch_size=16, lr=3e-4,
                               out_dir=out)
        run_dir = run_experiment(cfg, progress=10)

    cfg = ExperimentConfig.from_json((run_dir / "metadata.json").read_text())
    states = probe_states(cfg, count=3, seed=42)
    for k, state in enumerate(states):
        probe = probe_attention(run_dir, state, agent=0, noise_seed=k)
        masses = attention_ring_masses(probe["mean"])
        print(f"\n--- probe state {k} ---")
        print(format_probe_document(probe))
        print(f"ring masses: outer {masses['outer']:.4f}  "
              f"inner {masses['inner']:.4f}")
        print("4-neighbor of center in top-5 cells:",
              has_neighbor_in_top(probe["mean"], k=5))

    pgm, text = render_heatmap(probe["mean"])
    out_pgm = Path(tempfile.gettempdir()) / "attention_mean.pgm"
    out_pgm.write_text(pgm)
    print(f"\nWrote mean heatmap of the last probe to {out_pgm} (P2 PGM; the")
    print("exact-text form from render_heatmap round-trips via parse_grid_text).")


if __name__ == "__main__":
    main()
