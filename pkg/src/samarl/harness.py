"""Experiment driver and analysis tooling: config resolution, training arms,
greedy policy evaluation with per-agent collection heatmaps, attention-heatmap
probing, and deterministic heatmap rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import gridworld, noise
from .autodiff import no_tape
from .checkpoint import restore_params
from .config import ExperimentConfig
from .learner import run_training
from .model import NetConfig, build_network, extract_heatmap
from .noise import ring_mask

EXP1_ALGOS = ("da3-iqn", "iqn", "da3-dqn", "dqn")
EXP1_REGIMES = ("noiseless", "large-marginal", "small-marginal", "small-full")


def resolve_config(overrides: Optional[dict] = None,
                   config_path: Optional[str] = None) -> ExperimentConfig:
    """CLI flags override config-document values override defaults."""
    merged: dict = {}
    if config_path:
        merged.update(json.loads(Path(config_path).read_text()))
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig.from_dict(merged)
    return cfg.validate()


def run_experiment(cfg: ExperimentConfig, progress: Optional[int] = None) -> Path:
    """Train one arm; the run directory is self-describing (metadata.json
    reproduces metrics.csv byte-for-byte)."""
    if cfg.out_dir is None:
        cfg.out_dir = f"runs/{cfg.algo}_{cfg.noise}_seed{cfg.seed}"
    artifacts = run_training(cfg, progress=progress)
    return artifacts["out_dir"]


def _load_run(run_dir) -> tuple[ExperimentConfig, dict]:
    run_dir = Path(run_dir)
    cfg = ExperimentConfig.from_json((run_dir / "metadata.json").read_text())
    gmap = cfg.load_map()
    n = len(gmap.spawn_points)
    wanderers = cfg.wanderers if cfg.wanderers is not None else gmap.default_wanderers
    net_cfg = NetConfig(
        algo=cfg.algo, n_channels=cfg.n_channels(n), window=cfg.window,
        patch=cfg.patch, embed_dim=cfg.embed_dim, heads=cfg.heads,
        loops=cfg.loops, ff_mult=cfg.ff_mult, n_cos=cfg.n_cos,
        share_loop_params=cfg.share_loop_params)
    nets = {}
    for i in range(n):
        if i in wanderers:
            continue
        ckpt = run_dir / "checkpoints" / f"agent{i}"
        if not ckpt.exists():
            raise FileNotFoundError(f"missing checkpoint for agent {i}: {ckpt}")
        net = build_network(net_cfg, np.random.default_rng(0))
        restore_params(net.params, ckpt)
        nets[i] = net
    return cfg, {"map": gmap, "nets": nets, "wanderers": list(wanderers), "n": n}


def _greedy_action(net, obs_channels: np.ndarray, n_taus: int) -> int:
    with no_tape():
        x = obs_channels.astype(np.float64)[None]
        if net.cfg.distributional:
            taus = ((np.arange(n_taus) + 0.5) / n_taus)[None]
            q, _ = net.forward(x, taus=taus)
            values = q.data.mean(axis=1)[0]
        else:
            q, _ = net.forward(x)
            values = q.data[0]
    return int(np.argmax(values))


@dataclass
class EvaluationResult:
    episodes: int
    objects_mean: float
    objects_std: float
    agent_coll_mean: float
    agent_coll_std: float
    wall_coll_mean: float
    wall_coll_std: float
    per_agent_objects: dict[int, int] = field(default_factory=dict)
    collection_heatmaps: dict[int, np.ndarray] = field(default_factory=dict)

    def summary_row(self) -> str:
        return (f"Objects collected {self.objects_mean:.2f}+/-{self.objects_std:.2f}  "
                f"Agents collision {self.agent_coll_mean:.2f}+/-{self.agent_coll_std:.2f}  "
                f"Walls collision {self.wall_coll_mean:.2f}+/-{self.wall_coll_std:.2f}")


def evaluate_policy(run_dir, episodes: int, seed: int = 1234) -> EvaluationResult:
    """Greedy (epsilon=0) rollouts from a trained run; accumulates per-agent
    collection heatmaps (wanderers included, necessarily all-zero)."""
    cfg, ctx = _load_run(run_dir)
    gmap, nets, n = ctx["map"], ctx["nets"], ctx["n"]
    wcfg = gridworld.WorldConfig(
        n_objects=cfg.n_objects, reward_collect=cfg.reward_collect,
        reward_collision=cfg.reward_collision, horizon=cfg.horizon,
        wanderer_ids=ctx["wanderers"])
    spec = cfg.noise_spec()
    root = np.random.SeedSequence(seed)
    env_ss, noise_ss, wander_ss = root.spawn(3)
    env_rng = np.random.default_rng(env_ss)
    noise_rngs = {i: np.random.default_rng(s)
                  for i, s in enumerate(noise_ss.spawn(n))}
    wander_rngs = {i: np.random.default_rng(s)
                   for i, s in enumerate(wander_ss.spawn(n))}
    heatmaps = {i: np.zeros((gmap.height, gmap.width), dtype=np.int64) for i in range(n)}
    per_agent_objects = {i: 0 for i in range(n)}
    ep_objects, ep_acoll, ep_wcoll = [], [], []
    for _ in range(episodes):
        state = gridworld.reset(gmap, wcfg, env_rng)
        tot_o = tot_a = tot_w = 0
        for _t in range(cfg.horizon):
            actions = []
            for i in range(n):
                if state.wanderer_flags[i]:
                    actions.append(gridworld.wanderer_policy(state, i, wander_rngs[i]))
                else:
                    obs = gridworld.encode_observation(state, i, cfg.window, cfg.profile)
                    obs = noise.apply_noise(obs, spec, noise_rngs[i])
                    actions.append(_greedy_action(nets[i], obs.channels, cfg.n_taus))
            outcome = gridworld.step(state, actions)
            for i in range(n):
                if outcome.collected[i]:
                    y, x = state.agent_positions[i]
                    heatmaps[i][y, x] += 1
                    per_agent_objects[i] += 1
            tot_o += sum(outcome.collected)
            tot_a += sum(outcome.agent_collision)
            tot_w += sum(outcome.wall_collision)
        ep_objects.append(tot_o)
        ep_acoll.append(tot_a)
        ep_wcoll.append(tot_w)
    return EvaluationResult(
        episodes=episodes,
        objects_mean=float(np.mean(ep_objects)), objects_std=float(np.std(ep_objects)),
        agent_coll_mean=float(np.mean(ep_acoll)), agent_coll_std=float(np.std(ep_acoll)),
        wall_coll_mean=float(np.mean(ep_wcoll)), wall_coll_std=float(np.std(ep_wcoll)),
        per_agent_objects=per_agent_objects, collection_heatmaps=heatmaps)


# ---------------------------------------------------------------------------
# attention probing
# ---------------------------------------------------------------------------

def probe_states(cfg: ExperimentConfig, count: int, seed: int,
                 steps_between: int = 5) -> list[gridworld.WorldState]:
    """Deterministic probe states sampled by rolling random actions forward."""
    gmap = cfg.load_map()
    wanderers = cfg.wanderers if cfg.wanderers is not None else gmap.default_wanderers
    wcfg = gridworld.WorldConfig(
        n_objects=cfg.n_objects, reward_collect=cfg.reward_collect,
        reward_collision=cfg.reward_collision, horizon=10 ** 9,
        wanderer_ids=list(wanderers))
    rng = np.random.default_rng(seed)
    states = []
    for _ in range(count):
        state = gridworld.reset(gmap, wcfg, rng)
        for _k in range(steps_between):
            gridworld.step(state, rng.integers(4, size=state.n_agents))
        states.append(state)
    return states


def probe_attention(run_dir, state: gridworld.WorldState, agent: int,
                    noise_seed: int = 0) -> dict:
    """One forward pass with attention capture for a probed agent.

    Returns the noisy observation channels, per-head and mean saliency
    heatmaps, and the greedy action.
    """
    cfg, ctx = _load_run(run_dir)
    if agent not in ctx["nets"]:
        raise ValueError(f"agent {agent} has no trained network in {run_dir}")
    net = ctx["nets"][agent]
    if not net.cfg.attentive:
        raise ValueError(f"algorithm {cfg.algo} has no attention to probe")
    obs = gridworld.encode_observation(state, agent, cfg.window, cfg.profile)
    obs = noise.apply_noise(obs, cfg.noise_spec(), np.random.default_rng(noise_seed))
    with no_tape():
        x = obs.channels.astype(np.float64)[None]
        if net.cfg.distributional:
            taus = ((np.arange(cfg.n_taus) + 0.5) / cfg.n_taus)[None]
            q, record = net.forward(x, taus=taus, capture=True)
            values = q.data.mean(axis=1)[0]
        else:
            q, record = net.forward(x, capture=True)
            values = q.data[0]
    side = net.cfg.grid_side
    per_head = [g[0] for g in extract_heatmap(record, side, reduce="per-head")]
    mean = extract_heatmap(record, side, reduce="mean")[0]
    return {
        "agent": agent,
        "observation": obs.channels,
        "per_head": per_head,
        "mean": mean,
        "action": gridworld.ACTION_NAMES[int(np.argmax(values))],
    }


def format_probe_document(probe: dict) -> str:
    """Structured-text export: observation channels, per-head grids, mean
    grid and the chosen action, reals as 6-decimal fixed point."""
    lines = [f"agent {probe['agent']}", f"action {probe['action']}"]
    obs = probe["observation"]
    for c in range(obs.shape[0]):
        lines.append(f"channel {c}")
        for row in obs[c]:
            lines.append(" ".join(f"{int(v):d}" for v in row))
    for h, grid in enumerate(probe["per_head"]):
        lines.append(f"head {h}")
        for row in grid:
            lines.append(" ".join(f"{v:.6f}" for v in row))
    lines.append("mean")
    for row in probe["mean"]:
        lines.append(" ".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


def attention_ring_masses(mean_grid: np.ndarray) -> dict:
    """Mass of the mean saliency heatmap on the outermost Chebyshev ring vs
    the interior (everything inside that ring)."""
    R = mean_grid.shape[0]
    outer = ring_mask(R, R // 2)
    return {"outer": float(mean_grid[outer].sum()),
            "inner": float(mean_grid[~outer].sum())}


def top_cells(mean_grid: np.ndarray, k: int = 5) -> list[tuple[int, int]]:
    flat = np.argsort(mean_grid, axis=None)[::-1][:k]
    return [tuple(np.unravel_index(i, mean_grid.shape)) for i in flat]


def has_neighbor_in_top(mean_grid: np.ndarray, k: int = 5) -> bool:
    """True when a 4-neighbor of the window center is among the top-k cells."""
    r = mean_grid.shape[0] // 2
    neigh = {(r - 1, r), (r + 1, r), (r, r + 1), (r, r - 1)}
    return bool(neigh & set(top_cells(mean_grid, k)))


# ---------------------------------------------------------------------------
# rendering + arm comparison
# ---------------------------------------------------------------------------

def render_heatmap(grid: np.ndarray) -> tuple[str, str]:
    """Deterministic rendering: (P2 portable graymap, exact text emission)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty grid")
    if not np.isfinite(grid).all() or (grid < 0).any():
        raise ValueError("grid must be finite and non-negative")
    lo, hi = grid.min(), grid.max()
    span = hi - lo
    norm = np.zeros_like(grid) if span == 0 else (grid - lo) / span
    pix = np.round(norm * 255).astype(int)
    h, w = grid.shape
    pgm = [f"P2", f"{w} {h}", "255"]
    pgm += [" ".join(str(v) for v in row) for row in pix]
    text = [f"{w} {h}"]
    text += [" ".join(repr(float(v)) for v in row) for row in grid]
    return "\n".join(pgm) + "\n", "\n".join(text) + "\n"


def parse_grid_text(text: str) -> np.ndarray:
    lines = text.strip().splitlines()
    w, h = (int(v) for v in lines[0].split())
    rows = [[float(tok) for tok in ln.split()] for ln in lines[1:]]
    grid = np.array(rows, dtype=np.float64)
    if grid.shape != (h, w):
        raise ValueError(f"grid text dimensions {grid.shape} do not match header {(h, w)}")
    return grid


def summarize_run(run_dir, last_episodes: int = 100) -> dict:
    """Mean collected objects (team total per episode) over the final episodes."""
    run_dir = Path(run_dir)
    cfg = ExperimentConfig.from_json((run_dir / "metadata.json").read_text())
    rows = (run_dir / "metrics.csv").read_text().strip().splitlines()[1:]
    totals = [r.split(",") for r in rows if r.split(",")[1] == "total"]
    tail = totals[-last_episodes:]
    return {
        "algo": cfg.algo, "noise": cfg.noise, "seed": cfg.seed,
        "episodes": len(tail),
        "objects": float(np.mean([int(r[3]) for r in tail])),
        "reward": float(np.mean([float(r[2]) for r in tail])),
    }


def compare_exp1_arms(run_dirs) -> dict:
    """Group Exp.1 runs by (algo, noise); refuse unless every algorithm ran
    under the same seed set."""
    summaries = [summarize_run(d) for d in run_dirs]
    seeds_by_algo: dict[str, set] = {}
    for s in summaries:
        seeds_by_algo.setdefault(s["algo"], set()).add(s["seed"])
    seed_sets = {frozenset(v) for v in seeds_by_algo.values()}
    if len(seed_sets) != 1:
        raise ValueError(f"incomplete arm matrix: seed sets differ {seeds_by_algo}")
    table: dict[tuple[str, str], list[float]] = {}
    for s in summaries:
        table.setdefault((s["algo"], s["noise"]), []).append(s["objects"])
    return {k: float(np.mean(v)) for k, v in table.items()}
