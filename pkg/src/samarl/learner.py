"""Fully decentralized per-agent training: replay, epsilon-greedy behavior,
target networks, double-Q targets, plain and quantile Huber losses, and the
episode/epoch loop. Wanderers have no learner, no buffer, no network."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import gridworld, noise
from .autodiff import Graph, Tensor, no_tape
from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .model import NetConfig, build_network, parameter_count
from .optim import OptimizerState, adam_step, zero_grads


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool


class ReplayBuffer:
    """Uniform ring buffer."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._store: list[Transition] = []
        self._next = 0

    def __len__(self):
        return len(self._store)

    def add(self, tr: Transition):
        if len(self._store) < self.capacity:
            self._store.append(tr)
        else:
            self._store[self._next] = tr
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if len(self._store) < batch_size:
            raise ValueError(f"buffer holds {len(self._store)} < batch {batch_size}")
        idx = rng.integers(len(self._store), size=batch_size)
        trs = [self._store[i] for i in idx]
        return {
            "obs": np.stack([t.obs for t in trs]).astype(np.float64),
            "actions": np.array([t.action for t in trs], dtype=np.int64),
            "rewards": np.array([t.reward for t in trs], dtype=np.float64),
            "next_obs": np.stack([t.next_obs for t in trs]).astype(np.float64),
            "done": np.array([t.done for t in trs], dtype=np.float64),
        }


def select_action(net, obs: np.ndarray, epsilon: float,
                  rng: np.random.Generator, n_taus: int = 8) -> int:
    """Epsilon-greedy over online action values; quantile nets act on the
    mean over sampled tau levels. Ties break toward the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(net.cfg.n_actions))
    with no_tape():
        x = obs.astype(np.float64)[None]
        if net.cfg.distributional:
            taus = rng.uniform(0.0, 1.0, size=(1, n_taus)) * (1 - 2e-6) + 1e-6
            q, _ = net.forward(x, taus=taus)
            values = q.data.mean(axis=1)[0]
        else:
            q, _ = net.forward(x)
            values = q.data[0]
    return int(np.argmax(values))


def dqn_loss(batch: dict, online, target, gamma: float,
             double_q: bool = True, kappa: float = 1.0) -> Tensor:
    """Mean Huber loss against the (double-)Q bootstrapped target."""
    if batch["obs"].shape[0] == 0:
        raise ValueError("empty batch")
    with no_tape():
        qt, _ = target.forward(batch["next_obs"])
        if double_q:
            qo, _ = online.forward(batch["next_obs"])
            astar = qo.data.argmax(axis=1)
        else:
            astar = qt.data.argmax(axis=1)
        boot = np.take_along_axis(qt.data, astar[:, None], axis=1)[:, 0]
        y = batch["rewards"] + gamma * (1.0 - batch["done"]) * boot
    q, _ = online.forward(batch["obs"])
    qa = ad.take_along(q, batch["actions"][:, None], axis=1)
    resid = ad.sub(qa, y[:, None])
    return ad.mean(ad.huber(resid, kappa))


def iqn_loss(batch: dict, online, target, gamma: float,
             taus: np.ndarray, target_taus: np.ndarray,
             double_q: bool = True, kappa: float = 1.0) -> Tensor:
    """Pairwise quantile Huber regression between online quantile estimates
    at ``taus`` and bootstrapped target samples at ``target_taus`` for the
    double-Q-selected next action; mean over pairs and batch."""
    taus = np.asarray(taus, dtype=np.float64)
    target_taus = np.asarray(target_taus, dtype=np.float64)
    if taus.size == 0 or target_taus.size == 0:
        raise ValueError("tau sets must be non-empty")
    B = batch["obs"].shape[0]
    with no_tape():
        zt, _ = target.forward(batch["next_obs"], taus=target_taus)    # (B,K',A)
        if double_q:
            zo, _ = online.forward(batch["next_obs"], taus=target_taus)
            astar = zo.data.mean(axis=1).argmax(axis=1)
        else:
            astar = zt.data.mean(axis=1).argmax(axis=1)
        boot = np.take_along_axis(zt.data, astar[:, None, None], axis=2)[:, :, 0]
        y = batch["rewards"][:, None] + gamma * (1.0 - batch["done"][:, None]) * boot
    z, _ = online.forward(batch["obs"], taus=taus)                     # (B,K,A)
    za = ad.take_along(z, batch["actions"][:, None, None].repeat(taus.shape[1], axis=1),
                       axis=2)
    za = ad.reshape(za, (B, taus.shape[1], 1))
    u = ad.sub(y[:, None, :], za)                                      # (B,K,K')
    weight = np.abs(taus[:, :, None] - (u.data < 0.0))
    return ad.mean(ad.mul(weight, ad.scale(ad.huber(u, kappa), 1.0 / kappa)))


class AgentLearner:
    """One agent's online/target networks, optimizer state, buffer and rngs."""

    def __init__(self, agent_id: int, net_cfg: NetConfig, cfg: ExperimentConfig,
                 seed_seq: np.random.SeedSequence):
        self.agent_id = agent_id
        self.cfg = cfg
        init_ss, act_ss, noise_ss, buf_ss, tau_ss = seed_seq.spawn(5)
        self.online = build_network(net_cfg, np.random.default_rng(init_ss))
        self.target = build_network(net_cfg, np.random.default_rng(init_ss))
        sync_target(self)
        self.optimizer = OptimizerState(self.online.params, lr=cfg.lr)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.action_rng = np.random.default_rng(act_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.buffer_rng = np.random.default_rng(buf_ss)
        self.tau_rng = np.random.default_rng(tau_ss)
        self.updates = 0

    def update(self) -> float:
        cfg = self.cfg
        batch = self.buffer.sample(cfg.batch_size, self.buffer_rng)
        zero_grads(self.online.params)
        with Graph() as g:
            if self.online.cfg.distributional:
                taus = self.tau_rng.uniform(1e-6, 1.0 - 1e-6,
                                            size=(cfg.batch_size, cfg.n_taus))
                taus2 = self.tau_rng.uniform(1e-6, 1.0 - 1e-6,
                                             size=(cfg.batch_size, cfg.n_target_taus))
                loss = iqn_loss(batch, self.online, self.target, cfg.gamma,
                                taus, taus2, double_q=cfg.double_q, kappa=cfg.kappa)
            else:
                loss = dqn_loss(batch, self.online, self.target, cfg.gamma,
                                double_q=cfg.double_q, kappa=cfg.kappa)
            g.backward(loss)
        adam_step(self.optimizer)
        self.updates += 1
        if self.updates % cfg.target_sync_every == 0:
            sync_target(self)
        return float(loss.data)


def sync_target(learner: AgentLearner) -> None:
    """Target parameters become a bit-exact copy of the online parameters."""
    for name, p in learner.online.params.items():
        learner.target.params[name].data = p.data.copy()


def epsilon_at(step: int, total_steps: int, cfg: ExperimentConfig) -> float:
    decay_steps = max(1, int(cfg.eps_fraction * total_steps))
    frac = min(1.0, step / decay_steps)
    return cfg.eps_start + frac * (cfg.eps_final - cfg.eps_start)


def format_metrics_row(epoch, agent, reward, objects, agent_coll, wall_coll) -> str:
    return f"{epoch},{agent},{reward:.6f},{objects},{agent_coll},{wall_coll}"


METRICS_HEADER = "epoch,agent,episode_reward,objects,agent_collisions,wall_collisions"


def run_training(cfg: ExperimentConfig, progress: Optional[int] = None) -> dict:
    """Train all learner agents for cfg.epochs episodes.

    Returns run artifacts: metrics rows, learners, and (when cfg.out_dir is
    set) paths of the metrics file, metadata document and per-agent
    checkpoints.
    """
    cfg.validate()
    gmap = cfg.load_map()
    n = len(gmap.spawn_points)
    wanderers = cfg.wanderers if cfg.wanderers is not None else gmap.default_wanderers
    wcfg = gridworld.WorldConfig(
        n_objects=cfg.n_objects, reward_collect=cfg.reward_collect,
        reward_collision=cfg.reward_collision, horizon=cfg.horizon,
        wanderer_ids=list(wanderers))
    spec = cfg.noise_spec()
    net_cfg = NetConfig(
        algo=cfg.algo, n_channels=cfg.n_channels(n), window=cfg.window,
        patch=cfg.patch, embed_dim=cfg.embed_dim, heads=cfg.heads,
        loops=cfg.loops, ff_mult=cfg.ff_mult, n_cos=cfg.n_cos,
        share_loop_params=cfg.share_loop_params)

    root = np.random.SeedSequence(cfg.seed)
    env_ss, wander_ss, *agent_ss = root.spawn(2 + n)
    env_rng = np.random.default_rng(env_ss)
    wander_rngs = {i: np.random.default_rng(s) for i, s in enumerate(wander_ss.spawn(n))}
    learner_ids = [i for i in range(n) if i not in wanderers]
    learners = {i: AgentLearner(i, net_cfg, cfg, agent_ss[i]) for i in learner_ids}

    total_steps = cfg.epochs * cfg.horizon
    global_step = 0
    metrics_rows = [METRICS_HEADER]

    def observe(state, i):
        obs = gridworld.encode_observation(state, i, cfg.window, cfg.profile)
        return noise.apply_noise(obs, spec, learners[i].noise_rng).channels

    lr_switch_epoch = (int(cfg.epochs * cfg.lr_decay_at)
                       if cfg.lr_final is not None else None)

    for epoch in range(cfg.epochs):
        if lr_switch_epoch is not None and epoch == lr_switch_epoch:
            for i in learner_ids:
                learners[i].optimizer.lr = cfg.lr_final
        state = gridworld.reset(gmap, wcfg, env_rng)
        obs = {i: observe(state, i) for i in learner_ids}
        ep_reward = np.zeros(n)
        ep_objects = np.zeros(n, dtype=int)
        ep_acoll = np.zeros(n, dtype=int)
        ep_wcoll = np.zeros(n, dtype=int)
        for t in range(cfg.horizon):
            eps = epsilon_at(global_step, total_steps, cfg)
            actions = []
            for i in range(n):
                if state.wanderer_flags[i]:
                    actions.append(gridworld.wanderer_policy(state, i, wander_rngs[i]))
                else:
                    actions.append(select_action(
                        learners[i].online, obs[i], eps,
                        learners[i].action_rng, n_taus=cfg.n_taus))
            outcome = gridworld.step(state, actions)
            for i in learner_ids:
                nxt = observe(state, i)
                learners[i].buffer.add(Transition(
                    obs=obs[i], action=actions[i], reward=outcome.rewards[i],
                    next_obs=nxt, done=outcome.episode_done))
                obs[i] = nxt
                if len(learners[i].buffer) >= cfg.batch_size:
                    for _ in range(cfg.updates_per_step):
                        learners[i].update()
            ep_reward += outcome.rewards
            ep_objects += outcome.collected
            ep_acoll += outcome.agent_collision
            ep_wcoll += outcome.wall_collision
            global_step += 1
        for i in range(n):
            metrics_rows.append(format_metrics_row(
                epoch, i, ep_reward[i], ep_objects[i], ep_acoll[i], ep_wcoll[i]))
        metrics_rows.append(format_metrics_row(
            epoch, "total", ep_reward.sum(), ep_objects.sum(),
            ep_acoll.sum(), ep_wcoll.sum()))
        if progress and (epoch + 1) % progress == 0:
            print(f"[{cfg.algo}/{cfg.noise}/seed{cfg.seed}] epoch {epoch + 1}/{cfg.epochs} "
                  f"total objects {ep_objects.sum()}", flush=True)

    artifacts = {"metrics_rows": metrics_rows, "learners": learners,
                 "net_config": net_cfg,
                 "parameter_counts": {i: parameter_count(l.online)
                                      for i, l in learners.items()}}
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        metrics_path.write_text("\n".join(metrics_rows) + "\n")
        (out / "metadata.json").write_text(cfg.to_json() + "\n")
        for i, l in learners.items():
            save_checkpoint(l.online.params, out / "checkpoints" / f"agent{i}")
        artifacts["metrics_path"] = metrics_path
        artifacts["out_dir"] = out
    return artifacts
