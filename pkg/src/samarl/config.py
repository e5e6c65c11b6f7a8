"""Resolved experiment configuration: map, algorithm, noise regime, observation
profile and every learner hyperparameter, serializable for reproducible reruns."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import gridworld, noise
from .model import ALGOS


@dataclass
class ExperimentConfig:
    map: str = "three-rooms"            # builtin name or path to a map document
    algo: str = "da3-dqn"
    noise: str = "noiseless"
    window: int = 7                     # R
    profile: str = "exp1"
    seed: int = 0
    epochs: int = 100
    horizon: int = 200
    n_objects: int = 25
    reward_collect: float = 1.0
    reward_collision: float = -1.0
    wanderers: Optional[list[int]] = None   # None -> map default

    # learner hyperparameters
    gamma: float = 0.99
    lr: float = 1e-4
    # Optional step decay: switch to lr_final once lr_decay_at of the
    # training epochs have elapsed (stabilizes the final policy).
    lr_final: Optional[float] = None
    lr_decay_at: float = 0.6
    batch_size: int = 32
    buffer_capacity: int = 100_000
    target_sync_every: int = 2000
    eps_start: float = 1.0
    eps_final: float = 0.05
    eps_fraction: float = 0.2
    updates_per_step: int = 1
    # None resolves per algorithm: plain max target for vanilla dqn,
    # double-Q everywhere else.
    double_q: Optional[bool] = None
    n_taus: int = 8
    n_target_taus: int = 8
    kappa: float = 1.0

    # network hyperparameters
    embed_dim: int = 64
    heads: int = 4
    loops: int = 1
    patch: int = 1
    ff_mult: int = 2
    n_cos: int = 64
    share_loop_params: bool = True

    out_dir: Optional[str] = None

    def load_map(self) -> gridworld.GridMap:
        if self.map in gridworld.BUILTIN_MAPS:
            return gridworld.builtin_map(self.map)
        return gridworld.load_map(Path(self.map).read_text())

    def noise_spec(self) -> noise.NoiseSpec:
        return noise.build_spec(self.noise, self.window)

    def n_channels(self, n_agents: int) -> int:
        return 3 if self.profile == "exp1" else n_agents + 2

    def validate(self) -> "ExperimentConfig":
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algorithm {self.algo!r}; have {ALGOS}")
        if self.profile not in ("exp1", "exp2"):
            raise ValueError(f"unknown profile {self.profile!r}")
        self.noise_spec()   # rejects illegal (regime, R) pairs
        gmap = self.load_map()
        if self.profile == "exp2" and self.wanderers is None:
            self.wanderers = [4, 5]
        if self.double_q is None:
            self.double_q = self.algo != "dqn"
        wanderers = self.wanderers if self.wanderers is not None else gmap.default_wanderers
        for w in wanderers:
            if not 0 <= w < len(gmap.spawn_points):
                raise ValueError(f"wanderer index {w} outside spawn range")
        if self.n_objects > len(gmap.object_cells) - len(gmap.spawn_points):
            raise ValueError(f"map cannot host {self.n_objects} objects")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.lr_final is not None and self.lr_final <= 0:
            raise ValueError(f"lr_final must be positive, got {self.lr_final}")
        if not 0.0 < self.lr_decay_at <= 1.0:
            raise ValueError(f"lr_decay_at must be in (0, 1], got {self.lr_decay_at}")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))
