"""Objects-collection gridworld: maps, simultaneous-move dynamics, rewards,
occlusion-aware local observations, and wandering (reward-inert) agents.

Coordinates are (row, col) with row 0 at the top; the four actions are
up / down / right / left in that index order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

WALL, EMPTY, OBJECT_AREA = 0, 1, 2

UP, DOWN, RIGHT, LEFT = 0, 1, 2, 3
ACTIONS = (UP, DOWN, RIGHT, LEFT)
ACTION_NAMES = ("up", "down", "right", "left")
DELTAS = ((-1, 0), (1, 0), (0, 1), (0, -1))


class MapError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, col: Optional[int] = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", col {col}" if col is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.col = col


@dataclass
class GridMap:
    """Static map geometry: cell grid plus ordered spawn points."""

    height: int
    width: int
    cells: np.ndarray                       # (height, width) of WALL/EMPTY/OBJECT_AREA
    spawn_points: list[tuple[int, int]]     # index = agent id at reset permutation time
    default_wanderers: list[int] = field(default_factory=list)

    @property
    def object_cells(self) -> list[tuple[int, int]]:
        ys, xs = np.nonzero(self.cells == OBJECT_AREA)
        return list(zip(ys.tolist(), xs.tolist()))


def load_map(text: str) -> GridMap:
    """Parse a map document.

    Glyphs: '#'=wall, '.'=empty, 'o'=object area, digit d = spawn point d
    (on an empty cell). An optional trailing line ``W i j ...`` lists spawn
    indices that default to wandering agents.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    wanderers: list[int] = []
    if lines and lines[-1].lstrip().startswith("W"):
        tail = lines.pop().split()
        if tail[0] != "W":
            raise MapError(f"malformed wanderer line {tail!r}", line=len(lines) + 1)
        try:
            wanderers = [int(tok) for tok in tail[1:]]
        except ValueError:
            raise MapError(f"malformed wanderer line {tail!r}", line=len(lines) + 1)
    if not lines:
        raise MapError("empty map document")
    width = len(lines[0])
    height = len(lines)
    cells = np.full((height, width), EMPTY, dtype=np.int8)
    spawns: dict[int, tuple[int, int]] = {}
    for y, row in enumerate(lines):
        if len(row) != width:
            raise MapError(f"ragged row: expected width {width}, got {len(row)}",
                           line=y + 1)
        for x, ch in enumerate(row):
            if ch == "#":
                cells[y, x] = WALL
            elif ch == ".":
                cells[y, x] = EMPTY
            elif ch == "o":
                cells[y, x] = OBJECT_AREA
            elif ch.isdigit():
                idx = int(ch)
                if idx in spawns:
                    raise MapError(f"duplicate spawn index {idx}", line=y + 1, col=x + 1)
                spawns[idx] = (y, x)
                cells[y, x] = EMPTY
            else:
                raise MapError(f"unknown glyph {ch!r}", line=y + 1, col=x + 1)
    for x in range(width):
        for y in (0, height - 1):
            if cells[y, x] != WALL:
                raise MapError("border cell is not a wall", line=y + 1, col=x + 1)
    for y in range(height):
        for x in (0, width - 1):
            if cells[y, x] != WALL:
                raise MapError("border cell is not a wall", line=y + 1, col=x + 1)
    if spawns and sorted(spawns) != list(range(len(spawns))):
        raise MapError(f"spawn indices must be 0..{len(spawns) - 1}, got {sorted(spawns)}")
    for w in wanderers:
        if w not in spawns:
            raise MapError(f"wanderer index {w} has no spawn point")
    spawn_points = [spawns[i] for i in range(len(spawns))]
    return GridMap(height=height, width=width, cells=cells,
                   spawn_points=spawn_points, default_wanderers=wanderers)


def _three_rooms_text() -> str:
    rows = [["#"] * 25 for _ in range(25)]
    for y in range(1, 24):
        for x in range(1, 24):
            rows[y][x] = "."
    for y in range(1, 24):
        if y not in (11, 12, 13):
            rows[y][8] = "#"
            rows[y][16] = "#"
    for y in range(4, 21):
        for x in range(2, 7):
            rows[y][x] = "o"
        for x in range(10, 15):
            rows[y][x] = "o"
        for x in range(18, 23):
            rows[y][x] = "o"
    for idx, (y, x) in enumerate([(2, 4), (2, 12), (2, 20), (22, 4), (22, 12), (22, 20)]):
        rows[y][x] = str(idx)
    return "\n".join("".join(r) for r in rows)


def _simple_text() -> str:
    rows = [["#"] * 20 for _ in range(20)]
    for y in range(1, 19):
        for x in range(1, 19):
            rows[y][x] = "."
    for y in range(4, 16):
        for x in range(4, 16):
            rows[y][x] = "o"
    for idx, (y, x) in enumerate([(2, 2), (2, 17), (17, 2), (17, 17), (2, 9), (17, 9)]):
        rows[y][x] = str(idx)
    return "\n".join("".join(r) for r in rows) + "\nW 4 5"


def _reduced_text() -> str:
    rows = [["#"] * 12 for _ in range(12)]
    for y in range(1, 11):
        for x in range(1, 11):
            rows[y][x] = "o"
    rows[1][1] = "0"
    rows[10][10] = "1"
    return "\n".join("".join(r) for r in rows)


BUILTIN_MAPS = {
    "three-rooms": _three_rooms_text(),
    "simple": _simple_text(),
    "reduced": _reduced_text(),
}


def builtin_map(name: str) -> GridMap:
    if name not in BUILTIN_MAPS:
        raise KeyError(f"unknown built-in map {name!r}; have {sorted(BUILTIN_MAPS)}")
    return load_map(BUILTIN_MAPS[name])


@dataclass
class WorldConfig:
    n_objects: int = 25
    reward_collect: float = 1.0
    reward_collision: float = -1.0
    horizon: int = 200
    wanderer_ids: Optional[list[int]] = None    # None -> map default


@dataclass
class WorldState:
    map: GridMap
    config: WorldConfig
    agent_positions: list[tuple[int, int]]
    wanderer_flags: list[bool]
    objects: set[tuple[int, int]]
    t: int
    rng: np.random.Generator

    @property
    def n_agents(self) -> int:
        return len(self.agent_positions)


@dataclass
class StepOutcome:
    rewards: list[float]
    collected: list[bool]
    agent_collision: list[bool]
    wall_collision: list[bool]
    episode_done: bool


def reset(gmap: GridMap, config: WorldConfig, seed) -> WorldState:
    """Start an episode: agents on a random permutation of spawn points and
    objects placed uniformly (without replacement) on free object-area cells."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(gmap.spawn_points)
    perm = rng.permutation(n)
    positions = [gmap.spawn_points[perm[i]] for i in range(n)]
    wanderer_ids = config.wanderer_ids
    if wanderer_ids is None:
        wanderer_ids = gmap.default_wanderers
    flags = [i in wanderer_ids for i in range(n)]
    candidates = [c for c in gmap.object_cells if c not in positions]
    if config.n_objects > len(candidates):
        raise ValueError(f"need {config.n_objects} object cells, map offers {len(candidates)}")
    picks = rng.choice(len(candidates), size=config.n_objects, replace=False)
    objects = {candidates[i] for i in picks}
    return WorldState(map=gmap, config=config, agent_positions=positions,
                      wanderer_flags=flags, objects=objects, t=0, rng=rng)


def _respawn_object(state: WorldState) -> None:
    candidates = sorted(c for c in state.map.object_cells
                        if c not in state.objects and c not in state.agent_positions)
    pick = state.rng.integers(len(candidates))
    state.objects.add(candidates[pick])


def step(state: WorldState, actions: Iterable[int]) -> StepOutcome:
    """Apply simultaneous moves in a fresh uniformly-random processing order.

    A move into a wall or an occupied cell (occupancy after earlier-processed
    moves) leaves the agent in place with the collision penalty. A learner
    landing on an object collects it; a replacement respawns immediately.
    """
    actions = list(actions)
    n = state.n_agents
    if len(actions) != n:
        raise ValueError(f"expected {n} actions, got {len(actions)}")
    cfg = state.config
    rewards = [0.0] * n
    collected = [False] * n
    agent_coll = [False] * n
    wall_coll = [False] * n
    order = state.rng.permutation(n)
    occupied = {pos: i for i, pos in enumerate(state.agent_positions)}
    for i in order:
        a = actions[i]
        dy, dx = DELTAS[a]
        y, x = state.agent_positions[i]
        ty, tx = y + dy, x + dx
        if state.map.cells[ty, tx] == WALL:
            wall_coll[i] = True
            rewards[i] = cfg.reward_collision
            continue
        if (ty, tx) in occupied:
            agent_coll[i] = True
            rewards[i] = cfg.reward_collision
            continue
        del occupied[(y, x)]
        occupied[(ty, tx)] = i
        state.agent_positions[i] = (ty, tx)
        if not state.wanderer_flags[i] and (ty, tx) in state.objects:
            state.objects.remove((ty, tx))
            collected[i] = True
            rewards[i] = cfg.reward_collect
            _respawn_object(state)
    state.t += 1
    return StepOutcome(rewards=rewards, collected=collected,
                       agent_collision=agent_coll, wall_collision=wall_coll,
                       episode_done=state.t >= cfg.horizon)


def wanderer_policy(state: WorldState, agent: int, rng: np.random.Generator) -> int:
    if not state.wanderer_flags[agent]:
        raise ValueError(f"agent {agent} is not a wanderer")
    return int(rng.integers(4))


def discounted_return(rewards, gamma: float) -> float:
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    total = 0.0
    for r in reversed(list(rewards)):
        total = r + gamma * total
    return total


# ---------------------------------------------------------------------------
# line of sight + observation encoding
# ---------------------------------------------------------------------------

def _ray_cells(y0: int, x0: int, y1: int, x1: int) -> list[tuple[int, int]]:
    """Bresenham cells strictly between (y0,x0) and (y1,x1), endpoints excluded."""
    dy, dx = y1 - y0, x1 - x0
    sy = (dy > 0) - (dy < 0)
    sx = (dx > 0) - (dx < 0)
    ady, adx = abs(dy), abs(dx)
    cells = []
    if adx >= ady:
        el, es = adx, ady
        for k in range(1, el):
            minor = (2 * k * es + el) // (2 * el)
            cells.append((y0 + sy * minor, x0 + sx * k))
    else:
        el, es = ady, adx
        for k in range(1, el):
            minor = (2 * k * es + el) // (2 * el)
            cells.append((y0 + sy * k, x0 + sx * minor))
    return cells


def visible_set(state: WorldState, agent: int, R: int) -> np.ndarray:
    """Boolean R x R mask of window cells visible from the agent.

    A cell is visible iff no wall lies strictly between it and the agent on
    the Bresenham ray. Wall cells do not hide themselves; cells outside the
    map are invisible.
    """
    if R % 2 == 0:
        raise ValueError(f"window size must be odd, got {R}")
    cy, cx = state.agent_positions[agent]
    r = R // 2
    cells = state.map.cells
    H, W = cells.shape
    mask = np.zeros((R, R), dtype=bool)
    for wy in range(R):
        for wx in range(R):
            y, x = cy + wy - r, cx + wx - r
            if not (0 <= y < H and 0 <= x < W):
                continue
            blocked = any(cells[iy, ix] == WALL
                          for iy, ix in _ray_cells(cy, cx, y, x))
            mask[wy, wx] = not blocked
    return mask


@dataclass
class Observation:
    """N_C x R x R integer tensor; the last channel is the blocked channel
    ({0,-1}), all others are presence channels ({0,1})."""

    channels: np.ndarray

    @property
    def blocked_channel(self) -> int:
        return self.channels.shape[0] - 1

    @property
    def R(self) -> int:
        return self.channels.shape[-1]


def encode_observation(state: WorldState, agent: int, R: int, profile: str) -> Observation:
    """Encode the agent-centered R x R window.

    exp1: channels [agents (incl. self at the center), objects, blocked].
    exp2: one channel per agent identity (index = agent id), then objects
    and blocked, so N_C = n + 2.
    """
    if profile not in ("exp1", "exp2"):
        raise ValueError(f"unknown observation profile {profile!r}")
    n = state.n_agents
    nc = 3 if profile == "exp1" else n + 2
    obs = np.zeros((nc, R, R), dtype=np.int8)
    vis = visible_set(state, agent, R)
    cy, cx = state.agent_positions[agent]
    r = R // 2
    cells = state.map.cells
    H, W = cells.shape
    blocked = obs[nc - 1]
    for wy in range(R):
        for wx in range(R):
            y, x = cy + wy - r, cx + wx - r
            inside = 0 <= y < H and 0 <= x < W
            if not inside or not vis[wy, wx] or cells[y, x] == WALL:
                blocked[wy, wx] = -1
            if not inside or not vis[wy, wx]:
                continue
            if (y, x) in state.objects:
                obs[nc - 2, wy, wx] = 1
            for j, pos in enumerate(state.agent_positions):
                if pos == (y, x):
                    if profile == "exp1":
                        obs[0, wy, wx] = 1
                    else:
                        obs[j, wy, wx] = 1
    if profile == "exp1":
        obs[0, r, r] = 1
    else:
        obs[agent, r, r] = 1
    return Observation(channels=obs)


# ---------------------------------------------------------------------------
# episode trace log (line-delimited JSON, replay-testable)
# ---------------------------------------------------------------------------

def trace_record(state: WorldState, actions, outcome: StepOutcome) -> str:
    rec = {
        "t": state.t,
        "positions": [list(p) for p in state.agent_positions],
        "actions": [ACTION_NAMES[a] for a in actions],
        "rewards": outcome.rewards,
        "collected": outcome.collected,
        "agent_collision": outcome.agent_collision,
        "wall_collision": outcome.wall_collision,
    }
    return json.dumps(rec, separators=(",", ":"))
