"""Discretized 3D landing environment.

The world is a grid of (dx, dy, dz) offsets from the landing pad, one cell
per resolution step. Five actions move one cell: forward/backward along x,
left/right along y, and descend along z. Touching dz = 0 ends the episode:
inside the landing zone it is a success worth +400, outside it costs
-200 times the horizontal distance to the pad.

Every other step is rewarded with the difference of a distance-based
shaping value. The shaping switches scale at the landing-zone boundary:
outside the zone it spans all three axes, inside it tracks altitude only.
When the vehicle leaves the zone, the carried previous-shaping value is
rebased to the full-scale shaping of the state it came from, so that a
leave/re-enter cycle nets zero reward. With that bookkeeping the per-step
reward reduces to a pure function of (previous state, next state):

    both states inside the zone -> altitude shaping difference
    otherwise                   -> full shaping difference

``reward`` implements the reduced form; the test suite carries an
independent step-by-step transcription of the bookkeeping and checks the
two never disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from .errors import ContractViolation
from .rng import Rng


class Action(int, Enum):
    FORWARD = 0  # +x
    BACKWARD = 1  # -x
    LEFT = 2  # +y
    RIGHT = 3  # -y
    DESCEND = 4  # -z


_ACTION_DELTAS = {
    Action.FORWARD: (1, 0, 0),
    Action.BACKWARD: (-1, 0, 0),
    Action.LEFT: (0, 1, 0),
    Action.RIGHT: (0, -1, 0),
    Action.DESCEND: (0, 0, -1),
}


class Terminal(Enum):
    NONE = "none"
    LANDED_SUCCESS = "landed_success"
    LANDED_OUTSIDE = "landed_outside"
    OUT_OF_BOUNDS = "out_of_bounds"
    MAX_STEPS = "max_steps"


class LanderState(NamedTuple):
    dx: float
    dy: float
    dz: float

    def horizontal_distance(self) -> float:
        return math.hypot(self.dx, self.dy)


@dataclass(frozen=True)
class EnvConfig:
    x_range: tuple[float, float] = (-6.0, 6.0)
    y_range: tuple[float, float] = (-6.0, 6.0)
    z_range: tuple[float, float] = (0.0, 8.0)
    resolution: float = 1.0
    landing_zone_radius: float = 1.0
    k_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    max_steps: int = 200
    wind_probability: float = 0.0
    wind_displacement: int = 1  # grid cells per gust
    boundary_mode: str = "clamp"  # or "crash"

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise ContractViolation("resolution must be positive")
        for name, (lo, hi) in (("x", self.x_range), ("y", self.y_range), ("z", self.z_range)):
            if lo > hi:
                raise ContractViolation(f"{name}_range is not ordered")
        if self.z_range[0] != 0.0:
            raise ContractViolation("altitude range must start at ground level 0")
        if any(k < 0 for k in self.k_weights):
            raise ContractViolation("shaping weights must be non-negative")
        if self.landing_zone_radius < 0:
            raise ContractViolation("landing zone radius must be non-negative")
        if self.max_steps < 1:
            raise ContractViolation("max_steps must be at least 1")
        if not 0.0 <= self.wind_probability <= 1.0:
            raise ContractViolation("wind probability must lie in [0,1]")
        if self.boundary_mode not in ("clamp", "crash"):
            raise ContractViolation("boundary_mode must be 'clamp' or 'crash'")

    def axis_values(self, axis: str) -> np.ndarray:
        lo, hi = {"x": self.x_range, "y": self.y_range, "z": self.z_range}[axis]
        n = int(math.floor((hi - lo) / self.resolution + 1e-9)) + 1
        return lo + self.resolution * np.arange(n)

    def state_count(self) -> int:
        return (
            len(self.axis_values("x")) * len(self.axis_values("y")) * len(self.axis_values("z"))
        )


def inside_zone(state: LanderState, config: EnvConfig) -> bool:
    return state.horizontal_distance() <= config.landing_zone_radius


def shaping(state: LanderState, k: tuple[float, float, float], inside: bool) -> float:
    """-100 * sqrt(weighted squared offsets); altitude-only inside the zone."""
    kx, ky, kz = k
    if inside:
        return -100.0 * math.sqrt(kz * state.dz * state.dz)
    return -100.0 * math.sqrt(
        kx * state.dx * state.dx + ky * state.dy * state.dy + kz * state.dz * state.dz
    )


def approach_shaping(state: LanderState, config: EnvConfig) -> float:
    return shaping(state, config.k_weights, inside=False)


def altitude_shaping(state: LanderState, config: EnvConfig) -> float:
    return shaping(state, config.k_weights, inside=True)


def potential(state: LanderState, config: EnvConfig) -> float:
    """The carried previous-shaping value for a state: altitude scale
    inside the zone, full scale outside."""
    if inside_zone(state, config):
        return altitude_shaping(state, config)
    return approach_shaping(state, config)


def reward(prev: LanderState, nxt: LanderState, config: EnvConfig) -> float:
    """Per-step reward for the move prev -> nxt (see module docstring).

    Touchdown overrides the shaping difference: +400 inside the landing
    zone, -200 * horizontal distance outside it.
    """
    if nxt.dz <= 0.0:
        if inside_zone(nxt, config):
            return 400.0
        return -200.0 * nxt.horizontal_distance()
    if inside_zone(prev, config) and inside_zone(nxt, config):
        return altitude_shaping(nxt, config) - altitude_shaping(prev, config)
    return approach_shaping(nxt, config) - approach_shaping(prev, config)


@dataclass(frozen=True)
class StepOutcome:
    next: LanderState
    reward: float
    terminal: Terminal


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def transition(
    state: LanderState,
    action: Action,
    config: EnvConfig,
    rng: Optional[Rng] = None,
) -> StepOutcome:
    """One move without step accounting; pure when wind is disabled.

    Horizontal moves clamp at the grid boundary (or crash, per config);
    reaching dz = 0 classifies the landing by zone membership.
    """
    if state.dz <= 0.0:
        raise ContractViolation(f"cannot step a terminal state {state}")
    ddx, ddy, ddz = _ACTION_DELTAS[Action(action)]
    r = config.resolution
    x = state.dx + ddx * r
    y = state.dy + ddy * r
    z = state.dz + ddz * r
    if config.wind_probability > 0.0:
        if rng is None:
            raise ContractViolation("wind enabled but no rng supplied")
        if rng.uniform() < config.wind_probability:
            gust = int(rng.integers(4))  # +x, -x, +y, -y
            disp = config.wind_displacement * r
            if gust == 0:
                x += disp
            elif gust == 1:
                x -= disp
            elif gust == 2:
                y += disp
            else:
                y -= disp
    out_of_bounds = not (
        config.x_range[0] <= x <= config.x_range[1]
        and config.y_range[0] <= y <= config.y_range[1]
    )
    x = _clamp(x, config.x_range[0], config.x_range[1])
    y = _clamp(y, config.y_range[0], config.y_range[1])
    z = _clamp(z, 0.0, config.z_range[1])
    nxt = LanderState(x, y, z)

    if out_of_bounds and config.boundary_mode == "crash":
        return StepOutcome(nxt, -200.0 * nxt.horizontal_distance(), Terminal.OUT_OF_BOUNDS)
    rew = reward(state, nxt, config)
    if nxt.dz <= 0.0:
        kind = Terminal.LANDED_SUCCESS if inside_zone(nxt, config) else Terminal.LANDED_OUTSIDE
        return StepOutcome(nxt, rew, kind)
    return StepOutcome(nxt, rew, Terminal.NONE)


def reset_state(config: EnvConfig, rng: Rng, min_altitude: float = 2.0) -> LanderState:
    """Uniform random on-grid start with dz >= min_altitude."""
    xs = config.axis_values("x")
    ys = config.axis_values("y")
    zs = config.axis_values("z")
    zs = zs[zs >= min_altitude - 1e-9]
    if len(zs) == 0:
        raise ContractViolation("no eligible start altitudes")
    x = float(xs[int(rng.integers(len(xs)))])
    y = float(ys[int(rng.integers(len(ys)))])
    z = float(zs[int(rng.integers(len(zs)))])
    return LanderState(x, y, z)


def eligible_starts(config: EnvConfig, min_altitude: float = 2.0) -> list[LanderState]:
    """Every on-grid state with dz >= min_altitude, in scan order."""
    out = []
    for z in config.axis_values("z"):
        if z < min_altitude - 1e-9:
            continue
        for x in config.axis_values("x"):
            for y in config.axis_values("y"):
                out.append(LanderState(float(x), float(y), float(z)))
    return out


class LandingEnv:
    """Stateful episode wrapper: tracks the step budget and terminal status."""

    def __init__(self, config: EnvConfig, rng: Optional[Rng] = None) -> None:
        if config.wind_probability > 0.0 and rng is None:
            raise ContractViolation("wind enabled but no rng supplied")
        self.config = config
        self.rng = rng
        self.state: Optional[LanderState] = None
        self.steps = 0
        self.terminal = Terminal.NONE

    def reset(self, state: Optional[LanderState] = None) -> LanderState:
        if state is None:
            if self.rng is None:
                raise ContractViolation("reset without an explicit state needs an rng")
            state = reset_state(self.config, self.rng)
        self.state = state
        self.steps = 0
        self.terminal = Terminal.NONE
        return state

    def step(self, action: Action) -> StepOutcome:
        if self.state is None:
            raise ContractViolation("step before reset")
        if self.terminal is not Terminal.NONE:
            raise ContractViolation("episode already terminal")
        out = transition(self.state, action, self.config, self.rng)
        self.steps += 1
        if out.terminal is Terminal.NONE and self.steps >= self.config.max_steps:
            out = StepOutcome(out.next, out.reward, Terminal.MAX_STEPS)
        self.state = out.next
        self.terminal = out.terminal
        return out


@dataclass
class MdpTable:
    """Exhaustive deterministic model of the windless grid MDP.

    ``states`` lists every grid cell; transitions exist for the
    non-terminal (dz > 0) subset, indexed by ``nonterminal_indices``.
    """

    config: EnvConfig
    states: np.ndarray  # (total, 3) every grid state incl. dz = 0
    nonterminal_indices: np.ndarray  # (n,) indices into states
    next_index: np.ndarray  # (n, 5) index into states of the successor
    rewards: np.ndarray  # (n, 5)
    next_is_terminal: np.ndarray  # (n, 5) bool: successor ends the episode
    index_of: dict  # state tuple -> row in states

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_nonterminal(self) -> int:
        return len(self.nonterminal_indices)

    def state(self, idx: int) -> LanderState:
        return LanderState(*map(float, self.states[idx]))

    def row_of(self, state: LanderState) -> int:
        """Row in the transition arrays for a non-terminal state."""
        return int(self._row_lookup[self.index_of[tuple(state)]])

    def __post_init__(self) -> None:
        self._row_lookup = {}
        for row, si in enumerate(self.nonterminal_indices):
            self._row_lookup[int(si)] = row


def enumerate_mdp(config: EnvConfig) -> MdpTable:
    """Tabulate (state, action) -> (next, reward, terminal); wind must be off."""
    if config.wind_probability > 0.0:
        raise ContractViolation("enumerate_mdp requires wind disabled")
    xs, ys, zs = (config.axis_values(a) for a in ("x", "y", "z"))
    states = []
    for z in zs:
        for x in xs:
            for y in ys:
                states.append((float(x), float(y), float(z)))
    index_of = {s: i for i, s in enumerate(states)}
    states_arr = np.array(states, dtype=np.float64)

    nonterminal = [i for i, s in enumerate(states) if s[2] > 0.0]
    n = len(nonterminal)
    next_index = np.zeros((n, 5), dtype=np.int64)
    rewards = np.zeros((n, 5), dtype=np.float64)
    next_terminal = np.zeros((n, 5), dtype=bool)
    for row, si in enumerate(nonterminal):
        s = LanderState(*states[si])
        for a in Action:
            out = transition(s, a, config)
            next_index[row, a.value] = index_of[tuple(out.next)]
            rewards[row, a.value] = out.reward
            next_terminal[row, a.value] = out.terminal is not Terminal.NONE
    return MdpTable(
        config=config,
        states=states_arr,
        nonterminal_indices=np.array(nonterminal, dtype=np.int64),
        next_index=next_index,
        rewards=rewards,
        next_is_terminal=next_terminal,
        index_of=index_of,
    )
