"""Cooperative decision environments at desk scale.

Two families:

* :class:`MatrixGame`, one-step games with an exhaustively enumerable joint
  action space.  These are the substrate for every brute-force consistency
  oracle, and they load from a plain-text payoff file.
* :class:`BoxPushing`, a two-agent grid world.  Agents see only the cell in
  front of them (unless ``full_observability`` is set) and must push boxes to
  the goal row at the top of the grid: small boxes move under a single agent,
  the big box only moves when both agents push it simultaneously.

Both expose the same interface: ``reset(seed)`` and ``step(joint_action)``,
returning :class:`StepResult`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

JOINT_ACTION_CAP = 10**6


@dataclass(frozen=True)
class DecPomdpDescriptor:
    """Static facts about an environment a learner needs up front."""

    n_agents: int
    action_counts: tuple[int, ...]
    obs_dim: int
    state_dim: int
    horizon: int
    discount: float

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError(f"descriptor: n_agents must be >= 1, got {self.n_agents}")
        if len(self.action_counts) != self.n_agents:
            raise ValueError("descriptor: one action count per agent required")
        if any(c < 1 for c in self.action_counts):
            raise ValueError(f"descriptor: action counts must be >= 1, got {self.action_counts}")
        if self.horizon < 1:
            raise ValueError(f"descriptor: horizon must be >= 1, got {self.horizon}")


@dataclass
class StepResult:
    """Per-step environment output shared by all environments."""

    observations: np.ndarray  # (n_agents, obs_dim)
    reward: float
    state: np.ndarray  # (state_dim,)
    terminal: bool


def enumerate_joint_actions(descriptor: DecPomdpDescriptor) -> list[tuple[int, ...]]:
    """All joint actions in lexicographic order, agent 0 varying slowest."""
    total = math.prod(descriptor.action_counts)
    if total > JOINT_ACTION_CAP:
        raise ValueError(
            f"enumerate_joint_actions: {total} joint actions exceed the "
            f"cap of {JOINT_ACTION_CAP}"
        )
    return list(product(*(range(c) for c in descriptor.action_counts)))


class MatrixGame:
    """One-step cooperative game defined by a payoff table.

    Observations and state are constant dummy vectors; the episode terminates
    after a single joint action whose reward is the table entry.
    """

    def __init__(self, payoffs, discount: float = 0.99):
        table = np.asarray(payoffs, dtype=np.float64)
        if table.ndim < 1:
            raise ValueError("MatrixGame: payoff table must have one axis per agent")
        self.payoffs = table
        self.descriptor = DecPomdpDescriptor(
            n_agents=table.ndim,
            action_counts=tuple(table.shape),
            obs_dim=1,
            state_dim=1,
            horizon=1,
            discount=discount,
        )
        self._done = True

    def reset(self, seed: int = 0) -> StepResult:
        del seed  # dynamics are deterministic; kept for interface parity
        self._done = False
        n = self.descriptor.n_agents
        return StepResult(
            observations=np.zeros((n, 1)),
            reward=0.0,
            state=np.zeros(1),
            terminal=False,
        )

    def step(self, joint_action) -> StepResult:
        if self._done:
            raise RuntimeError("MatrixGame.step: episode is terminal, call reset")
        joint = tuple(int(a) for a in joint_action)
        for i, (a, c) in enumerate(zip(joint, self.descriptor.action_counts)):
            if not 0 <= a < c:
                raise ValueError(f"MatrixGame.step: agent {i} action {a} out of range {c}")
        self._done = True
        n = self.descriptor.n_agents
        return StepResult(
            observations=np.zeros((n, 1)),
            reward=float(self.payoffs[joint]),
            state=np.zeros(1),
            terminal=True,
        )

    @classmethod
    def from_file(cls, path) -> "MatrixGame":
        """Load a payoff table from text: a header line of integers
        ``n_agents count_1 ... count_n`` followed by one payoff per joint
        action in enumeration order (agent 0 varying slowest).  Lines starting
        with ``#`` are comments."""
        tokens: list[str] = []
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.replace(",", " ").split())
        if not tokens:
            raise ValueError(f"MatrixGame.from_file: {path} is empty")
        n = int(tokens[0])
        counts = tuple(int(t) for t in tokens[1 : 1 + n])
        needed = math.prod(counts)
        values = [float(t) for t in tokens[1 + n :]]
        if len(values) != needed:
            raise ValueError(
                f"MatrixGame.from_file: expected {needed} payoffs for action "
                f"counts {counts}, found {len(values)}"
            )
        return cls(np.array(values).reshape(counts))

    def to_file(self, path) -> None:
        counts = self.descriptor.action_counts
        lines = [f"{self.descriptor.n_agents} " + " ".join(str(c) for c in counts)]
        lines += [repr(float(v)) for v in self.payoffs.reshape(-1)]
        Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Box Pushing
# ---------------------------------------------------------------------------

# Orientation indices and their (row, col) motion deltas; row 0 is the goal
# row at the top of the grid.
UP, RIGHT, DOWN, LEFT = 0, 1, 2, 3
DELTAS = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1)}

FORWARD, TURN_LEFT, TURN_RIGHT, STAY = 0, 1, 2, 3

# Front-cell observation one-hot layout.
OBS_EMPTY, OBS_TEAMMATE, OBS_BOUNDARY, OBS_SMALL_BOX, OBS_BIG_BOX = range(5)

BIG_BOX_REWARD = 100.0
SMALL_BOX_REWARD = 10.0
PENALTY = -10.0


@dataclass(frozen=True)
class BoxPushingConfig:
    grid_size: int = 30
    full_observability: bool = False
    horizon: int = 100
    big_box_reward: float = BIG_BOX_REWARD
    small_box_reward: float = SMALL_BOX_REWARD
    penalty: float = PENALTY

    def __post_init__(self):
        if self.grid_size < 6:
            # The fixed layout (agents at G/4 and 3G/4, boxes on the middle
            # row) self-overlaps below 6, so smaller grids are rejected.
            raise ValueError(
                f"BoxPushingConfig: grid_size must be >= 6, got {self.grid_size}"
            )
        if self.horizon < 1:
            raise ValueError(f"BoxPushingConfig: horizon must be >= 1, got {self.horizon}")


class BoxPushing:
    """Two-agent box-pushing grid world.

    Layout (rows count down from the goal row 0): agents start in the bottom
    row facing up, at columns ``G//4`` and ``3*G//4``; one small box sits in
    each agent's column on the middle row; the big box spans the two center
    columns of the middle row.  Actions are forward / turn left / turn right /
    stay.  The team is rewarded +100 for pushing the big box into the goal
    row, +10 per small box pushed in, and -10 whenever an agent walks into
    the boundary or pushes the big box alone.  The episode ends when any box
    reaches the goal row or the horizon is hit.
    """

    N_ACTIONS = 4

    def __init__(self, config: BoxPushingConfig | None = None, **kwargs):
        self.config = config if config is not None else BoxPushingConfig(**kwargs)
        g = self.config.grid_size
        obs_dim = 18 if self.config.full_observability else 5
        self.descriptor = DecPomdpDescriptor(
            n_agents=2,
            action_counts=(self.N_ACTIONS, self.N_ACTIONS),
            obs_dim=obs_dim,
            state_dim=18,
            horizon=self.config.horizon,
            discount=0.9,
        )
        self._start_cols = (g // 4, (3 * g) // 4)
        self._done = True

    # -- state helpers ------------------------------------------------------

    def reset(self, seed: int = 0) -> StepResult:
        del seed  # start poses are fixed; kept for interface parity
        g = self.config.grid_size
        mid = g // 2
        self.agent_pos = [(g - 1, self._start_cols[0]), (g - 1, self._start_cols[1])]
        self.agent_dir = [UP, UP]
        self.small_boxes = [(mid, self._start_cols[0]), (mid, self._start_cols[1])]
        self.big_box = (mid, mid - 1)  # (row, left column); spans two cells
        self._steps = 0
        self._done = False
        return StepResult(
            observations=self._observations(),
            reward=0.0,
            state=self._state_vector(),
            terminal=False,
        )

    def _big_cells(self) -> tuple[tuple[int, int], tuple[int, int]]:
        r, c = self.big_box
        return (r, c), (r, c + 1)

    def _in_bounds(self, cell) -> bool:
        g = self.config.grid_size
        return 0 <= cell[0] < g and 0 <= cell[1] < g

    def _cell_kind(self, cell, viewer: int) -> int:
        if not self._in_bounds(cell):
            return OBS_BOUNDARY
        if cell in self._big_cells():
            return OBS_BIG_BOX
        if cell in self.small_boxes:
            return OBS_SMALL_BOX
        if cell == self.agent_pos[1 - viewer]:
            return OBS_TEAMMATE
        return OBS_EMPTY

    def _front_cell(self, i: int) -> tuple[int, int]:
        dr, dc = DELTAS[self.agent_dir[i]]
        r, c = self.agent_pos[i]
        return (r + dr, c + dc)

    def _observations(self) -> np.ndarray:
        if self.config.full_observability:
            return np.stack([self._full_obs(0), self._full_obs(1)])
        obs = np.zeros((2, 5))
        for i in range(2):
            obs[i, self._cell_kind(self._front_cell(i), viewer=i)] = 1.0
        return obs

    def _pose_features(self, i: int) -> list[float]:
        scale = self.config.grid_size - 1
        r, c = self.agent_pos[i]
        onehot = [0.0] * 4
        onehot[self.agent_dir[i]] = 1.0
        return [r / scale, c / scale] + onehot

    def _box_features(self) -> list[float]:
        scale = self.config.grid_size - 1
        feats: list[float] = []
        for r, c in self.small_boxes:
            feats += [r / scale, c / scale]
        feats += [self.big_box[0] / scale, self.big_box[1] / scale]
        return feats

    def _full_obs(self, i: int) -> np.ndarray:
        return np.array(
            self._pose_features(i) + self._pose_features(1 - i) + self._box_features()
        )

    def _state_vector(self) -> np.ndarray:
        return np.array(
            self._pose_features(0) + self._pose_features(1) + self._box_features()
        )

    # -- dynamics ------------------------------------------------------------

    def step(self, joint_action) -> StepResult:
        if self._done:
            raise RuntimeError("BoxPushing.step: episode is terminal, call reset")
        actions = tuple(int(a) for a in joint_action)
        for i, a in enumerate(actions):
            if not 0 <= a < self.N_ACTIONS:
                raise ValueError(f"BoxPushing.step: agent {i} action {a} out of range 4")

        reward = 0.0
        for i, a in enumerate(actions):
            if a == TURN_LEFT:
                self.agent_dir[i] = (self.agent_dir[i] - 1) % 4
            elif a == TURN_RIGHT:
                self.agent_dir[i] = (self.agent_dir[i] + 1) % 4

        forward = [i for i in range(2) if actions[i] == FORWARD]
        targets = {i: self._front_cell(i) for i in forward}
        big_cells = set(self._big_cells())
        moved = {i: False for i in range(2)}

        big_pushers = [i for i in forward if targets[i] in big_cells]
        if len(big_pushers) == 2 and targets[0] != targets[1]:
            same_dir = self.agent_dir[0] == self.agent_dir[1]
            dr, dc = DELTAS[self.agent_dir[0]]
            dest = (self.big_box[0] + dr, self.big_box[1] + dc)
            dest_cells = [dest, (dest[0], dest[1] + 1)]
            clear = same_dir and all(
                self._in_bounds(cell) and cell not in self.small_boxes
                for cell in dest_cells
            )
            if clear:
                self.big_box = dest
                for i in big_pushers:
                    self.agent_pos[i] = targets[i]
                    moved[i] = True
            forward = []  # both agents resolved, cooperatively or not
        elif len(big_pushers) == 1:
            reward += self.config.penalty  # lone push on the big box
            forward = [i for i in forward if i not in big_pushers]
        elif len(big_pushers) == 2:
            forward = []  # both shoved the same big-box cell; nobody moves

        blocked: set[int] = set()
        for i in list(forward):
            if not self._in_bounds(targets[i]):
                reward += self.config.penalty  # walked into the boundary
                blocked.add(i)
        forward = [i for i in forward if i not in blocked]

        if len(forward) == 2 and targets[0] == targets[1]:
            forward = []  # simultaneous entry into one cell: both stay
        if (
            len(forward) == 2
            and targets[0] == self.agent_pos[1]
            and targets[1] == self.agent_pos[0]
        ):
            forward = []  # position swap: agents cannot pass through each other

        for i in forward:
            target = targets[i]
            if target in self.small_boxes:
                dr, dc = DELTAS[self.agent_dir[i]]
                dest = (target[0] + dr, target[1] + dc)
                occupied = (
                    dest in self.small_boxes
                    or dest in set(self._big_cells())
                    or dest in self.agent_pos
                )
                if self._in_bounds(dest) and not occupied:
                    self.small_boxes[self.small_boxes.index(target)] = dest
                    self.agent_pos[i] = target
                    moved[i] = True
            elif target == self.agent_pos[1 - i] and not moved[1 - i]:
                pass  # teammate occupies the cell and is not leaving it
            else:
                self.agent_pos[i] = target
                moved[i] = True

        for r, _ in self.small_boxes:
            if r == 0:
                reward += self.config.small_box_reward
                self._done = True
        if self.big_box[0] == 0:
            reward += self.config.big_box_reward
            self._done = True

        self._steps += 1
        if self._steps >= self.config.horizon:
            self._done = True

        return StepResult(
            observations=self._observations(),
            reward=reward,
            state=self._state_vector(),
            terminal=self._done,
        )


def make_env(name: str, **kwargs):
    """Build an environment from a config-style name.

    ``bp`` maps to Box Pushing (kwargs forwarded to the config) and
    ``matrix:<path>`` loads a payoff table file.
    """
    if name == "bp":
        return BoxPushing(**kwargs)
    if name.startswith("matrix:"):
        return MatrixGame.from_file(name.split(":", 1)[1])
    raise ValueError(f"make_env: unknown environment {name!r}")
