"""Per-agent recurrent utility networks and decentralized action selection.

One shared network serves all agents (an agent-index one-hot is appended to
the observation alongside the previous-action one-hot).  Two head layouts:

* ``single``: one action-value vector per agent, used by the additive and
  monotonic mixers and decomposed on demand by the duplex mixer.
* ``dueling``: separate history-value and advantage streams.  The advantage
  head is normalized as ``A - max(A)`` so the greedy action's advantage is
  exactly zero and all others are non-positive, which the positive-weight
  transformations downstream rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nets import GRUCell, Linear, Module
from .tensor import Tensor


@dataclass
class AgentUtilities:
    """Output of one agent forward step (batched along axis 0)."""

    mode: str  # "single" | "dueling"
    hidden: Tensor  # (B, H)
    q_values: Tensor | None = None  # (B, U) in single mode
    v_value: Tensor | None = None  # (B,) in dueling mode
    adv_values: Tensor | None = None  # (B, U) in dueling mode, max-zero

    def greedy_values(self) -> Tensor:
        """The vector action selection ranks: q in single mode, adv in dueling."""
        return self.q_values if self.mode == "single" else self.adv_values

    def implied_q(self) -> Tensor:
        """Action values; in dueling mode the sum V + A of the two streams."""
        if self.mode == "single":
            return self.q_values
        b = self.v_value.shape[0]
        return T.add(T.reshape(self.v_value, (b, 1)), self.adv_values)


class RecurrentAgentNet(Module):
    """Shared recurrent utility network: linear + relu, GRU, output head(s)."""

    def __init__(self, obs_dim: int, n_actions: int, n_agents: int,
                 rng: np.random.Generator, hidden_dim: int = 128,
                 mode: str = "single"):
        if mode not in ("single", "dueling"):
            raise ValueError(f"RecurrentAgentNet: unknown mode {mode!r}")
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.n_agents = n_agents
        self.hidden_dim = hidden_dim
        self.mode = mode
        in_dim = obs_dim + n_actions + n_agents
        self.in_dim = in_dim
        self.fc_in = Linear(in_dim, hidden_dim, rng)
        self.gru = GRUCell(hidden_dim, hidden_dim, rng)
        if mode == "single":
            self.q_head = Linear(hidden_dim, n_actions, rng)
        else:
            self.v_hidden = Linear(hidden_dim, hidden_dim, rng)
            self.v_head = Linear(hidden_dim, 1, rng)
            self.adv_hidden = Linear(hidden_dim, hidden_dim, rng)
            self.adv_head = Linear(hidden_dim, n_actions, rng)

    def build_inputs(self, obs, prev_actions, agent_indices) -> Tensor:
        """Assemble the network input from numpy parts.

        ``obs`` is (B, obs_dim); ``prev_actions`` holds action indices with -1
        meaning "episode start" (all-zero one-hot); ``agent_indices`` names
        which agent each row belongs to.
        """
        obs = np.asarray(obs, dtype=np.float64)
        b = obs.shape[0]
        prev = np.zeros((b, self.n_actions))
        prev_actions = np.asarray(prev_actions)
        live = prev_actions >= 0
        prev[np.arange(b)[live], prev_actions[live]] = 1.0
        ids = np.zeros((b, self.n_agents))
        ids[np.arange(b), np.asarray(agent_indices)] = 1.0
        return Tensor(np.concatenate([obs, prev, ids], axis=1))

    def initial_hidden(self, batch: int) -> Tensor:
        return self.gru.initial_hidden(batch)

    def forward(self, inputs: Tensor, hidden: Tensor) -> AgentUtilities:
        if inputs.shape[-1] != self.in_dim:
            raise ValueError(
                f"RecurrentAgentNet: input has {inputs.shape[-1]} features, "
                f"expected {self.in_dim}"
            )
        h = self.gru(T.relu(self.fc_in(inputs)), hidden)
        if self.mode == "single":
            return AgentUtilities(mode="single", hidden=h, q_values=self.q_head(h))
        v = T.reshape(self.v_head(T.relu(self.v_hidden(h))), (h.shape[0],))
        adv_raw = self.adv_head(T.relu(self.adv_hidden(h)))
        adv = T.sub(adv_raw, T.max_over_axis(adv_raw, axis=-1, keepdims=True))
        return AgentUtilities(mode="dueling", hidden=h, v_value=v, adv_values=adv)

    __call__ = forward


def unroll_episode(net: RecurrentAgentNet, inputs_seq: list[Tensor]) -> list[AgentUtilities]:
    """Run ``net`` over a step sequence, threading hidden state from zero."""
    if not inputs_seq:
        raise ValueError("unroll_episode: empty input sequence")
    batch = inputs_seq[0].shape[0]
    hidden = net.initial_hidden(batch)
    outputs = []
    for step, inputs in enumerate(inputs_seq):
        if inputs.shape[0] != batch:
            raise ValueError(
                f"unroll_episode: step {step} batch {inputs.shape[0]} != {batch}"
            )
        util = net(inputs, hidden)
        hidden = util.hidden
        outputs.append(util)
    return outputs


def select_actions(utilities: AgentUtilities, epsilon: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Batched epsilon-greedy over the selection values.

    With probability 1 - epsilon each row takes its argmax (ties break to the
    lowest index); otherwise a uniform random action.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"select_actions: epsilon {epsilon} outside [0, 1]")
    values = utilities.greedy_values().data
    greedy = values.argmax(axis=-1)
    n_actions = values.shape[-1]
    explore = rng.random(values.shape[0]) < epsilon
    randoms = rng.integers(0, n_actions, size=values.shape[0])
    return np.where(explore, randoms, greedy)


def select_action(utilities: AgentUtilities, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Single-row convenience wrapper around :func:`select_actions`."""
    return int(select_actions(utilities, epsilon, rng)[0])
