"""Joint-value factorization heads.

Every mixer turns per-agent utilities into one joint action value while
preserving argmax consistency between decentralized and centralized action
selection.  The heads, in increasing order of expressiveness:

* :class:`VdnMixer`: plain sum of chosen-action utilities.
* :class:`QmixMixer`: two-layer monotonic mixing network whose non-negative
  weights come either from free parameters (``plain``) or from hypernetworks
  conditioned on centralized information (``stateful``).
* :class:`QplexMixer`: duplex dueling head.  Per-agent utilities are
  decomposed into value = max and non-positive advantages, rescaled by
  positive weights from a transformation network, and recombined with
  strictly positive attention coefficients.  Variants condition the
  transformation and attention on the joint history encoding, the
  centralized vector, or both.
* :class:`DuelMixMixer`: like the duplex head but consumes the value and
  advantage streams learned directly by dueling agents, and mixes the value
  stream with sign-unconstrained weights estimated from the joint history.

All mixers are batched: one call evaluates B independent rows, which is also
how the brute-force oracles enumerate whole joint-action tables in a single
forward pass.  Each mixer returns a :class:`MixerOutput` carrying the
intermediate quantities the property tests inspect.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .agents import AgentUtilities
from .nets import MLP, AttentionLambda, HyperNet, Linear, Module, positive_floor
from .tensor import Tensor

ALGORITHMS = ("vdn", "qmix", "qplex", "duelmix")
QMIX_VARIANTS = ("plain", "state")
QPLEX_VARIANTS = ("history", "state", "history-state")
INFO_KINDS = ("s", "r", "c")


@dataclass
class CentralizedInfoSource:
    """What the mixing modules are conditioned on: the environment state
    (``s``), per-step uniform noise in [0, 1] (``r``), or zeros (``c``)."""

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in INFO_KINDS:
            raise ValueError(f"CentralizedInfoSource: unknown kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError(f"CentralizedInfoSource: dim must be >= 1, got {self.dim}")

    def vector(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "s":
            state = np.asarray(state, dtype=np.float64)
            if state.shape != (self.dim,):
                raise ValueError(
                    f"CentralizedInfoSource: state has shape {state.shape}, "
                    f"expected ({self.dim},)"
                )
            return state.copy()
        if self.kind == "r":
            return rng.uniform(0.0, 1.0, size=self.dim)
        return np.zeros(self.dim)


@dataclass
class TeamOutputs:
    """Batched utilities for the whole team at one timestep."""

    mode: str
    hiddens: list[Tensor]  # per agent (B, H)
    q_values: list[Tensor] | None = None  # per agent (B, U_i), single mode
    values: list[Tensor] | None = None  # per agent (B,), dueling mode
    advantages: list[Tensor] | None = None  # per agent (B, U_i), dueling mode

    @classmethod
    def from_agent_outputs(cls, outputs: list[AgentUtilities]) -> "TeamOutputs":
        mode = outputs[0].mode
        if mode == "single":
            return cls(
                mode=mode,
                hiddens=[o.hidden for o in outputs],
                q_values=[o.q_values for o in outputs],
            )
        return cls(
            mode=mode,
            hiddens=[o.hidden for o in outputs],
            values=[o.v_value for o in outputs],
            advantages=[o.adv_values for o in outputs],
        )

    @property
    def n_agents(self) -> int:
        return len(self.hiddens)

    @property
    def batch(self) -> int:
        return self.hiddens[0].shape[0]


@dataclass
class MixerOutput:
    """Joint value plus the intermediates the property tests inspect."""

    q_joint: Tensor  # (B,)
    v_joint: Tensor | None = None  # (B,) where a value stream exists
    a_joint: Tensor | None = None  # (B,) where an advantage stream exists
    transformed_values: Tensor | None = None  # (B, n)
    transformed_advantages: Tensor | None = None  # (B, n), at the taken action
    weights: dict[str, Tensor] = field(default_factory=dict)


def chosen_value(per_action: Tensor, actions: np.ndarray) -> Tensor:
    """Pick per_action[b, actions[b]] for each row, staying on the tape."""
    b, u = per_action.shape
    onehot = np.zeros((b, u))
    onehot[np.arange(b), np.asarray(actions, dtype=int)] = 1.0
    return T.sum_(T.mul(per_action, Tensor(onehot)), axis=1)


def action_encoding(actions: np.ndarray, action_counts: tuple[int, ...]) -> Tensor:
    """Joint-action encoding: concatenated per-agent one-hot vectors."""
    actions = np.asarray(actions, dtype=int)
    b = actions.shape[0]
    enc = np.zeros((b, sum(action_counts)))
    offset = 0
    for i, count in enumerate(action_counts):
        enc[np.arange(b), offset + actions[:, i]] = 1.0
        offset += count
    return Tensor(enc)


def joint_history_encoding(hiddens: list[Tensor]) -> Tensor:
    """Concatenate per-agent recurrent states; slot order follows agent order."""
    if not hiddens:
        raise ValueError("joint_history_encoding: need at least one hidden state")
    return T.concat(hiddens, axis=-1)


def stack_columns(columns: list[Tensor]) -> Tensor:
    """Stack per-agent (B,) tensors into a (B, n) tensor."""
    b = columns[0].shape[0]
    return T.concat([T.reshape(c, (b, 1)) for c in columns], axis=1)


class VdnMixer(Module):
    """Additive factorization: the joint value is the sum of chosen utilities."""

    def __init__(self, n_agents: int):
        self.n_agents = n_agents

    def __call__(self, team: TeamOutputs, actions: np.ndarray,
                 central: Tensor | None = None) -> MixerOutput:
        del central  # additive mixing consumes no centralized information
        chosen = [
            chosen_value(q, np.asarray(actions)[:, i])
            for i, q in enumerate(team.q_values)
        ]
        q_joint = chosen[0]
        for c in chosen[1:]:
            q_joint = T.add(q_joint, c)
        return MixerOutput(q_joint=q_joint)


class QmixMixer(Module):
    """Two-layer monotonic mixing network with elu between the layers.

    ``stateful`` draws the layer weights from hypernetworks conditioned on the
    centralized vector; ``plain`` keeps them as free parameters.  Either way
    the mixing weights pass through abs, which is what guarantees
    dQ/dQ_i >= 0.  ``monotonic=False`` removes the abs and exists solely so
    the consistency harnesses can prove they would catch the violation.
    """

    def __init__(self, n_agents: int, central_dim: int, rng: np.random.Generator,
                 embed_dim: int = 32, stateful: bool = True, monotonic: bool = True):
        self.n_agents = n_agents
        self.embed_dim = embed_dim
        self.stateful = stateful
        self.monotonic = monotonic
        if stateful:
            self.hyper_layer1 = HyperNet(central_dim, n_agents, embed_dim, rng,
                                         hidden=embed_dim, monotonic=monotonic)
            self.hyper_layer2 = HyperNet(central_dim, embed_dim, 1, rng,
                                         hidden=embed_dim, bias_hidden=True,
                                         monotonic=monotonic)
        else:
            bound = 1.0 / np.sqrt(n_agents)
            self.w1 = Tensor(rng.uniform(-bound, bound, (n_agents, embed_dim)),
                             requires_grad=True)
            self.b1 = Tensor(np.zeros(embed_dim), requires_grad=True)
            bound = 1.0 / np.sqrt(embed_dim)
            self.w2 = Tensor(rng.uniform(-bound, bound, (embed_dim, 1)),
                             requires_grad=True)
            self.b2 = Tensor(np.zeros(1), requires_grad=True)

    def __call__(self, team: TeamOutputs, actions: np.ndarray,
                 central: Tensor | None = None) -> MixerOutput:
        actions = np.asarray(actions)
        chosen = stack_columns([
            chosen_value(q, actions[:, i]) for i, q in enumerate(team.q_values)
        ])
        b = chosen.shape[0]
        if self.stateful:
            if central is None:
                raise ValueError("QmixMixer: stateful variant needs a centralized vector")
            w1, b1 = self.hyper_layer1(central)
            w2, b2 = self.hyper_layer2(central)
            hidden = T.elu(T.add(T.batch_matvec(chosen, w1), b1))
            out = T.add(T.batch_matvec(hidden, w2), b2)
            weights = {"w1": w1, "w2": w2}
        else:
            w1 = T.abs_(self.w1) if self.monotonic else self.w1
            w2 = T.abs_(self.w2) if self.monotonic else self.w2
            hidden = T.elu(T.add(T.matmul(chosen, w1), self.b1))
            out = T.add(T.matmul(hidden, w2), self.b2)
            weights = {"w1": w1, "w2": w2}
        return MixerOutput(q_joint=T.reshape(out, (b,)), weights=weights)


class TransformNet(Module):
    """Conditions per-agent values on joint information.

    Emits one positive weight (abs, floored at 1e-6) and one unconstrained
    bias per agent; values are rescaled as ``w * V + b`` and advantages as
    ``w * A``, which preserves their sign and their argmax.
    """

    def __init__(self, cond_dim: int, n_agents: int, rng: np.random.Generator,
                 hidden: int = 32):
        self.trunk = Linear(cond_dim, hidden, rng)
        self.weight_head = Linear(hidden, n_agents, rng)
        self.bias_head = Linear(hidden, n_agents, rng)

    def __call__(self, cond: Tensor) -> tuple[Tensor, Tensor]:
        h = T.relu(self.trunk(cond))
        return positive_floor(T.abs_(self.weight_head(h))), self.bias_head(h)


def decompose_utilities(q_values: Tensor) -> tuple[Tensor, Tensor]:
    """Split action values into (max value, non-positive advantages)."""
    v = T.max_over_axis(q_values, axis=-1)
    adv = T.sub(q_values, T.reshape(v, (v.shape[0], 1)))
    return v, adv


class QplexMixer(Module):
    """Duplex dueling factorization over single-stream agent utilities."""

    def __init__(self, n_agents: int, action_counts: tuple[int, ...],
                 central_dim: int, agent_hidden_dim: int,
                 rng: np.random.Generator, variant: str = "state",
                 embed_dim: int = 32, n_heads: int = 4,
                 positive_lambda: bool = True):
        if variant not in QPLEX_VARIANTS:
            raise ValueError(f"QplexMixer: unknown variant {variant!r}")
        self.n_agents = n_agents
        self.action_counts = tuple(action_counts)
        self.variant = variant
        history_dim = n_agents * agent_hidden_dim
        cond_dim = {
            "history": history_dim,
            "state": central_dim,
            "history-state": history_dim + central_dim,
        }[variant]
        self.transform = TransformNet(cond_dim, n_agents, rng, hidden=embed_dim)
        self.attention = AttentionLambda(cond_dim, sum(self.action_counts),
                                         n_agents, rng, n_heads=n_heads,
                                         hidden=embed_dim,
                                         positive=positive_lambda)

    def conditioning(self, team: TeamOutputs, central: Tensor | None) -> Tensor:
        if self.variant == "history":
            return joint_history_encoding(team.hiddens)
        if self.variant == "state":
            if central is None:
                raise ValueError("QplexMixer: state variant needs a centralized vector")
            return central
        if central is None:
            raise ValueError("QplexMixer: history-state variant needs a centralized vector")
        return T.concat([joint_history_encoding(team.hiddens), central], axis=-1)

    def __call__(self, team: TeamOutputs, actions: np.ndarray,
                 central: Tensor | None = None) -> MixerOutput:
        actions = np.asarray(actions)
        values, advantages = [], []
        for q in team.q_values:
            v, adv = decompose_utilities(q)
            values.append(v)
            advantages.append(adv)
        cond = self.conditioning(team, central)
        w, bias = self.transform(cond)
        v_stack = stack_columns(values)
        adv_chosen = stack_columns([
            chosen_value(adv, actions[:, i]) for i, adv in enumerate(advantages)
        ])
        v_t = T.add(T.mul(w, v_stack), bias)
        a_t = T.mul(w, adv_chosen)
        lam = self.attention(cond, action_encoding(actions, self.action_counts))
        v_joint = T.sum_(v_t, axis=1)
        a_joint = T.sum_(T.mul(lam, a_t), axis=1)
        return MixerOutput(
            q_joint=T.add(v_joint, a_joint),
            v_joint=v_joint,
            a_joint=a_joint,
            transformed_values=v_t,
            transformed_advantages=a_t,
            weights={"w": w, "b": bias, "lambda": lam},
        )


class DuelMixMixer(Module):
    """Duplex factorization over agent-learned value and advantage streams.

    The advantage side mirrors the duplex head: positive transformation
    weights and strictly positive attention coefficients keep action
    selection consistent.  The value side is mixed with sign-unconstrained
    weights from an MLP over the joint history encoding, the centralized
    vector and the transformed values; since the value stream is constant in
    the joint action it cannot disturb the argmax, and the free weights are
    what lets this head cover every consistent joint function.
    """

    def __init__(self, n_agents: int, action_counts: tuple[int, ...],
                 central_dim: int, agent_hidden_dim: int,
                 rng: np.random.Generator, embed_dim: int = 32,
                 n_heads: int = 4, positive_lambda: bool = True):
        self.n_agents = n_agents
        self.action_counts = tuple(action_counts)
        self.transform = TransformNet(central_dim, n_agents, rng, hidden=embed_dim)
        self.attention = AttentionLambda(central_dim, sum(self.action_counts),
                                         n_agents, rng, n_heads=n_heads,
                                         hidden=embed_dim,
                                         positive=positive_lambda)
        history_dim = n_agents * agent_hidden_dim
        self.value_weight_net = MLP(
            [history_dim + central_dim + n_agents, embed_dim, n_agents], rng
        )

    def __call__(self, team: TeamOutputs, actions: np.ndarray,
                 central: Tensor | None = None) -> MixerOutput:
        if central is None:
            raise ValueError("DuelMixMixer: needs a centralized vector")
        actions = np.asarray(actions)
        w, bias = self.transform(central)
        v_stack = stack_columns(team.values)
        adv_chosen = stack_columns([
            chosen_value(adv, actions[:, i]) for i, adv in enumerate(team.advantages)
        ])
        v_t = T.add(T.mul(w, v_stack), bias)
        a_t = T.mul(w, adv_chosen)
        lam = self.attention(central, action_encoding(actions, self.action_counts))
        a_joint = T.sum_(T.mul(lam, a_t), axis=1)
        w_prime = self.value_weight_net(
            T.concat([joint_history_encoding(team.hiddens), central, v_t], axis=-1)
        )
        v_joint = T.sum_(T.mul(w_prime, v_t), axis=1)
        return MixerOutput(
            q_joint=T.add(v_joint, a_joint),
            v_joint=v_joint,
            a_joint=a_joint,
            transformed_values=v_t,
            transformed_advantages=a_t,
            weights={"w": w, "b": bias, "lambda": lam, "w_prime": w_prime},
        )


def make_mixer(algorithm: str, *, n_agents: int, action_counts: tuple[int, ...],
               central_dim: int, agent_hidden_dim: int, rng: np.random.Generator,
               qmix_variant: str = "state", qplex_variant: str = "state",
               embed_dim: int = 32, n_heads: int = 4, monotonic: bool = True,
               positive_lambda: bool = True) -> Module:
    """Build the mixing head named by an experiment configuration."""
    if algorithm == "vdn":
        return VdnMixer(n_agents)
    if algorithm == "qmix":
        if qmix_variant not in QMIX_VARIANTS:
            raise ValueError(f"make_mixer: unknown qmix variant {qmix_variant!r}")
        return QmixMixer(n_agents, central_dim, rng, embed_dim=embed_dim,
                         stateful=qmix_variant == "state", monotonic=monotonic)
    if algorithm == "qplex":
        return QplexMixer(n_agents, action_counts, central_dim, agent_hidden_dim,
                          rng, variant=qplex_variant, embed_dim=embed_dim,
                          n_heads=n_heads, positive_lambda=positive_lambda)
    if algorithm == "duelmix":
        return DuelMixMixer(n_agents, action_counts, central_dim, agent_hidden_dim,
                            rng, embed_dim=embed_dim, n_heads=n_heads,
                            positive_lambda=positive_lambda)
    raise ValueError(f"make_mixer: unknown algorithm {algorithm!r}")


def agent_mode_for(algorithm: str) -> str:
    """Which agent head layout an algorithm trains with."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"agent_mode_for: unknown algorithm {algorithm!r}")
    return "dueling" if algorithm == "duelmix" else "single"
