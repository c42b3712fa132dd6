"""End-to-end temporal-difference training for the factorization heads.

Episodic replay, epsilon-greedy collection, target networks synchronized by
full copy, and a masked mean-squared TD loss over whole-episode recurrent
unrolls.  Hidden states are always recomputed from zero during training,
never reloaded from collection time.  Bootstrap actions default to the
greedy actions of the *online* local utilities, evaluated under the *target*
joint network (``bootstrap="target_argmax"`` switches the selection side).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .agents import RecurrentAgentNet, select_actions
from .mixers import CentralizedInfoSource, TeamOutputs, agent_mode_for, make_mixer
from .tensor import Tensor


def epsilon_at(step: int, start: float = 1.0, final: float = 0.05,
               decay_steps: int = 50_000) -> float:
    """Linear exploration decay over the first ``decay_steps`` environment
    steps, constant afterwards."""
    if step < 0:
        raise ValueError(f"epsilon_at: step must be >= 0, got {step}")
    if step >= decay_steps:
        return final
    frac = step / decay_steps
    return start + (final - start) * frac


class Adam(object):
    """Adaptive-moment gradient descent over Tensor parameters."""

    def __init__(self, params, lr: float = 2.5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (self.m[i] / b1c) / (
                np.sqrt(self.v[i] / b2c) + self.eps
            )

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([float(self.t)])}
        for i in range(len(self.params)):
            out[f"m.{i}"] = self.m[i]
            out[f"v.{i}"] = self.v[i]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        self.t = int(arrays[f"{prefix}.t"][0])
        for i in range(len(self.params)):
            self.m[i] = np.asarray(arrays[f"{prefix}.m.{i}"], dtype=np.float64).copy()
            self.v[i] = np.asarray(arrays[f"{prefix}.v.{i}"], dtype=np.float64).copy()


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


@dataclass
class EpisodeBatch:
    """One complete episode: T transitions plus the closing observation."""

    obs: np.ndarray  # (T+1, n, obs_dim)
    actions: np.ndarray  # (T, n)
    rewards: np.ndarray  # (T,)
    states: np.ndarray  # (T+1, state_dim)
    central: np.ndarray  # (T+1, central_dim); replayed verbatim in training

    @property
    def length(self) -> int:
        return self.actions.shape[0]


class ReplayBuffer:
    """Ring buffer of episodes with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"ReplayBuffer: capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._episodes: list[EpisodeBatch] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._episodes)

    def add(self, episode: EpisodeBatch) -> None:
        if len(self._episodes) < self.capacity:
            self._episodes.append(episode)
        else:
            self._episodes[self._next] = episode
            self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[EpisodeBatch]:
        if batch_size > len(self._episodes):
            raise ValueError(
                f"ReplayBuffer.sample: {batch_size} requested, {len(self._episodes)} stored"
            )
        idx = rng.choice(len(self._episodes), size=batch_size, replace=False)
        return [self._episodes[i] for i in idx]


@dataclass
class Hyperparameters:
    """Training knobs; defaults follow the grid-search best values."""

    lr: float = 2.5e-4
    gamma: float = 0.9
    batch_size: int = 64
    buffer_size: int = 10_000
    target_update_freq: int = 2_500
    max_grad_norm: float = 10.0
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    epsilon_decay_steps: int = 50_000
    train_start_episodes: int = 200
    train_every_episodes: int = 1
    agent_hidden_dim: int = 128
    mixing_embed_dim: int = 32
    attention_heads: int = 4
    bootstrap: str = "online_argmax"  # or "target_argmax"

    def __post_init__(self):
        if self.bootstrap not in ("online_argmax", "target_argmax"):
            raise ValueError(f"Hyperparameters: unknown bootstrap {self.bootstrap!r}")


def collect_episode(env, agent: RecurrentAgentNet, info: CentralizedInfoSource,
                    epsilon: float, rng: np.random.Generator,
                    seed: int = 0) -> EpisodeBatch:
    """Roll one epsilon-greedy episode, recording everything training needs.

    The sampled centralized vector is stored per step so that noise-kind
    sources replay identically at training time.
    """
    n = agent.n_agents
    sr = env.reset(seed)
    hidden = agent.initial_hidden(n)
    prev_actions = np.full(n, -1)
    agent_ids = np.arange(n)
    obs_seq, state_seq, central_seq = [], [], []
    action_seq, reward_seq = [], []
    with T.no_grad():
        while True:
            obs_seq.append(sr.observations.copy())
            state_seq.append(sr.state.copy())
            central_seq.append(info.vector(sr.state, rng))
            inputs = agent.build_inputs(sr.observations, prev_actions, agent_ids)
            utils = agent(inputs, hidden)
            hidden = utils.hidden
            actions = select_actions(utils, epsilon, rng)
            sr = env.step(actions)
            action_seq.append(actions)
            reward_seq.append(sr.reward)
            prev_actions = actions
            if sr.terminal:
                obs_seq.append(sr.observations.copy())
                state_seq.append(sr.state.copy())
                central_seq.append(info.vector(sr.state, rng))
                break
    return EpisodeBatch(
        obs=np.stack(obs_seq),
        actions=np.stack(action_seq),
        rewards=np.array(reward_seq, dtype=np.float64),
        states=np.stack(state_seq),
        central=np.stack(central_seq),
    )


def pad_episodes(episodes: list[EpisodeBatch]) -> dict:
    """Stack variable-length episodes into padded arrays plus a step mask."""
    b = len(episodes)
    t_max = max(e.length for e in episodes)
    n = episodes[0].actions.shape[1]
    obs_dim = episodes[0].obs.shape[2]
    central_dim = episodes[0].central.shape[1]
    obs = np.zeros((b, t_max + 1, n, obs_dim))
    actions = np.zeros((b, t_max, n), dtype=int)
    rewards = np.zeros((b, t_max))
    central = np.zeros((b, t_max + 1, central_dim))
    mask = np.zeros((b, t_max))
    lengths = np.zeros(b, dtype=int)
    for i, e in enumerate(episodes):
        t = e.length
        obs[i, : t + 1] = e.obs
        actions[i, :t] = e.actions
        rewards[i, :t] = e.rewards
        central[i, : t + 1] = e.central
        mask[i, :t] = 1.0
        lengths[i] = t
    return {
        "obs": obs,
        "actions": actions,
        "rewards": rewards,
        "central": central,
        "mask": mask,
        "lengths": lengths,
    }


def _unroll_team(agent: RecurrentAgentNet, batch: dict, n_steps: int) -> list[TeamOutputs]:
    """Unroll the shared agent network over padded episodes from zero hidden.

    Rows are laid out agent-major: agent i occupies rows [i*B, (i+1)*B), so
    per-agent tensors come out of a row slice.  Returns one TeamOutputs per
    step, each batched over the B episodes.
    """
    obs = batch["obs"]
    actions = batch["actions"]
    b, _, n, _ = obs.shape
    agent_ids = np.repeat(np.arange(n), b)
    hidden = agent.initial_hidden(b * n)
    steps: list[TeamOutputs] = []
    for t in range(n_steps):
        obs_rows = obs[:, t].transpose(1, 0, 2).reshape(b * n, -1)
        if t == 0:
            prev = np.full(b * n, -1)
        else:
            prev = actions[:, t - 1].transpose(1, 0).reshape(b * n)
        inputs = agent.build_inputs(obs_rows, prev, agent_ids)
        utils = agent(inputs, hidden)
        hidden = utils.hidden
        per_agent = lambda tens: [T.slice_axis0(tens, i * b, (i + 1) * b) for i in range(n)]
        if agent.mode == "single":
            steps.append(TeamOutputs(
                mode="single",
                hiddens=per_agent(utils.hidden),
                q_values=per_agent(utils.q_values),
            ))
        else:
            adv = per_agent(utils.adv_values)
            vals = [T.reshape(v, (b,)) for v in per_agent(T.reshape(utils.v_value, (b * n, 1)))]
            steps.append(TeamOutputs(
                mode="dueling",
                hiddens=per_agent(utils.hidden),
                values=vals,
                advantages=adv,
            ))
    return steps


def _flatten_steps(steps: list[TeamOutputs]) -> TeamOutputs:
    """Concatenate per-step TeamOutputs time-major into one big batch."""
    n = steps[0].n_agents
    mode = steps[0].mode
    hiddens = [T.concat([s.hiddens[i] for s in steps], axis=0) for i in range(n)]
    if mode == "single":
        qs = [T.concat([s.q_values[i] for s in steps], axis=0) for i in range(n)]
        return TeamOutputs(mode=mode, hiddens=hiddens, q_values=qs)
    vals = [T.concat([s.values[i] for s in steps], axis=0) for i in range(n)]
    advs = [T.concat([s.advantages[i] for s in steps], axis=0) for i in range(n)]
    return TeamOutputs(mode=mode, hiddens=hiddens, values=vals, advantages=advs)


def greedy_actions(team: TeamOutputs) -> np.ndarray:
    """Per-agent argmax actions (B, n) of a team's selection values."""
    vecs = team.q_values if team.mode == "single" else team.advantages
    return np.stack([v.data.argmax(axis=-1) for v in vecs], axis=1)


def compute_targets(batch: dict, online_agent: RecurrentAgentNet,
                    target_agent: RecurrentAgentNet, target_mixer,
                    gamma: float, bootstrap: str = "online_argmax",
                    next_greedy: np.ndarray | None = None) -> np.ndarray:
    """Per-step TD targets y (B, T): rewards plus the discounted target joint
    value at the next step's greedy actions; terminal steps use the reward
    alone.  Runs entirely without gradients.

    ``next_greedy`` optionally supplies the online greedy actions at steps
    1..T (time-major, (T*B, n)) when the caller has already unrolled the
    online network, avoiding a duplicate unroll.
    """
    b, t_max = batch["rewards"].shape
    lengths = batch["lengths"]
    with T.no_grad():
        target_steps = _unroll_team(target_agent, batch, t_max + 1)
        if t_max >= 1:
            if bootstrap != "online_argmax":
                select_steps = target_steps
            elif next_greedy is None:
                select_steps = _unroll_team(online_agent, batch, t_max + 1)
            else:
                select_steps = None
            next_team = _flatten_steps(target_steps[1:])
            if select_steps is not None:
                next_actions = np.concatenate(
                    [greedy_actions(s) for s in select_steps[1:]], axis=0
                )
            else:
                next_actions = next_greedy
            central_next = np.concatenate(
                [batch["central"][:, t + 1] for t in range(t_max)], axis=0
            )
            out = target_mixer(next_team, next_actions, Tensor(central_next))
            q_next = out.q_joint.data.reshape(t_max, b).T  # (B, T)
        else:
            q_next = np.zeros((b, 0))
    y = batch["rewards"].copy()
    for i in range(b):
        t = lengths[i]
        if t > 1:
            # q_next[:, j] is the target joint value at step j + 1, which
            # bootstraps the transition taken at step j; the last transition
            # of the episode is terminal and keeps y = r.
            y[i, : t - 1] += gamma * q_next[i, : t - 1]
    return y


@dataclass
class TrainStepResult:
    loss: float
    grad_norm: float


class Learner:
    """Owns the online and target networks, replay, and the TD update."""

    def __init__(self, env, algorithm: str, central_kind: str,
                 rng: np.random.Generator, hyper: Hyperparameters | None = None, *,
                 qmix_variant: str = "state", qplex_variant: str = "state"):
        self.env = env
        self.algorithm = algorithm
        self.descriptor = env.descriptor
        counts = self.descriptor.action_counts
        if len(set(counts)) != 1:
            raise ValueError(
                "Learner: the shared agent network needs equal action counts, "
                f"got {counts}"
            )
        self.hyper = hyper if hyper is not None else Hyperparameters()
        self.rng = rng
        self.mode = agent_mode_for(algorithm)
        self.info = CentralizedInfoSource(central_kind, self.descriptor.state_dim)
        n = self.descriptor.n_agents

        def build(r):
            agent = RecurrentAgentNet(
                self.descriptor.obs_dim, counts[0], n, r,
                hidden_dim=self.hyper.agent_hidden_dim, mode=self.mode,
            )
            mixer = make_mixer(
                algorithm, n_agents=n, action_counts=counts,
                central_dim=self.descriptor.state_dim,
                agent_hidden_dim=self.hyper.agent_hidden_dim, rng=r,
                qmix_variant=qmix_variant, qplex_variant=qplex_variant,
                embed_dim=self.hyper.mixing_embed_dim,
                n_heads=self.hyper.attention_heads,
            )
            return agent, mixer

        self.agent, self.mixer = build(rng)
        self.target_agent, self.target_mixer = build(rng)
        self.sync_target()
        self.target_agent.set_requires_grad(False)
        self.target_mixer.set_requires_grad(False)

        self.params = self.agent.parameters() + self.mixer.parameters()
        self.opt = Adam(self.params, lr=self.hyper.lr)
        self.buffer = ReplayBuffer(self.hyper.buffer_size)
        self.env_steps = 0
        self.episodes = 0
        self.train_steps = 0

    def sync_target(self) -> None:
        self.target_agent.load_state_arrays(self.agent.state_arrays())
        self.target_mixer.load_state_arrays(self.mixer.state_arrays())

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, module in (("agent", self.agent), ("mixer", self.mixer)):
            for key, arr in module.state_arrays().items():
                out[f"{prefix}.{key}"] = arr
        return out

    def train_step(self, episodes: list[EpisodeBatch]) -> TrainStepResult:
        batch = pad_episodes(episodes)
        b, t_max = batch["rewards"].shape

        self.agent.zero_grad()
        self.mixer.zero_grad()
        # One extra unrolled step supplies the online greedy actions the
        # bootstrap needs, sparing compute_targets a second online unroll;
        # its outputs never feed the loss, so backward cost is unaffected.
        steps = _unroll_team(self.agent, batch, t_max + 1)
        next_greedy = np.concatenate(
            [greedy_actions(s) for s in steps[1:]], axis=0
        )
        y = compute_targets(batch, self.agent, self.target_agent,
                            self.target_mixer, self.hyper.gamma,
                            self.hyper.bootstrap, next_greedy=next_greedy)
        team = _flatten_steps(steps[:-1])
        actions = batch["actions"].transpose(1, 0, 2).reshape(b * t_max, -1)
        central = np.concatenate([batch["central"][:, t] for t in range(t_max)], axis=0)
        out = self.mixer(team, actions, Tensor(central))

        mask = batch["mask"].T.reshape(-1)
        y_flat = y.T.reshape(-1)
        diff = T.sub(out.q_joint, Tensor(y_flat))
        masked_sq = T.mul(T.square(diff), Tensor(mask))
        loss = T.mul(T.sum_(masked_sq), 1.0 / mask.sum())
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise RuntimeError(
                f"train_step: non-finite loss {loss_value} at train step "
                f"{self.train_steps} (env step {self.env_steps})"
            )
        loss.backward()
        norm = clip_global_norm(self.params, self.hyper.max_grad_norm)
        self.opt.step()

        self.train_steps += 1
        if self.train_steps % self.hyper.target_update_freq == 0:
            self.sync_target()
        return TrainStepResult(loss=loss_value, grad_norm=norm)

    def collect(self, rng: np.random.Generator) -> EpisodeBatch:
        eps = epsilon_at(
            self.env_steps,
            self.hyper.epsilon_start,
            self.hyper.epsilon_final,
            self.hyper.epsilon_decay_steps,
        )
        episode = collect_episode(self.env, self.agent, self.info, eps, rng)
        self.buffer.add(episode)
        self.env_steps += episode.length
        self.episodes += 1
        return episode

    def maybe_train(self, rng: np.random.Generator) -> TrainStepResult | None:
        ready = (
            self.episodes >= self.hyper.train_start_episodes
            and len(self.buffer) >= min(self.hyper.batch_size, self.buffer.capacity)
            and self.episodes % self.hyper.train_every_episodes == 0
        )
        if not ready:
            return None
        size = min(self.hyper.batch_size, len(self.buffer))
        return self.train_step(self.buffer.sample(size, rng))

    def greedy_return(self, rng: np.random.Generator, episodes: int = 1) -> float:
        """Mean undiscounted return of fully greedy episodes."""
        total = 0.0
        for _ in range(episodes):
            ep = collect_episode(self.env, self.agent, self.info, 0.0, rng)
            total += float(ep.rewards.sum())
        return total / episodes

    def save_checkpoint(self, path, meta: dict | None = None) -> None:
        """Write online/target parameters, optimizer state and counters to a
        weight-map file; ``meta`` extends the stored JSON metadata."""
        from .tensor import save_weight_map

        arrays: dict[str, np.ndarray] = {}
        pairs = [
            ("online.agent", self.agent), ("online.mixer", self.mixer),
            ("target.agent", self.target_agent), ("target.mixer", self.target_mixer),
        ]
        for prefix, module in pairs:
            for key, arr in module.state_arrays().items():
                arrays[f"{prefix}.{key}"] = arr
        for key, arr in self.opt.state_arrays().items():
            arrays[f"opt.{key}"] = arr
        full_meta = {
            "algorithm": self.algorithm,
            "central_kind": self.info.kind,
            "env_steps": self.env_steps,
            "episodes": self.episodes,
            "train_steps": self.train_steps,
        }
        if meta:
            full_meta.update(meta)
        save_weight_map(path, arrays, meta=full_meta)

    def load_checkpoint(self, path) -> dict:
        """Restore parameters, optimizer state and counters; returns the
        stored metadata."""
        from .tensor import load_weight_map

        arrays, meta = load_weight_map(path)
        self.agent.load_state_arrays(arrays, prefix="online.agent")
        self.mixer.load_state_arrays(arrays, prefix="online.mixer")
        self.target_agent.load_state_arrays(arrays, prefix="target.agent")
        self.target_mixer.load_state_arrays(arrays, prefix="target.mixer")
        self.opt.load_state_arrays(arrays, prefix="opt")
        self.env_steps = int(meta.get("env_steps", 0))
        self.episodes = int(meta.get("episodes", 0))
        self.train_steps = int(meta.get("train_steps", 0))
        return meta
