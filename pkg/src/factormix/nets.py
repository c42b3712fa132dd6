"""Network building blocks: MLPs, a GRU cell, hypernetworks with
non-negative output weights, and the attention head that produces strictly
positive per-agent mixing coefficients.

All blocks are pure functions of (parameters, inputs) and accept either a
single feature vector ``(d,)`` or a batch ``(B, d)``.  Linear maps are
initialized uniformly in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``; GRU biases
start at zero.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

POSITIVE_FLOOR = 1e-6


class Module:
    """Parameter container with dotted-path naming for the weight map."""

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, child in self._children():
            full = f"{prefix}.{name}" if prefix else name
            if isinstance(child, Tensor):
                out[full] = child
            else:
                out.update(child.named_parameters(full))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for key, param in self.named_parameters().items():
            full = f"{prefix}.{key}" if prefix else key
            src = np.asarray(arrays[full], dtype=np.float64)
            if src.shape != param.data.shape:
                raise ValueError(
                    f"load_state_arrays: {full} has shape {src.shape}, "
                    f"expected {param.data.shape}"
                )
            param.data = src.copy()

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 zero_bias: bool = False):
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"Linear: sizes must be >= 1, got {in_dim}->{out_dim}")
        self.weight = _uniform_init(rng, (in_dim, out_dim), in_dim)
        if zero_bias:
            self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        else:
            self.bias = _uniform_init(rng, (out_dim,), in_dim)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)


_OUTPUT_ACTIVATIONS = ("identity", "abs", "elu_plus_one")


class MLP(Module):
    """Feed-forward stack with relu hidden layers.

    ``output`` selects the final nonlinearity: ``identity``, ``abs`` (used for
    non-negative mixing weights) or ``elu_plus_one`` (strictly positive).
    """

    def __init__(self, sizes: list[int], rng: np.random.Generator,
                 output: str = "identity"):
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"MLP: need sizes >= 1 with at least two entries, got {sizes}")
        if output not in _OUTPUT_ACTIVATIONS:
            raise ValueError(f"MLP: unknown output activation {output!r}")
        self.layers = [
            Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])
        ]
        self.output = output
        self.sizes = list(sizes)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(
                f"MLP: input has {x.shape[-1]} features, expected {self.sizes[0]}"
            )
        h = x
        for layer in self.layers[:-1]:
            h = T.relu(layer(h))
        h = self.layers[-1](h)
        if self.output == "abs":
            return T.abs_(h)
        if self.output == "elu_plus_one":
            return T.add(T.elu(h), 1.0)
        return h


class GRUCell(Module):
    """Standard gated recurrent unit, one step per call.

    With all-zero parameters the update gate is sigmoid(0) = 0.5 and the
    candidate tanh(0) = 0, so the new hidden state is half the old one.
    """

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.hidden_dim = hidden_dim
        self.w_ir = _uniform_init(rng, (in_dim, hidden_dim), in_dim)
        self.w_iz = _uniform_init(rng, (in_dim, hidden_dim), in_dim)
        self.w_in = _uniform_init(rng, (in_dim, hidden_dim), in_dim)
        self.w_hr = _uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim)
        self.w_hz = _uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim)
        self.w_hn = _uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim)
        self.b_r = Tensor(np.zeros(hidden_dim), requires_grad=True)
        self.b_z = Tensor(np.zeros(hidden_dim), requires_grad=True)
        self.b_n = Tensor(np.zeros(hidden_dim), requires_grad=True)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[:-1] != h.shape[:-1] or h.shape[-1] != self.hidden_dim:
            raise ValueError(f"GRUCell: input {x.shape} and hidden {h.shape} mismatch")
        r = T.sigmoid(T.add(T.add(T.matmul(x, self.w_ir), T.matmul(h, self.w_hr)), self.b_r))
        z = T.sigmoid(T.add(T.add(T.matmul(x, self.w_iz), T.matmul(h, self.w_hz)), self.b_z))
        n = T.tanh(T.add(T.add(T.matmul(x, self.w_in), T.mul(r, T.matmul(h, self.w_hn))), self.b_n))
        return T.add(T.mul(z, h), T.mul(T.sub(1.0, z), n))

    def initial_hidden(self, batch: int | None = None) -> Tensor:
        shape = (self.hidden_dim,) if batch is None else (batch, self.hidden_dim)
        return Tensor(np.zeros(shape))


def positive_floor(t: Tensor, floor: float = POSITIVE_FLOOR) -> Tensor:
    """Elementwise max(t, floor), built from relu so it stays on the tape."""
    return T.add(T.relu(T.sub(t, floor)), floor)


class HyperNet(Module):
    """Produces a weight matrix (non-negative via abs) and a bias vector from
    a conditioning vector, for one layer of a monotonic mixing network."""

    def __init__(self, cond_dim: int, rows: int, cols: int,
                 rng: np.random.Generator, hidden: int = 32,
                 bias_hidden: bool = False, monotonic: bool = True):
        self.rows = rows
        self.cols = cols
        self.monotonic = monotonic
        self.weight_net = MLP([cond_dim, hidden, rows * cols], rng)
        if bias_hidden:
            self.bias_net = MLP([cond_dim, hidden, cols], rng)
        else:
            self.bias_net = Linear(cond_dim, cols, rng)

    def __call__(self, cond: Tensor) -> tuple[Tensor, Tensor]:
        """Return (weights (B, rows, cols), bias (B, cols)) for batched cond."""
        raw = self.weight_net(cond)
        if self.monotonic:
            raw = T.abs_(raw)
        weights = T.reshape(raw, (cond.shape[0], self.rows, self.cols))
        bias = self.bias_net(cond)
        return weights, bias


class AttentionLambda(Module):
    """Multi-head attention producing one strictly positive coefficient per
    agent from a conditioning vector and a joint-action encoding.

    Each head softmaxes per-agent scores (rows sum to one) and scales them by
    a softplus-positive head value; summing heads and flooring at 1e-6 keeps
    every coefficient strictly positive.  Head values take the joint-action
    encoding as input too, so the coefficient *sum* can vary with the joint
    action, which the expressive mixers rely on.
    """

    def __init__(self, cond_dim: int, action_enc_dim: int, n_agents: int,
                 rng: np.random.Generator, n_heads: int = 4, hidden: int = 32,
                 positive: bool = True):
        in_dim = cond_dim + action_enc_dim
        self.n_agents = n_agents
        self.n_heads = n_heads
        self.positive = positive
        self.score_nets = [MLP([in_dim, hidden, n_agents], rng) for _ in range(n_heads)]
        self.value_nets = [MLP([in_dim, hidden, 1], rng) for _ in range(n_heads)]

    def head_weights(self, cond: Tensor, action_enc: Tensor) -> list[Tensor]:
        """Per-head softmax attention over agents; each row sums to one."""
        x = T.concat([cond, action_enc], axis=-1)
        return [T.softmax(net(x), axis=-1) for net in self.score_nets]

    def __call__(self, cond: Tensor, action_enc: Tensor) -> Tensor:
        x = T.concat([cond, action_enc], axis=-1)
        total = None
        for score_net, value_net in zip(self.score_nets, self.value_nets):
            attn = T.softmax(score_net(x), axis=-1)
            head_value = value_net(x)
            if self.positive:
                head_value = T.softplus(head_value)
            term = T.mul(attn, head_value)
            total = term if total is None else T.add(total, term)
        if self.positive:
            return positive_floor(total)
        return total
