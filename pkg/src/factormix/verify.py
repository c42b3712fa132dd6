"""Brute-force oracles and property harnesses for the factorization heads.

The central question every harness answers mechanically: does greedy action
selection over the local utilities agree with greedy selection over the
mixed joint value?  Enumeration over the whole joint action space is the
oracle; mixers are evaluated on every joint action in one batched call.

Also here: the supervised fitting harness that measures how well a mixer
family can represent a one-step payoff table, the grid-search floor for the
best monotonically-factorizable fit, and input-gradient saliency maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import tensor as T
from .envs import JOINT_ACTION_CAP
from .mixers import TeamOutputs
from .tensor import Tensor
from .training import Adam

__all__ = [
    "IgmReport",
    "TargetTable",
    "TeamSnapshot",
    "brute_force_joint_argmax",
    "table_argmax_set",
    "check_igm",
    "check_advantage_igm",
    "check_state_invariance",
    "fit_expressiveness",
    "monotone_fit_floor",
    "random_igm_table",
    "non_monotonic_table",
    "exact_representation_witness",
    "saliency_jacobian",
    "gini_concentration",
]


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def table_argmax_set(table: np.ndarray, atol: float = 0.0) -> set[tuple[int, ...]]:
    """All maximizing joint actions of a payoff table (ties reported)."""
    table = np.asarray(table, dtype=np.float64)
    top = table.max()
    hits = np.argwhere(table >= top - atol)
    return {tuple(int(i) for i in idx) for idx in hits}


def brute_force_joint_argmax(q_fn, action_counts, atol: float = 0.0) -> set[tuple[int, ...]]:
    """Exact maximizer set of ``q_fn`` over the enumerated joint action space."""
    action_counts = tuple(int(c) for c in action_counts)
    total = math.prod(action_counts)
    if total > JOINT_ACTION_CAP:
        raise ValueError(
            f"brute_force_joint_argmax: {total} joint actions exceed the cap "
            f"of {JOINT_ACTION_CAP}"
        )
    table = np.empty(action_counts)
    for joint in product(*(range(c) for c in action_counts)):
        table[joint] = float(q_fn(joint))
    return table_argmax_set(table, atol=atol)


@dataclass
class TeamSnapshot:
    """Fixed per-agent utilities for one history, ready to be tiled across a
    batch of candidate joint actions."""

    mode: str
    hiddens: np.ndarray  # (n, H)
    q_vectors: list[np.ndarray] | None = None  # per agent (U_i,)
    values: list[float] | None = None
    adv_vectors: list[np.ndarray] | None = None  # per agent (U_i,), max zero

    @property
    def n_agents(self) -> int:
        return self.hiddens.shape[0]

    @property
    def action_counts(self) -> tuple[int, ...]:
        vecs = self.q_vectors if self.mode == "single" else self.adv_vectors
        return tuple(len(v) for v in vecs)

    def local_greedy(self) -> tuple[int, ...]:
        vecs = self.q_vectors if self.mode == "single" else self.adv_vectors
        return tuple(int(np.argmax(v)) for v in vecs)

    def local_advantages(self) -> list[np.ndarray]:
        if self.mode == "dueling":
            return [np.asarray(a, dtype=np.float64) for a in self.adv_vectors]
        return [np.asarray(q) - np.max(q) for q in self.q_vectors]

    def tiled_team(self, batch: int) -> TeamOutputs:
        hiddens = [Tensor(np.tile(self.hiddens[i], (batch, 1)))
                   for i in range(self.n_agents)]
        if self.mode == "single":
            qs = [Tensor(np.tile(q, (batch, 1))) for q in self.q_vectors]
            return TeamOutputs(mode="single", hiddens=hiddens, q_values=qs)
        vals = [Tensor(np.full(batch, v)) for v in self.values]
        advs = [Tensor(np.tile(a, (batch, 1))) for a in self.adv_vectors]
        return TeamOutputs(mode="dueling", hiddens=hiddens, values=vals,
                           advantages=advs)


def random_snapshot(action_counts, rng: np.random.Generator, mode: str = "single",
                    hidden_dim: int = 4) -> TeamSnapshot:
    n = len(action_counts)
    hiddens = rng.standard_normal((n, hidden_dim))
    if mode == "single":
        return TeamSnapshot(
            mode="single",
            hiddens=hiddens,
            q_vectors=[rng.standard_normal(c) for c in action_counts],
        )
    advs = []
    for c in action_counts:
        a = rng.standard_normal(c)
        advs.append(a - a.max())
    return TeamSnapshot(
        mode="dueling",
        hiddens=hiddens,
        values=[float(v) for v in rng.standard_normal(n)],
        adv_vectors=advs,
    )


def mixer_joint_tables(mixer, snapshot: TeamSnapshot, central: np.ndarray | None):
    """Evaluate the mixer on every joint action in one batched forward call.

    Returns (q_table, a_table) shaped like the joint action space; a_table is
    None for mixers without an explicit advantage stream.
    """
    counts = snapshot.action_counts
    joints = list(product(*(range(c) for c in counts)))
    batch = len(joints)
    actions = np.array(joints, dtype=int)
    team = snapshot.tiled_team(batch)
    central_t = None
    if central is not None:
        central_t = Tensor(np.tile(np.asarray(central, dtype=np.float64), (batch, 1)))
    with T.no_grad():
        out = mixer(team, actions, central_t)
    q_table = out.q_joint.data.reshape(counts)
    a_table = None
    if out.a_joint is not None:
        a_table = out.a_joint.data.reshape(counts)
    return q_table, a_table


# ---------------------------------------------------------------------------
# Consistency harnesses
# ---------------------------------------------------------------------------

@dataclass
class IgmReport:
    """Outcome of a greedy-consistency sweep; passes iff no violations."""

    samples: int
    violations: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def _sample_action_counts(rng: np.random.Generator,
                          agent_choices=(2, 3), count_choices=(2, 3, 5)):
    n = int(rng.choice(agent_choices))
    return tuple(int(rng.choice(count_choices)) for _ in range(n))


def check_igm(mixer_factory, n_samples: int, rng: np.random.Generator, *,
              mode: str = "single", hidden_dim: int = 4, central_dim: int = 4,
              action_counts=None, agent_choices=(2, 3),
              count_choices=(2, 3, 5)) -> IgmReport:
    """Greedy-consistency sweep over random parameters and random utilities.

    Each sample draws fresh mixer parameters via ``mixer_factory(rng,
    action_counts)``, random local utilities and a random centralized vector,
    then checks that the tuple of local argmaxes belongs to the brute-force
    joint argmax set.
    """
    report = IgmReport(samples=n_samples)
    for _ in range(n_samples):
        counts = action_counts or _sample_action_counts(rng, agent_choices, count_choices)
        snapshot = random_snapshot(counts, rng, mode=mode, hidden_dim=hidden_dim)
        mixer = mixer_factory(rng, counts)
        central = rng.standard_normal(central_dim)
        q_table, _ = mixer_joint_tables(mixer, snapshot, central)
        joint_set = table_argmax_set(q_table)
        local = snapshot.local_greedy()
        if local not in joint_set:
            report.violations.append({
                "action_counts": counts,
                "local_greedy": local,
                "joint_argmax": sorted(joint_set),
                "q_table": q_table,
            })
    return report


def check_advantage_igm(mixer_factory, n_samples: int, rng: np.random.Generator, *,
                        mode: str = "single", hidden_dim: int = 4,
                        central_dim: int = 4, action_counts=None,
                        agent_choices=(2, 3), count_choices=(2, 3, 5),
                        tol: float = 1e-9) -> IgmReport:
    """Advantage-level consistency sweep.

    Uses the mixer's explicit advantage stream where it has one, otherwise
    the decomposition A = Q - max(Q) of the enumerated joint table.  Checks
    argmax membership, non-positivity, and that the advantage at the local
    greedy tuple is zero.
    """
    report = IgmReport(samples=n_samples)
    for _ in range(n_samples):
        counts = action_counts or _sample_action_counts(rng, agent_choices, count_choices)
        snapshot = random_snapshot(counts, rng, mode=mode, hidden_dim=hidden_dim)
        mixer = mixer_factory(rng, counts)
        central = rng.standard_normal(central_dim)
        q_table, a_table = mixer_joint_tables(mixer, snapshot, central)
        if a_table is None:
            a_table = q_table - q_table.max()
        joint_set = table_argmax_set(a_table)
        local = snapshot.local_greedy()
        ok = (
            local in joint_set
            and a_table.max() <= tol
            and abs(a_table[local]) <= tol
        )
        if not ok:
            report.violations.append({
                "action_counts": counts,
                "local_greedy": local,
                "joint_argmax": sorted(joint_set),
                "a_max": float(a_table.max()),
                "a_at_greedy": float(a_table[local]),
            })
    return report


def check_state_invariance(mixer, snapshot: TeamSnapshot, n_states: int,
                           rng: np.random.Generator, central_dim: int):
    """Assert the joint argmax set is identical across sampled centralized
    vectors, for fixed local utilities.  Returns (passed, witness)."""
    reference = None
    ref_state = None
    for _ in range(n_states):
        central = rng.standard_normal(central_dim)
        q_table, _ = mixer_joint_tables(mixer, snapshot, central)
        argmax = table_argmax_set(q_table)
        if reference is None:
            reference, ref_state = argmax, central
        elif argmax != reference:
            return False, {
                "state_a": ref_state,
                "argmax_a": sorted(reference),
                "state_b": central,
                "argmax_b": sorted(argmax),
            }
    return True, None


# ---------------------------------------------------------------------------
# Expressiveness
# ---------------------------------------------------------------------------

@dataclass
class TargetTable:
    """A one-step payoff table with a designated optimal joint action."""

    payoffs: np.ndarray
    optimal: tuple[int, ...]
    igm_satisfiable: bool

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(self.payoffs.shape)


def random_igm_table(action_counts, rng: np.random.Generator,
                     spread: float = 3.0, margin: float = 1.0) -> TargetTable:
    """Random table whose unique maximum sits at a random joint action, so a
    consistent local utility assignment exists by construction."""
    payoffs = rng.standard_normal(tuple(action_counts)) * spread
    optimal = tuple(int(rng.integers(0, c)) for c in action_counts)
    payoffs[optimal] = payoffs.max() + margin
    return TargetTable(payoffs=payoffs, optimal=optimal, igm_satisfiable=True)


def non_monotonic_table() -> TargetTable:
    """The canonical two-agent table no monotonic mixer can represent:
    cooperation pays 8, miscoordination costs 12, and mutual defection is 0,
    while the greedy tuple stays at (0, 0)."""
    payoffs = np.array([[8.0, -12.0], [-12.0, 0.0]])
    return TargetTable(payoffs=payoffs, optimal=(0, 0), igm_satisfiable=True)


def _tile_rows(param: Tensor, batch: int) -> Tensor:
    """Differentiably repeat a (d,) parameter into (batch, d) rows."""
    return T.add(T.reshape(param, (1, param.size)), Tensor(np.zeros((batch, 1))))


class TabularTeam:
    """Learnable per-agent utilities for a one-step game (constant history).

    Stands in for agent networks during supervised fitting: observations are
    constant in a matrix game, so the utilities are free parameters.  When a
    target table is supplied, parameters warm-start consistent with its
    greedy tuple and value scale; flipping a max-normalized argmax by
    gradient descent otherwise has to cross a tie barrier, which is an
    optimization artifact rather than a representation limit.
    """

    def __init__(self, action_counts, rng: np.random.Generator, mode: str,
                 hidden_dim: int = 4, anchor: "TargetTable | None" = None):
        self.mode = mode
        self.action_counts = tuple(action_counts)
        self.hidden_dim = hidden_dim
        n = len(self.action_counts)

        def utility_init(i: int, c: int) -> np.ndarray:
            base = rng.standard_normal(c) * 0.1
            if anchor is not None:
                depth = (anchor.payoffs.max() - anchor.payoffs.min()) / n
                base = base - depth
                base[anchor.optimal[i]] = rng.standard_normal() * 0.1
            return base

        if mode == "single":
            self.q_params = [
                Tensor(utility_init(i, c), requires_grad=True)
                for i, c in enumerate(self.action_counts)
            ]
            self.params = list(self.q_params)
        else:
            v0 = anchor.payoffs.max() / n if anchor is not None else 0.0
            self.v_params = [
                Tensor(v0 + rng.standard_normal(1) * 0.1, requires_grad=True)
                for _ in range(n)
            ]
            self.adv_params = [
                Tensor(utility_init(i, c), requires_grad=True)
                for i, c in enumerate(self.action_counts)
            ]
            self.params = list(self.v_params) + list(self.adv_params)

    def team(self, batch: int) -> TeamOutputs:
        n = len(self.action_counts)
        hiddens = [Tensor(np.zeros((batch, self.hidden_dim))) for _ in range(n)]
        if self.mode == "single":
            qs = [_tile_rows(p, batch) for p in self.q_params]
            return TeamOutputs(mode="single", hiddens=hiddens, q_values=qs)
        values = [T.reshape(_tile_rows(p, batch), (batch,)) for p in self.v_params]
        advs = []
        for p in self.adv_params:
            tiled = _tile_rows(p, batch)
            advs.append(T.sub(tiled, T.max_over_axis(tiled, axis=-1, keepdims=True)))
        return TeamOutputs(mode="dueling", hiddens=hiddens, values=values,
                           advantages=advs)

    def local_greedy(self) -> tuple[int, ...]:
        vecs = self.q_params if self.mode == "single" else self.adv_params
        return tuple(int(np.argmax(p.data)) for p in vecs)


@dataclass
class FitResult:
    mse: float
    steps: int
    fitted_table: np.ndarray
    greedy_matches_target: bool


def fit_expressiveness(mixer_factory, target: TargetTable, *,
                       rng: np.random.Generator, mode: str = "single",
                       budget: int = 20000, lr: float = 5e-3,
                       central_dim: int = 1, hidden_dim: int = 4,
                       stop_mse: float = 1e-4, warm_start: bool = True) -> FitResult:
    """Supervised regression of a mixer family onto a payoff table.

    Local utilities are free parameters (one-step game); the mixer comes from
    ``mixer_factory(rng, action_counts)``.  Minimizes the mean squared error
    over all joint actions with Adam and reports the converged table.
    """
    counts = target.action_counts
    joints = list(product(*(range(c) for c in counts)))
    batch = len(joints)
    actions = np.array(joints, dtype=int)
    target_vec = Tensor(np.array([target.payoffs[j] for j in joints]))
    central = Tensor(np.zeros((batch, central_dim)))

    team_params = TabularTeam(counts, rng, mode, hidden_dim=hidden_dim,
                              anchor=target if warm_start else None)
    mixer = mixer_factory(rng, counts)
    params = team_params.params + mixer.parameters()
    opt = Adam(params, lr=lr)

    mse = float("inf")
    fitted = None
    steps_done = 0
    for step in range(1, budget + 1):
        for p in params:
            p.grad = None
        out = mixer(team_params.team(batch), actions, central)
        err = T.sub(out.q_joint, target_vec)
        loss = T.mean_(T.square(err))
        loss.backward()
        opt.step()
        steps_done = step
        mse = loss.item()
        if mse <= stop_mse:
            break
        if step == budget // 2 or step == (3 * budget) // 4:
            opt.lr *= 0.2  # settle the oscillation around the minimum
    with T.no_grad():
        out = mixer(team_params.team(batch), actions, central)
    fitted = out.q_joint.data.reshape(counts)
    mse = float(np.mean((fitted - target.payoffs) ** 2))
    greedy = team_params.local_greedy()
    return FitResult(
        mse=mse,
        steps=steps_done,
        fitted_table=fitted,
        greedy_matches_target=greedy == target.optimal,
    )


def monotone_fit_floor(table: np.ndarray, rounds: int = 6,
                       points: int = 21) -> float:
    """Best mean squared error any monotonically-factorizable head can reach
    on a 2x2 payoff table, found by refined grid search.

    A monotone mixing of free per-agent utilities can realize exactly the
    tables that are isotone under some ordering of each agent's actions, so
    the search runs over fitted cell values under every ordering's partial
    order, refining the grid around the incumbent.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.shape != (2, 2):
        raise ValueError("monotone_fit_floor: grid search implemented for 2x2 tables")
    lo, hi = table.min() - 1.0, table.max() + 1.0
    center = np.full(4, (lo + hi) / 2.0)
    span = (hi - lo) / 2.0
    best = np.inf
    best_point = center.copy()
    orderings = [(r, c) for r in ((0, 1), (1, 0)) for c in ((0, 1), (1, 0))]
    flat_target = table.reshape(-1)  # order: v00, v01, v10, v11
    for _ in range(rounds):
        axes = [np.linspace(c - span, c + span, points) for c in center]
        v00, v01, v10, v11 = np.meshgrid(*axes, indexing="ij", sparse=True)
        mse = ((v00 - flat_target[0]) ** 2 + (v01 - flat_target[1]) ** 2
               + (v10 - flat_target[2]) ** 2 + (v11 - flat_target[3]) ** 2) / 4.0
        feasible = None
        for row_order, col_order in orderings:
            grid = np.empty((2, 2), dtype=object)
            grid[0, 0], grid[0, 1], grid[1, 0], grid[1, 1] = v00, v01, v10, v11
            lo_r, hi_r = row_order
            lo_c, hi_c = col_order
            ok = (
                (grid[lo_r, lo_c] <= grid[lo_r, hi_c])
                & (grid[lo_r, lo_c] <= grid[hi_r, lo_c])
                & (grid[lo_r, hi_c] <= grid[hi_r, hi_c])
                & (grid[hi_r, lo_c] <= grid[hi_r, hi_c])
            )
            feasible = ok if feasible is None else (feasible | ok)
        masked = np.where(feasible, mse, np.inf)
        idx = np.unravel_index(np.argmin(masked), masked.shape)
        best_here = masked[idx]
        point = np.array([axes[d][idx[d]] for d in range(4)])
        if best_here < best:
            best = float(best_here)
            best_point = point
        center = best_point
        span /= float(points - 1) / 2.5
    return best


def exact_representation_witness(target: TargetTable,
                                 local_q: list[np.ndarray],
                                 atol: float = 1e-9) -> dict:
    """Constructive exact-representation check for the duplex form.

    Given local utilities whose greedy tuple matches the target's optimum,
    sets all transformation weights to one, biases so the values sum to the
    target's maximum, and positive attention coefficients equal to the
    target advantage split across the agents with nonzero local advantage.
    Verifies the reconstruction reproduces the table exactly wherever the
    construction's denominators are nonzero.
    """
    counts = target.action_counts
    local_adv = [q - q.max() for q in local_q]
    greedy = tuple(int(np.argmax(q)) for q in local_q)
    if greedy != target.optimal:
        raise ValueError("witness: local utilities do not select the target optimum")
    n = len(counts)
    v_star = target.payoffs.max()
    values = [q.max() for q in local_q]
    biases = [v_star / n - values[i] for i in range(n)]  # w_i = 1 everywhere
    reconstructed = np.zeros(counts)
    lam_min = np.inf
    checked = np.zeros(counts, dtype=bool)
    for joint in product(*(range(c) for c in counts)):
        adv_target = target.payoffs[joint] - v_star
        active = [i for i in range(n) if local_adv[i][joint[i]] != 0.0]
        total = v_star  # sum of (values + biases)
        if not active:
            reconstructed[joint] = total
            checked[joint] = adv_target == 0.0  # greedy tuple only
            continue
        share = adv_target / len(active)
        for i in active:
            lam = share / local_adv[i][joint[i]]
            lam_min = min(lam_min, lam)
            total += lam * local_adv[i][joint[i]]
        reconstructed[joint] = total
        checked[joint] = True
    errors = np.abs(reconstructed - target.payoffs)
    return {
        "reconstructed": reconstructed,
        "max_error_checked": float(errors[checked].max()) if checked.any() else 0.0,
        "all_checked": bool(checked.all()),
        "lambda_min": float(lam_min) if np.isfinite(lam_min) else 1.0,
        "exact": bool(checked.all() and (errors[checked] <= atol).all()),
    }


# ---------------------------------------------------------------------------
# Saliency
# ---------------------------------------------------------------------------

@dataclass
class SaliencyResult:
    values: np.ndarray  # per input feature, in [0, 1]
    all_zero: bool  # flagged when the Jacobian vanished


def saliency_jacobian(value_fn, inputs: np.ndarray) -> SaliencyResult:
    """Absolute input gradient of a scalar value head, max-normalized.

    ``value_fn`` maps an input tensor of shape (1, d) to a scalar tensor.
    A vanishing Jacobian is reported via ``all_zero`` instead of dividing
    by zero.
    """
    x = Tensor(np.asarray(inputs, dtype=np.float64).reshape(1, -1),
               requires_grad=True)
    out = value_fn(x)
    if out.size != 1:
        raise ValueError("saliency_jacobian: value_fn must return a scalar")
    out.backward()
    grad = np.zeros(x.size) if x.grad is None else np.abs(x.grad.reshape(-1))
    top = grad.max()
    if top == 0.0:
        return SaliencyResult(values=grad, all_zero=True)
    return SaliencyResult(values=grad / top, all_zero=False)


def gini_concentration(values: np.ndarray) -> float:
    """Gini coefficient of non-negative saliency mass; higher = more focused."""
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if v.sum() == 0.0:
        return 0.0
    n = v.size
    ranks = np.arange(1, n + 1)
    return float((2.0 * (ranks * v).sum()) / (n * v.sum()) - (n + 1.0) / n)
