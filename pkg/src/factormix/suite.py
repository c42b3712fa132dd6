"""Property-suite orchestration and saliency export behind the CLI verbs.

``run_property_suite`` executes the consistency harnesses over every mixer
family with fresh random parameters per draw and emits structured text: one
``PASS``/``FAIL`` line per check plus one ``VIOLATION`` record per offending
sample.  The mutation switches deliberately break the positivity guarantees
so the suite can demonstrate it would catch such bugs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .experiment import ConfigError, ExperimentConfig, build_env
from .mixers import DuelMixMixer, QmixMixer, QplexMixer, VdnMixer
from .tensor import Tensor, load_weight_map
from .training import Learner
from .verify import (
    check_advantage_igm,
    check_igm,
    check_state_invariance,
    fit_expressiveness,
    monotone_fit_floor,
    non_monotonic_table,
    random_igm_table,
    random_snapshot,
    saliency_jacobian,
)

CENTRAL_DIM = 4
HIDDEN_DIM = 4


def mixer_factories(monotonic: bool = True, positive_lambda: bool = True) -> dict:
    """One factory per mixer family; each call draws fresh parameters."""
    return {
        "vdn": lambda rng, counts: VdnMixer(len(counts)),
        "qmix-plain": lambda rng, counts: QmixMixer(
            len(counts), CENTRAL_DIM, rng, embed_dim=8, stateful=False,
            monotonic=monotonic),
        "qmix-state": lambda rng, counts: QmixMixer(
            len(counts), CENTRAL_DIM, rng, embed_dim=8, monotonic=monotonic),
        "qplex-history": lambda rng, counts: QplexMixer(
            len(counts), counts, CENTRAL_DIM, HIDDEN_DIM, rng,
            variant="history", embed_dim=8, n_heads=4,
            positive_lambda=positive_lambda),
        "qplex-state": lambda rng, counts: QplexMixer(
            len(counts), counts, CENTRAL_DIM, HIDDEN_DIM, rng,
            variant="state", embed_dim=8, n_heads=4,
            positive_lambda=positive_lambda),
        "qplex-history-state": lambda rng, counts: QplexMixer(
            len(counts), counts, CENTRAL_DIM, HIDDEN_DIM, rng,
            variant="history-state", embed_dim=8, n_heads=4,
            positive_lambda=positive_lambda),
        "duelmix": lambda rng, counts: DuelMixMixer(
            len(counts), counts, CENTRAL_DIM, HIDDEN_DIM, rng,
            embed_dim=8, n_heads=4, positive_lambda=positive_lambda),
    }


STATEFUL_FAMILIES = ("qmix-state", "qplex-history", "qplex-state",
                     "qplex-history-state", "duelmix")


def _mode_for(name: str) -> str:
    return "dueling" if name == "duelmix" else "single"


@dataclass
class SuiteReport:
    lines: list[str] = field(default_factory=list)
    checks: int = 0
    failures: int = 0

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def record(self, name: str, ok: bool, detail: str, violations=()):
        self.checks += 1
        if not ok:
            self.failures += 1
        for v in violations:
            self.lines.append(f"VIOLATION {name} {v}")
        self.lines.append(f"{'PASS' if ok else 'FAIL'} {name} {detail}")


def run_property_suite(scope: str = "all", *, igm_samples: int = 200,
                       invariance_draws: int = 50, invariance_states: int = 50,
                       monotonicity_samples: int = 1000,
                       expressiveness_tables: int = 3,
                       fit_budget: int = 20_000, seed: int = 0,
                       break_monotonicity: bool = False,
                       break_lambda: bool = False) -> SuiteReport:
    """Run the consistency harnesses; ``scope`` is ``all`` or a prefix such
    as ``igm``, ``advantage``, ``invariance``, ``monotonicity`` or
    ``expressiveness``."""
    report = SuiteReport()
    factories = mixer_factories(monotonic=not break_monotonicity,
                                positive_lambda=not break_lambda)
    rng = np.random.default_rng(seed)

    def in_scope(name: str) -> bool:
        return scope == "all" or name.startswith(scope)

    if in_scope("igm"):
        for family, factory in factories.items():
            result = check_igm(factory, igm_samples, rng, mode=_mode_for(family),
                               hidden_dim=HIDDEN_DIM, central_dim=CENTRAL_DIM)
            report.record(
                f"igm.{family}", result.passed,
                f"samples={result.samples} violations={len(result.violations)}",
                [_format_violation(v) for v in result.violations[:5]],
            )

    if in_scope("advantage"):
        for family, factory in factories.items():
            result = check_advantage_igm(factory, igm_samples, rng,
                                         mode=_mode_for(family),
                                         hidden_dim=HIDDEN_DIM,
                                         central_dim=CENTRAL_DIM)
            report.record(
                f"advantage.{family}", result.passed,
                f"samples={result.samples} violations={len(result.violations)}",
                [_format_violation(v) for v in result.violations[:5]],
            )

    if in_scope("invariance"):
        for family in STATEFUL_FAMILIES:
            factory = factories[family]
            worst = None
            ok = True
            for _ in range(invariance_draws):
                counts = (int(rng.choice((2, 3))),) * int(rng.choice((2, 3)))
                mixer = factory(rng, counts)
                snapshot = random_snapshot(counts, rng, mode=_mode_for(family),
                                           hidden_dim=HIDDEN_DIM)
                passed, witness = check_state_invariance(
                    mixer, snapshot, invariance_states, rng, CENTRAL_DIM)
                if not passed:
                    ok = False
                    worst = witness
                    break
            report.record(
                f"invariance.{family}", ok,
                f"draws={invariance_draws} states={invariance_states}",
                [f"argmax_a={worst['argmax_a']} argmax_b={worst['argmax_b']}"]
                if worst else [],
            )

    if in_scope("monotonicity"):
        violations = 0
        samples = 0
        eps = 1e-4
        while samples < monotonicity_samples:
            mixer = factories["qmix-state"](rng, (3, 3))
            for _ in range(10):
                if samples >= monotonicity_samples:
                    break
                sens = _qmix_sensitivities(mixer, 2, rng, eps)
                if (sens < -1e-8).any():
                    violations += 1
                samples += 1
        report.record("monotonicity.qmix-state", violations == 0,
                      f"samples={samples} violations={violations}")

    if in_scope("expressiveness"):
        failures = []
        for i in range(expressiveness_tables):
            target = random_igm_table((2, 3), rng)
            result = fit_expressiveness(
                lambda r, c: DuelMixMixer(2, c, 1, HIDDEN_DIM, r, embed_dim=8,
                                          n_heads=4),
                target, rng=rng, mode="dueling", budget=fit_budget, lr=1e-2,
            )
            if result.mse > 1e-3:
                failures.append(f"table{i} mse={result.mse:.2e}")
        target = non_monotonic_table()
        floor = monotone_fit_floor(target.payoffs)
        qmix_fit = fit_expressiveness(
            lambda r, c: QmixMixer(2, 1, r, embed_dim=8),
            target, rng=rng, budget=fit_budget // 2, lr=1e-2, stop_mse=0.0,
        )
        duel_fit = fit_expressiveness(
            lambda r, c: DuelMixMixer(2, (2, 2), 1, HIDDEN_DIM, r, embed_dim=8,
                                      n_heads=4),
            target, rng=rng, mode="dueling", budget=fit_budget, lr=1e-2,
        )
        # The monotone head converges to the floor itself (its best reachable
        # error), so the separation claim is: at or above the floor, and at
        # least ten times the expressive head's error.
        gap_ok = (qmix_fit.mse >= floor - 1e-6
                  and qmix_fit.mse >= 10.0 * duel_fit.mse)
        if not gap_ok:
            failures.append(
                f"floor={floor:.6f} qmix={qmix_fit.mse:.6f} duelmix={duel_fit.mse:.2e}"
            )
        report.record(
            "expressiveness.duelmix-vs-qmix", not failures,
            f"tables={expressiveness_tables} floor={floor:.3f} "
            f"qmix_mse={qmix_fit.mse:.3f} duelmix_mse={duel_fit.mse:.2e}",
            failures,
        )

    return report


def _format_violation(v: dict) -> str:
    return (f"counts={v.get('action_counts')} local={v.get('local_greedy')} "
            f"joint={v.get('joint_argmax')}")


def _qmix_sensitivities(mixer, n_agents, rng, eps):
    from .mixers import TeamOutputs

    base = rng.standard_normal(n_agents)
    rows = 2 * n_agents
    qs = []
    for i in range(n_agents):
        q = np.tile(base[i], (rows, 1))
        q[2 * i, 0] += eps
        q[2 * i + 1, 0] -= eps
        qs.append(q)
    team = TeamOutputs(
        mode="single",
        hiddens=[Tensor(np.zeros((rows, HIDDEN_DIM))) for _ in range(n_agents)],
        q_values=[Tensor(q) for q in qs],
    )
    central = Tensor(np.tile(rng.standard_normal(CENTRAL_DIM), (rows, 1)))
    with T.no_grad():
        out = mixer(team, np.zeros((rows, n_agents), dtype=int), central)
    vals = out.q_joint.data
    return np.array([(vals[2 * i] - vals[2 * i + 1]) / (2 * eps)
                     for i in range(n_agents)])


# ---------------------------------------------------------------------------
# Saliency export
# ---------------------------------------------------------------------------

BP_FULL_FEATURES = (
    "self_row", "self_col", "self_up", "self_right", "self_down", "self_left",
    "other_row", "other_col", "other_up", "other_right", "other_down", "other_left",
    "small_box0_row", "small_box0_col", "small_box1_row", "small_box1_col",
    "big_box_row", "big_box_col",
)


def value_stream_fn(learner: Learner, agent_index: int, prev_action: int,
                    hidden: Tensor):
    """Scalar history-value head of one agent as a function of its observation.

    Dueling agents expose the value stream directly; single-stream agents
    define it as the maximum utility.
    """
    net = learner.agent
    n = net.n_agents

    def fn(obs_tensor: Tensor):
        b = obs_tensor.shape[0]
        prev = np.zeros((b, net.n_actions))
        if prev_action >= 0:
            prev[:, prev_action] = 1.0
        ids = np.zeros((b, n))
        ids[:, agent_index] = 1.0
        inputs = T.concat([obs_tensor, Tensor(prev), Tensor(ids)], axis=1)
        utils = net(inputs, hidden)
        if net.mode == "dueling":
            return T.sum_(utils.v_value)
        return T.sum_(T.max_over_axis(utils.q_values, axis=-1))

    return fn


def export_saliency(checkpoint, out_path, step_index: int = 0,
                    agent_index: int = 0) -> dict:
    """Compute the value-stream saliency map of a trained checkpoint on its
    environment's greedy trajectory and write it as feature,value,row,col.

    Rejects checkpoints trained under partial observability: a single
    front-cell one-hot carries no grid-aligned visual information.
    """
    arrays, meta = load_weight_map(checkpoint)
    if meta.get("obs_mode") != "full":
        raise ConfigError(
            f"{checkpoint}: saliency needs a full-observability checkpoint; "
            f"this one was trained with obs_mode={meta.get('obs_mode')!r}"
        )
    if meta.get("env") != "bp":
        raise ConfigError("saliency export supports box-pushing checkpoints")
    config = ExperimentConfig(
        env="bp", bp_grid=int(meta["bp_grid"]), bp_horizon=int(meta["bp_horizon"]),
        bp_full_obs=True, algorithm=meta["algorithm"],
        qmix_variant=meta.get("qmix_variant", "state"),
        qplex_variant=meta.get("qplex_variant", "state"),
        central_info=meta.get("central_info", "s"),
        agent_hidden=int(meta.get("agent_hidden", 128)),
        mixing_embed=int(meta.get("mixing_embed", 32)),
        attention_heads=int(meta.get("attention_heads", 4)),
    )
    env = build_env(config)
    learner = Learner(env, config.algorithm, config.central_info,
                      np.random.default_rng(0), config.hyperparameters())
    learner.load_checkpoint(checkpoint)

    # Greedy rollout to the requested step, threading the recurrent state.
    sr = env.reset(0)
    net = learner.agent
    hidden = net.initial_hidden(env.descriptor.n_agents)
    prev_actions = np.full(env.descriptor.n_agents, -1)
    with T.no_grad():
        for _ in range(step_index):
            inputs = net.build_inputs(sr.observations, prev_actions,
                                      np.arange(env.descriptor.n_agents))
            utils = net(inputs, hidden)
            hidden = utils.hidden
            ranked = utils.q_values if net.mode == "single" else utils.adv_values
            actions = ranked.data.argmax(axis=-1)
            sr = env.step(actions)
            prev_actions = actions
            if sr.terminal:
                break
    agent_hidden = Tensor(hidden.data[agent_index : agent_index + 1].copy())
    fn = value_stream_fn(learner, agent_index, int(prev_actions[agent_index]),
                         agent_hidden)
    result = saliency_jacobian(fn, sr.observations[agent_index])

    grid = env.config.grid_size - 1
    obs = sr.observations[agent_index]
    lines = ["feature,value,row,col"]
    if result.all_zero:
        lines.insert(0, "# all_zero=true")
    for name, value in zip(BP_FULL_FEATURES, result.values):
        row = col = ""
        if name.endswith("_row") or name.endswith("_col"):
            base = name.rsplit("_", 1)[0]
            i = BP_FULL_FEATURES.index(f"{base}_row")
            row = str(int(round(obs[i] * grid)))
            col = str(int(round(obs[i + 1] * grid)))
        lines.append(f"{name},{float(value)!r},{row},{col}")
    Path(out_path).write_text("\n".join(lines) + "\n")
    return {"values": result.values, "all_zero": result.all_zero,
            "features": BP_FULL_FEATURES}
