"""Acceptance criteria, one test per criterion, each printing a PASS line.

Criteria 1-6 and 9's analytic half run in seconds to minutes.  Criterion 7
trains two algorithms for 3 seeds x 200k environment steps on the scaled
box-pushing task and dominates the suite's runtime (roughly an hour or two
of CPU time); criteria 8 and 9 train further short runs.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from factormix import tensor as T
from factormix.agents import RecurrentAgentNet
from factormix.experiment import (
    ExperimentConfig,
    _seed_worker,
    run_ablation,
    run_single_seed,
    write_summary,
)
from factormix.mixers import DuelMixMixer, QmixMixer, QplexMixer, TeamOutputs, VdnMixer
from factormix.nets import MLP, AttentionLambda, GRUCell, HyperNet
from factormix.suite import STATEFUL_FAMILIES, export_saliency, mixer_factories
from factormix.tensor import Tensor, finite_diff_check
from factormix.verify import (
    check_advantage_igm,
    check_igm,
    check_state_invariance,
    fit_expressiveness,
    gini_concentration,
    monotone_fit_floor,
    non_monotonic_table,
    random_igm_table,
    random_snapshot,
    saliency_jacobian,
)

N_DRAWS = 100
GRAD_TOL = 1e-4


def _report(name: str, detail: str) -> None:
    print(f"PASS {name}: {detail}")


# ---------------------------------------------------------------------------
# Criterion 1: gradient correctness of every block and full mixer.
# ---------------------------------------------------------------------------

def _grad_sweep_block(name, build, n_draws=N_DRAWS):
    worst = 0.0
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    for _ in range(n_draws):
        f, params = build(rng)
        report = finite_diff_check(f, params, step=1e-5, tol=GRAD_TOL)
        assert not report.nan_params, f"{name}: non-finite gradient"
        worst = max(worst, report.max_rel_error)
    assert worst < GRAD_TOL, f"{name}: max relative error {worst}"
    return worst


def _mlp_case(rng):
    mlp = MLP([3, 4, 1], rng)
    x = Tensor(rng.standard_normal((2, 3)))
    return lambda *ps: T.sum_(mlp(x)), mlp.parameters()


def _gru_case(rng):
    gru = GRUCell(2, 3, rng)
    xs = [Tensor(rng.standard_normal((1, 2))) for _ in range(8)]

    def f(*ps):
        h = gru.initial_hidden(1)
        for x in xs:
            h = gru(x, h)
        return T.sum_(h)

    return f, gru.parameters()


def _hypernet_case(rng):
    hyper = HyperNet(3, 2, 2, rng, hidden=3)
    cond = Tensor(rng.standard_normal((2, 3)))

    def f(*ps):
        w, b = hyper(cond)
        return T.add(T.sum_(w), T.sum_(b))

    return f, hyper.parameters()


def _attention_case(rng):
    attn = AttentionLambda(2, 4, 2, rng, n_heads=2, hidden=3)
    cond = Tensor(rng.standard_normal((2, 2)))
    enc = Tensor(rng.standard_normal((2, 4)))
    return lambda *ps: T.sum_(attn(cond, enc)), attn.parameters()


def _agent_case(mode):
    def build(rng):
        net = RecurrentAgentNet(2, 2, 2, rng, hidden_dim=3, mode=mode)
        x = Tensor(rng.standard_normal((2, net.in_dim)))
        h = net.initial_hidden(2)

        def f(*ps):
            out = net(x, h)
            if mode == "single":
                return T.sum_(out.q_values)
            return T.add(T.sum_(out.implied_q()), T.sum_(out.v_value))

        return f, net.parameters()

    return build


def _team_case(rng, mode, b=2, n=2, u=2, h=2):
    hiddens = [Tensor(rng.standard_normal((b, h))) for _ in range(n)]
    if mode == "single":
        return TeamOutputs(
            mode=mode, hiddens=hiddens,
            q_values=[Tensor(rng.standard_normal((b, u))) for _ in range(n)],
        )
    raw = [rng.standard_normal((b, u)) for _ in range(n)]
    return TeamOutputs(
        mode=mode, hiddens=hiddens,
        values=[Tensor(rng.standard_normal(b)) for _ in range(n)],
        advantages=[Tensor(a - a.max(axis=1, keepdims=True)) for a in raw],
    )


def _mixer_case(kind):
    def build(rng):
        b, n, u, h, c = 2, 2, 2, 2, 2
        actions = rng.integers(0, u, size=(b, n))
        central = Tensor(rng.standard_normal((b, c)))
        if kind == "vdn":
            mixer = VdnMixer(n)
            team = _team_case(rng, "single")
            # The additive head has no parameters; differentiate the inputs.
            for q in team.q_values:
                q.requires_grad = True
            params = list(team.q_values)
        elif kind in ("qmix-plain", "qmix-state"):
            mixer = QmixMixer(n, c, rng, embed_dim=3,
                              stateful=kind == "qmix-state")
            team = _team_case(rng, "single")
            params = mixer.parameters()
        elif kind.startswith("qplex"):
            variant = kind.split(":", 1)[1]
            mixer = QplexMixer(n, (u,) * n, c, h, rng, variant=variant,
                               embed_dim=3, n_heads=2)
            team = _team_case(rng, "single")
            params = mixer.parameters()
        else:
            mixer = DuelMixMixer(n, (u,) * n, c, h, rng, embed_dim=3, n_heads=2)
            team = _team_case(rng, "dueling")
            params = mixer.parameters()

        def f(*ps):
            return T.sum_(mixer(team, actions, central).q_joint)

        return f, params

    return build


def test_criterion_1_gradient_correctness():
    start = time.time()
    cases = {
        "block.mlp": _mlp_case,
        "block.gru-unroll": _gru_case,
        "block.hypernet": _hypernet_case,
        "block.attention": _attention_case,
        "block.agent-single": _agent_case("single"),
        "block.agent-dueling": _agent_case("dueling"),
        "mixer.vdn": _mixer_case("vdn"),
        "mixer.qmix-plain": _mixer_case("qmix-plain"),
        "mixer.qmix-state": _mixer_case("qmix-state"),
        "mixer.qplex-history": _mixer_case("qplex:history"),
        "mixer.qplex-state": _mixer_case("qplex:state"),
        "mixer.qplex-history-state": _mixer_case("qplex:history-state"),
        "mixer.duelmix": _mixer_case("duelmix"),
    }
    worst = {name: _grad_sweep_block(name, build) for name, build in cases.items()}
    elapsed = time.time() - start
    assert elapsed < 120.0, f"gradient sweep took {elapsed:.0f}s (budget 120s)"
    _report("criterion-1 gradient-correctness",
            f"{len(cases)} blocks/mixers x {N_DRAWS} draws, "
            f"max rel err {max(worst.values()):.2e}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# Criterion 2: the greedy-consistency suite.
# ---------------------------------------------------------------------------

def test_criterion_2_igm_suite():
    start = time.time()
    rng = np.random.default_rng(2)
    total = 0
    for family, factory in mixer_factories().items():
        mode = "dueling" if family == "duelmix" else "single"
        for harness in (check_igm, check_advantage_igm):
            result = harness(factory, 200, rng, mode=mode, hidden_dim=4,
                             central_dim=4)
            assert result.passed, (family, harness.__name__,
                                   result.violations[:2])
            total += result.samples
    elapsed = time.time() - start
    assert elapsed < 300.0, f"IGM suite took {elapsed:.0f}s (budget 300s)"
    _report("criterion-2 igm-suite",
            f"7 mixers x 2 harnesses x 200 draws ({total} samples), "
            f"0 violations, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# Criterion 3: argmax invariance to the centralized vector.
# ---------------------------------------------------------------------------

def test_criterion_3_state_bias_invariance():
    rng = np.random.default_rng(3)
    factories = mixer_factories()
    for family in STATEFUL_FAMILIES:
        mode = "dueling" if family == "duelmix" else "single"
        for _ in range(50):
            counts = (int(rng.choice((2, 3))),) * int(rng.choice((2, 3)))
            mixer = factories[family](rng, counts)
            snapshot = random_snapshot(counts, rng, mode=mode, hidden_dim=4)
            passed, witness = check_state_invariance(mixer, snapshot, 50, rng, 4)
            assert passed, (family, witness)
    _report("criterion-3 state-bias-invariance",
            f"{len(STATEFUL_FAMILIES)} stateful mixers x 50 draws x 50 "
            "centralized vectors, identical argmax sets")


# ---------------------------------------------------------------------------
# Criterion 4: monotonicity of the stateful mixing head.
# ---------------------------------------------------------------------------

def test_criterion_4_monotonicity():
    from factormix.suite import _qmix_sensitivities

    rng = np.random.default_rng(4)
    factory = mixer_factories()["qmix-state"]
    samples = 0
    worst = 0.0
    while samples < 1000:
        mixer = factory(rng, (3, 3))
        for _ in range(10):
            sens = _qmix_sensitivities(mixer, 2, rng, 1e-4)
            worst = min(worst, float(sens.min())) if samples else float(sens.min())
            assert (sens >= -1e-8).all(), sens
            samples += 1
            if samples >= 1000:
                break
    _report("criterion-4 monotonicity",
            f"1000 finite-difference probes, min sensitivity {worst:.2e} >= -1e-8")


# ---------------------------------------------------------------------------
# Criterion 5: expressiveness.
# ---------------------------------------------------------------------------

def test_criterion_5_expressiveness():
    start = time.time()
    table_rng = np.random.default_rng(50)
    fit_seed = 500
    worst_mse = 0.0
    for i in range(20):
        target = random_igm_table((2, 3), table_rng)
        rng = np.random.default_rng(fit_seed + i)
        result = fit_expressiveness(
            lambda r, c: DuelMixMixer(2, c, 1, 4, r, embed_dim=8, n_heads=4),
            target, rng=rng, mode="dueling", budget=20000, lr=1e-2,
        )
        assert result.mse <= 1e-3, f"table {i}: mse {result.mse}"
        assert result.steps <= 20000
        worst_mse = max(worst_mse, result.mse)

    target = non_monotonic_table()
    floor = monotone_fit_floor(target.payoffs)
    duel = fit_expressiveness(
        lambda r, c: DuelMixMixer(2, c, 1, 4, r, embed_dim=8, n_heads=4),
        target, rng=np.random.default_rng(99), mode="dueling",
        budget=20000, lr=1e-2,
    )
    qmix = fit_expressiveness(
        lambda r, c: QmixMixer(2, 1, r, embed_dim=8),
        target, rng=np.random.default_rng(99), budget=10000, lr=1e-2,
        stop_mse=0.0,
    )
    # The monotonic head converges to (not above) its representation floor,
    # so the separation is: floor-bound plus a >= 10x error ratio.
    assert qmix.mse >= floor - 1e-6, (qmix.mse, floor)
    assert qmix.mse >= 10.0 * duel.mse, (qmix.mse, duel.mse)
    elapsed = time.time() - start
    assert elapsed < 900.0, f"expressiveness took {elapsed:.0f}s (budget 900s)"
    _report("criterion-5 expressiveness",
            f"20 tables fitted (worst mse {worst_mse:.2e}); floor {floor:.3f}, "
            f"monotone fit {qmix.mse:.3f}, duplex fit {duel.mse:.2e}, "
            f"{elapsed:.0f}s")


# ---------------------------------------------------------------------------
# Criterion 6: mutation sensitivity (the harnesses are not vacuous).
# ---------------------------------------------------------------------------

def test_criterion_6_mutation_sensitivity():
    rng = np.random.default_rng(6)
    signed_weights = mixer_factories(monotonic=False)
    violations_w = 0
    for family in ("qmix-plain", "qmix-state"):
        violations_w += len(check_igm(signed_weights[family], 60, rng).violations)
    assert violations_w >= 1, "signed mixing weights went undetected"

    signed_lambda = mixer_factories(positive_lambda=False)
    violations_l = 0
    for family in ("qplex-state", "duelmix"):
        mode = "dueling" if family == "duelmix" else "single"
        violations_l += len(
            check_igm(signed_lambda[family], 60, rng, mode=mode).violations
        )
    assert violations_l >= 1, "signed attention coefficients went undetected"
    _report("criterion-6 mutation-sensitivity",
            f"signed-weight violations {violations_w}, "
            f"signed-coefficient violations {violations_l}")


# ---------------------------------------------------------------------------
# Criterion 7: scaled Box Pushing, expressive head vs additive baseline.
# ---------------------------------------------------------------------------

BP8 = dict(
    env="bp", bp_grid=8, bp_horizon=40, central_info="s",
    total_steps=200_000, eval_interval=2_000, eval_episodes=10,
    lr=5e-4, gamma=0.9, batch_size=32, buffer_size=2_000,
    target_update_freq=100, epsilon_decay_steps=50_000,
    train_start_episodes=200, agent_hidden=64, mixing_embed=32,
    attention_heads=4,
)


def test_criterion_7_scaled_box_pushing(tmp_path_factory):
    start = time.time()
    root = tmp_path_factory.mktemp("bp8")
    seeds = (0, 1, 2)
    configs = {
        name: ExperimentConfig(algorithm=name, seeds=seeds,
                               out_dir=str(root / name), **BP8)
        for name in ("duelmix", "vdn")
    }
    jobs = [(cfg, seed) for cfg in configs.values() for seed in seeds]
    with ProcessPoolExecutor(max_workers=2) as pool:
        outcomes = list(pool.map(_seed_worker, jobs))
    finals: dict[str, list[float]] = {"duelmix": [], "vdn": []}
    for (cfg, seed), (seed_out, record, err) in zip(jobs, outcomes):
        assert err is None, f"{cfg.algorithm} seed {seed} crashed:\n{err}"
        finals[cfg.algorithm].append(record.final_smoothed_return)
    for name, cfg in configs.items():
        write_summary(root / name / "summary.csv", [{
            "algorithm": name, "central_info": "s", "seeds": len(seeds),
            "mean_final_return": float(np.mean(finals[name])),
            "stderr_final_return": float(np.std(finals[name], ddof=1)
                                         / np.sqrt(len(seeds))),
        }])

    for seed, final in zip(seeds, finals["duelmix"]):
        assert final >= 10.0, f"duelmix seed {seed} final return {final}"
    duel_mean, vdn_mean = np.mean(finals["duelmix"]), np.mean(finals["vdn"])
    assert duel_mean >= vdn_mean, (finals["duelmix"], finals["vdn"])
    elapsed = time.time() - start
    _report("criterion-7 scaled-box-pushing",
            f"duelmix finals {[round(f, 1) for f in finals['duelmix']]} "
            f"(mean {duel_mean:.1f}) vs vdn mean {vdn_mean:.1f}, "
            f"{elapsed/60:.0f} min")


# ---------------------------------------------------------------------------
# Criterion 8: the centralized-information ablation runs to completion.
# ---------------------------------------------------------------------------

def test_criterion_8_ablation_plumbing(tmp_path_factory):
    root = tmp_path_factory.mktemp("ablation")
    config = ExperimentConfig(
        env="bp", bp_grid=8, bp_horizon=40, seeds=(0,),
        total_steps=4_000, eval_interval=2_000, eval_episodes=5,
        lr=5e-4, gamma=0.9, batch_size=16, buffer_size=500,
        target_update_freq=100, epsilon_decay_steps=3_000,
        train_start_episodes=20, agent_hidden=32, mixing_embed=16,
        attention_heads=2, out_dir=str(root),
    )
    rows = run_ablation(config)
    assert len(rows) == 9
    combos = [(row["algorithm"], row["central_info"]) for row in rows]
    assert combos == [(alg, kind) for alg in ("qmix", "qplex", "duelmix")
                      for kind in ("s", "r", "c")]
    assert all(np.isfinite(row["mean_final_return"]) for row in rows)

    # Determinism: rerunning one cell reproduces its CSV bitwise.
    cell = replace(config, algorithm="qplex", central_info="r",
                   out_dir=str(root / "rerun"))
    run_single_seed(cell, 0)
    original = (root / "qplex_r" / "seed0.csv").read_bytes()
    rerun = (root / "rerun" / "seed0.csv").read_bytes()
    assert original == rerun
    _report("criterion-8 ablation-plumbing",
            "9-row {s,r,c} x {qmix,qplex,duelmix} summary, deterministic rerun")


# ---------------------------------------------------------------------------
# Criterion 9: saliency (analytic toy + trained-checkpoint concentration).
# ---------------------------------------------------------------------------

def test_criterion_9_saliency(tmp_path_factory):
    weights = Tensor(np.array([[3.0], [1.0]]))
    toy = saliency_jacobian(lambda x: T.sum_(T.matmul(x, weights)),
                            np.array([0.4, 0.9]))
    np.testing.assert_array_equal(toy.values, [1.0, 1.0 / 3.0])

    root = tmp_path_factory.mktemp("saliency")
    full_obs = dict(BP8, bp_full_obs=True, total_steps=60_000,
                    epsilon_decay_steps=20_000)
    jobs = []
    for name in ("duelmix", "qplex"):
        for seed in (0, 1):
            cfg = ExperimentConfig(algorithm=name, seeds=(seed,),
                                   out_dir=str(root / f"{name}{seed}"),
                                   **full_obs)
            jobs.append((cfg, seed))
    with ProcessPoolExecutor(max_workers=2) as pool:
        outcomes = list(pool.map(_seed_worker, jobs))
    for (cfg, seed), (_, record, err) in zip(jobs, outcomes):
        assert err is None, f"{cfg.algorithm} seed {seed} crashed:\n{err}"

    ginis = {"duelmix": [], "qplex": []}
    for cfg, seed in jobs:
        ckpt = root / f"{cfg.algorithm}{seed}" / f"ckpt_seed{seed}.npz"
        for step in range(4):
            out_csv = root / f"{cfg.algorithm}{seed}_step{step}.csv"
            info = export_saliency(ckpt, out_csv, step_index=step)
            ginis[cfg.algorithm].append(gini_concentration(info["values"]))
    duel_gini = float(np.mean(ginis["duelmix"]))
    qplex_gini = float(np.mean(ginis["qplex"]))
    assert duel_gini > qplex_gini, ginis
    _report("criterion-9 saliency",
            f"analytic toy exact; concentration duelmix {duel_gini:.3f} > "
            f"qplex {qplex_gini:.3f} (2 seeds x 4 steps)")
