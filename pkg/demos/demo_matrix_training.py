"""End-to-end TD training on a one-step matrix game.

Trains the additive head until the joint greedy value matches the payoff
table's optimum, then does the same with the dueling duplex head.
"""

import numpy as np

from factormix.envs import MatrixGame
from factormix.training import Hyperparameters, Learner

payoffs = np.array([[1.0, 0.4], [0.5, -0.1]])  # additively representable
env = MatrixGame(payoffs)
print("payoffs:\n", payoffs)

for algorithm in ("vdn", "duelmix"):
    hyper = Hyperparameters(
        lr=2e-2, gamma=0.99, batch_size=16, buffer_size=256,
        target_update_freq=20, train_start_episodes=16,
        epsilon_start=1.0, epsilon_final=1.0, epsilon_decay_steps=1,
        agent_hidden_dim=16, mixing_embed_dim=8, attention_heads=2,
    )
    learner = Learner(env, algorithm, "s", np.random.default_rng(3), hyper)
    rng = np.random.default_rng(0)
    losses = []
    for episode in range(600):
        learner.collect(rng)
        result = learner.maybe_train(rng)
        if result is not None:
            losses.append(result.loss)

    inputs = learner.agent.build_inputs(np.zeros((2, 1)), np.full(2, -1),
                                        np.arange(2))
    utils = learner.agent(inputs, learner.agent.initial_hidden(2))
    ranked = utils.q_values if learner.mode == "single" else utils.adv_values
    greedy = tuple(int(a) for a in ranked.data.argmax(axis=-1))
    print(f"\n{algorithm}: loss {losses[0]:.3f} -> {losses[-1]:.5f} "
          f"over {len(losses)} updates")
    print(f"  greedy joint action {greedy}, payoff there {payoffs[greedy]:+.1f} "
          f"(optimum {payoffs.max():+.1f})")
