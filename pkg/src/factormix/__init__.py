"""factormix: a desk-scale laboratory for cooperative value factorization.

Per-agent recurrent utilities are combined into a joint action value by one
of four mixing heads (additive, monotonic, duplex dueling, and a duplex head
over agent-learned dueling streams), trained with episodic TD learning on
matrix games and a box-pushing grid world, and checked against brute-force
enumeration oracles for greedy-selection consistency.
"""

from .agents import AgentUtilities, RecurrentAgentNet, select_action, select_actions
from .envs import (
    BoxPushing,
    BoxPushingConfig,
    DecPomdpDescriptor,
    MatrixGame,
    StepResult,
    enumerate_joint_actions,
    make_env,
)
from .mixers import (
    CentralizedInfoSource,
    DuelMixMixer,
    MixerOutput,
    QmixMixer,
    QplexMixer,
    TeamOutputs,
    TransformNet,
    VdnMixer,
    joint_history_encoding,
    make_mixer,
)
from .tensor import Tensor, finite_diff_check, forward_primitive, no_grad
from .training import Adam, EpisodeBatch, Hyperparameters, Learner, ReplayBuffer, epsilon_at

__version__ = "0.1.0"
