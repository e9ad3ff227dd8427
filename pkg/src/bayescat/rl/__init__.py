from .network import (
    AdamState,
    NetworkConfig,
    NetworkError,
    QNetwork,
    StateSnapshot,
    act,
    backward_batch,
    clip_gradients,
    forward,
    forward_batch,
    init_network,
    layer_shapes,
    load_checkpoint_dict,
    save_checkpoint_dict,
    td_loss_and_grads,
)
from .replay import ReplayBuffer, Transition
from .train import (
    EpsilonSchedule,
    LogRow,
    TrainConfig,
    TrainingError,
    TrainResult,
    build_state,
    double_q_target,
    load_checkpoint,
    reward,
    save_checkpoint,
    train,
    write_training_log,
)

__all__ = [
    "AdamState", "NetworkConfig", "NetworkError", "QNetwork", "StateSnapshot",
    "act", "backward_batch", "clip_gradients", "forward", "forward_batch",
    "init_network", "layer_shapes", "load_checkpoint_dict", "save_checkpoint_dict",
    "td_loss_and_grads", "ReplayBuffer", "Transition", "EpsilonSchedule", "LogRow",
    "TrainConfig", "TrainingError", "TrainResult", "build_state", "double_q_target",
    "load_checkpoint", "reward", "save_checkpoint", "train", "write_training_log",
]
