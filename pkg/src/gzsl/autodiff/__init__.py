from .checkpoint import CheckpointError, load_arrays, load_into, round_to_f32, save_arrays, state_dict
from .gradcheck import GradcheckError, gradcheck
from .layers import MLP, DenseLayer, forward_dense
from .optim import Adam, AdamState, adam_step, clip_weights
from .rng import Rng
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    backward,
    concat,
    cross_entropy,
    exp,
    leaky_relu,
    log,
    log_softmax,
    no_grad,
    relu,
    sigmoid,
    softmax,
    tabs,
    zero_grads,
)

__all__ = [
    "Adam", "AdamState", "CheckpointError", "DenseLayer", "GradcheckError", "MLP", "NonFiniteError",
    "Rng", "ShapeError", "Tensor", "adam_step", "backward", "clip_weights", "concat", "cross_entropy",
    "exp", "forward_dense", "gradcheck", "leaky_relu", "load_arrays", "load_into", "log", "log_softmax", "no_grad",
    "relu", "round_to_f32", "save_arrays", "sigmoid", "softmax", "state_dict", "tabs", "zero_grads",
]
