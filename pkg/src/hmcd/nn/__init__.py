from .tensor import ColIndex, Tensor, backward, grad, no_grad
from . import ops
from .optim import AdamState, adam_init, adam_update
from .gradcheck import GradCheckReport, gradient_check
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "ColIndex",
    "Tensor",
    "backward",
    "grad",
    "no_grad",
    "ops",
    "AdamState",
    "adam_init",
    "adam_update",
    "GradCheckReport",
    "gradient_check",
    "load_checkpoint",
    "save_checkpoint",
]
