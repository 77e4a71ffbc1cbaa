"""Multilevel hierarchical network for video question answering, on a numpy autodiff core."""

from .autograd import AdamState, ParamStore, Tensor, adam_step, no_grad
from .decoders import AnswerSpace
from .model import MHN, Batch, ModelConfig, build_params, param_breakdown

__all__ = ["AdamState", "AnswerSpace", "Batch", "MHN", "ModelConfig", "ParamStore", "Tensor",
           "adam_step", "build_params", "no_grad", "param_breakdown"]
