"""Desk-scale transformer inference lab for structured layer and sublayer skipping."""

from .model import LayerSkipMode, Model, ModelConfig, model_forward
from .plan import SkipPlan, SkipSpec, SkipTarget

__all__ = ["LayerSkipMode", "Model", "ModelConfig", "SkipPlan", "SkipSpec", "SkipTarget", "model_forward"]
