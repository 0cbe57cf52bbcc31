"""Stain normalization, nucleus geometry and rule-based refinement of
mitotic-figure classification scores."""

from .ensemble import decide, fuse
from .errors import *  # noqa: F401,F403
from .rbr import RbrConfig, RuleId, RuleOutcome, apply_modifier, evaluate_rules, refine
from .scores import ClassScore, Label

__version__ = "0.1.0"
