"""Two-class probability vector shared by fusion, refinement and evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

SIMPLEX_TOL = 1e-9


class Label(str, Enum):
    NMF = "NMF"
    AMF = "AMF"

    @classmethod
    def parse(cls, token: str) -> "Label":
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise ValueError(f"unknown label {token!r}; expected NMF or AMF") from None


@dataclass(frozen=True)
class ClassScore:
    """Probabilities of normal (NMF) and atypical (AMF) mitotic figure."""

    p_nmf: float
    p_amf: float

    def __post_init__(self):
        for name in ("p_nmf", "p_amf"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if abs(self.p_nmf + self.p_amf - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"scores ({self.p_nmf}, {self.p_amf}) do not sum to 1")

    @classmethod
    def from_nmf(cls, p_nmf: float) -> "ClassScore":
        return cls(p_nmf, 1.0 - p_nmf)
