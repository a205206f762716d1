from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

METHOD_LEARNING = {
    "bow": ("kmeans", "kmajority", "kmedoids"),
    "vlad": ("kmeans", "kmajority", "kmedoids"),
    "fv-bmm": ("em",),
    "fv-gmm": ("em",),
    "direct": (None,),
}


@dataclass(frozen=True)
class PipelineConfig:
    """One cell of the method x learning grid plus its knobs."""

    method: str
    learning: str | None
    k: int | None = None
    beta: float = 0.5
    pca_dim: int | None = None
    alpha: float | None = None
    seed: int = 0
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHOD_LEARNING:
            raise ValueError(f"unknown method {self.method!r}")
        if self.learning not in METHOD_LEARNING[self.method]:
            allowed = ", ".join(str(x) for x in METHOD_LEARNING[self.method])
            raise ValueError(
                f"method {self.method!r} cannot use learning {self.learning!r} (allowed: {allowed})"
            )
        if self.k is not None and self.k <= 0:
            raise ValueError("k must be positive")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if self.pca_dim is not None and self.pca_dim <= 0:
            raise ValueError("pca_dim must be positive")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    def check_paths(self):
        missing = [str(p) for p in self.paths.values() if not Path(p).exists()]
        if missing:
            raise FileNotFoundError(f"missing input files: {', '.join(missing)}")
