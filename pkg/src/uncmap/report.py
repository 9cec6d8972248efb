from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LossReport:
    """Weighted loss aggregate with its named components.

    ``components`` holds unweighted term values, ``weights`` the matching
    lambdas; ``total`` is their weighted sum.  ``gradients`` maps
    ``"<term>/<input>"`` to arrays of unweighted term gradients.
    """

    name: str
    components: dict[str, float] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)
    gradients: dict[str, np.ndarray] = field(default_factory=dict)
    children: list["LossReport"] = field(default_factory=list)

    @property
    def total(self) -> float:
        own = sum(self.weights.get(k, 1.0) * v for k, v in self.components.items())
        return float(own + sum(c.total for c in self.children))

    def flat(self) -> dict[str, float]:
        out = {}
        for c in self.children:
            out.update(c.flat())
        out.update(self.components)
        return out

    def to_dict(self, include_gradients: bool = False) -> dict:
        d = {
            "name": self.name,
            "total": self.total,
            "components": {k: float(v) for k, v in self.components.items()},
            "weights": {k: float(v) for k, v in self.weights.items()},
        }
        if include_gradients:
            d["gradients"] = {k: np.asarray(v).tolist() for k, v in self.gradients.items()}
        if self.children:
            d["children"] = [c.to_dict(include_gradients) for c in self.children]
        return d


def check_weights(**lams: float) -> dict[str, float]:
    out = {}
    for k, v in lams.items():
        v = float(v)
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"loss weight {k}={v} must be finite and >= 0")
        out[k] = v
    return out
