"""Built-in test problems: smooth unit-square case, cross-shaped and L-shaped domains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .darcy import ProblemData
from .mesh import DOMAINS, DomainSpec


def smooth_p(x, y):
    return (1 - x) * y * (1 - y) * np.cos(x)


def smooth_grad(x, y):
    px = -y * (1 - y) * (np.cos(x) + (1 - x) * np.sin(x))
    py = (1 - x) * (1 - 2 * y) * np.cos(x)
    return px, py


def smooth_f(x, y):
    # -laplace p with K = 1
    return (1 - x) * np.cos(x) * (2 + y * (1 - y)) - 2 * y * (1 - y) * np.sin(x)


@dataclass(frozen=True)
class Preset:
    """Everything needed to run one of the reference problems end to end."""

    name: str
    domain: str
    level: int  # base level; fine meshes add 3
    dt: float
    steps: int = 100
    porosity: float = 0.2
    c_inflow: float = 1.0
    c_initial: float = 0.0

    def spec(self) -> DomainSpec:
        return DOMAINS[self.domain]()

    def data(self) -> ProblemData:
        if self.name == "example1":
            return ProblemData(f=smooth_f, p_D=smooth_p, exact_p=smooth_p, exact_grad=smooth_grad)
        spec = self.spec()
        return ProblemData(p_D=spec.dirichlet_value)


PRESETS = {
    "example1": Preset("example1", "unit_square", 4, 0.05),
    "example2": Preset("example2", "ten_shape", 3, 0.03),
    "example3": Preset("example3", "l_shape", 3, 0.01),
}


def preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
