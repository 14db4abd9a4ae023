"""Parameter containers shared by the network components."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, uniform_init


class Module:
    """Owns a flat, ordered table of named parameters under a dotted prefix."""

    def __init__(self, prefix: str, rng: np.random.Generator | None = None):
        self.prefix = prefix
        self.rng = rng
        self._params: dict[str, Parameter] = {}
        self._children: list[Module] = []

    def add_param(self, name: str, data) -> Parameter:
        p = Parameter(f"{self.prefix}.{name}", data)
        self._params[name] = p
        return p

    def uniform(self, name: str, shape, fan_in: int, gain: float = 1.0) -> Parameter:
        return self.add_param(name, uniform_init(self.rng, shape, fan_in, gain))

    def zeros(self, name: str, shape) -> Parameter:
        return self.add_param(name, np.zeros(shape))

    def add_child(self, child: "Module") -> "Module":
        self._children.append(child)
        return child

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def parameters(self) -> list[Parameter]:
        out = list(self._params.values())
        for child in self._children:
            out.extend(child.parameters())
        return out

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}
