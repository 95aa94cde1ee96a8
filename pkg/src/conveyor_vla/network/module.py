"""Parameter containers."""

from collections.abc import Mapping

import numpy as np

from conveyor_vla.errors import ShapeMismatchError
from conveyor_vla.numerics import Parameter


class Module:
    """Collects `Parameter` attributes, nested modules, and lists/dicts of modules
    into dotted names (`experts.act.layers.0.wq.weight`)."""

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        found: dict[str, Parameter] = {}
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Parameter):
                found[f"{prefix}{name}"] = value
            elif isinstance(value, Module):
                found.update(value.named_parameters(f"{prefix}{name}."))
            elif isinstance(value, list | tuple):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.update(item.named_parameters(f"{prefix}{name}.{i}."))
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        found.update(item.named_parameters(f"{prefix}{name}.{key}."))
        return found

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters().items()}

    def load_state(self, arrays: Mapping[str, np.ndarray], *, strict: bool = True) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        unexpected = set(arrays) - set(params)
        if strict and (missing or unexpected):
            raise ShapeMismatchError(
                f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(unexpected)[:5]}"
            )
        for name, p in params.items():
            if name in arrays:
                p.assign(arrays[name])
