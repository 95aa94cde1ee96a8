"""Templated instructions over a closed vocabulary."""

from functools import lru_cache

import numpy as np

from conveyor_vla.errors import UnknownTokenError
from conveyor_vla.models.world import WorldState
from conveyor_vla.sim.world import WorldSpec, default_spec

TEMPLATE = "pick the {cls} and place in {bin}"
PAD = "<pad>"


@lru_cache
def vocabulary(spec: WorldSpec | None = None) -> tuple[str, ...]:
    spec = spec or default_spec()
    words = [PAD, *TEMPLATE.replace("{cls}", "").replace("{bin}", "").split()]
    words += [c.name for c in spec.classes] + [b.name for b in spec.bins]
    return tuple(dict.fromkeys(words))


def instruction_text(state: WorldState, spec: WorldSpec | None = None) -> str:
    spec = spec or default_spec()
    target = state.target
    cls = spec.classes[target.class_id].name
    return TEMPLATE.format(cls=cls, bin=spec.bins[target.target_bin].name)


def encode_instruction(text: str, spec: WorldSpec | None = None) -> np.ndarray:
    index = {w: i for i, w in enumerate(vocabulary(spec))}
    ids = []
    for word in text.lower().split():
        if word not in index:
            raise UnknownTokenError(f"word {word!r} is not in the instruction vocabulary")
        ids.append(index[word])
    return np.array(ids, dtype=np.int64)


def decode_instruction(ids: np.ndarray, spec: WorldSpec | None = None) -> str:
    words = vocabulary(spec)
    out = []
    for i in np.asarray(ids, dtype=np.int64).tolist():
        if not 0 <= i < len(words):
            raise UnknownTokenError(f"token id {i} outside vocabulary of {len(words)}")
        out.append(words[i])
    return " ".join(out)
