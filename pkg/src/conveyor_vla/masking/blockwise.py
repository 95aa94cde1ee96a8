"""Blockwise cumulative segment mask.

Each token carries a block id (prefix 0, gen 1, state 2, action 3); a query
may attend a key iff key_block <= query_block. That single comparison gives
bidirectional attention inside a block and forward-only flow between blocks.
"""

from functools import lru_cache

import numpy as np

from conveyor_vla.models.layout import SEGMENT_ORDER, Segment, SegmentLayout

_BLOCK_ID = {seg: i for i, seg in enumerate(SEGMENT_ORDER)}


def block_ids(layout: SegmentLayout) -> np.ndarray:
    return np.repeat(
        np.arange(len(SEGMENT_ORDER)),
        [layout.count(seg) for seg in SEGMENT_ORDER],
    )


@lru_cache(maxsize=256)
def build_blockwise_mask(layout: SegmentLayout) -> np.ndarray:
    """Square boolean matrix, True where row token may attend column token."""
    ids = block_ids(layout)
    mask = ids[None, :] <= ids[:, None]
    mask.flags.writeable = False
    return mask


def _allowed(query: Segment, key: Segment) -> bool:
    """The four information-flow rules, spelled out per segment pair."""
    if query is Segment.PREFIX:
        return key is Segment.PREFIX
    if query is Segment.GEN:
        return key in (Segment.PREFIX, Segment.GEN)
    if query is Segment.STATE:
        return key in (Segment.PREFIX, Segment.GEN, Segment.STATE)
    return True


def reference_mask(layout: SegmentLayout) -> np.ndarray:
    """Rule-by-rule enumeration of the mask, independent of block ids."""
    n = layout.total
    segs = [layout.segment_of(i) for i in range(n)]
    return np.array([[_allowed(segs[i], segs[j]) for j in range(n)] for i in range(n)], dtype=bool)


def check_no_forward_leak(mask: np.ndarray, layout: SegmentLayout) -> bool:
    """True iff no earlier block attends a later one."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (layout.total, layout.total):
        return False
    ids = block_ids(layout)
    forward = ids[None, :] > ids[:, None]
    return not bool(np.any(mask & forward))


def format_mask(mask: np.ndarray) -> str:
    """Rows of 0/1 characters."""
    rows = np.asarray(mask, dtype=bool)
    return "\n".join("".join("1" if v else "0" for v in row) for row in rows)
