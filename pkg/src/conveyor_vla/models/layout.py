"""Segment layout of the concatenated token sequence."""

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field

from conveyor_vla.errors import LayoutError


class Expert(str, Enum):
    """Parameter set that processes a token."""

    UND = "und"
    GEN = "gen"
    ACT = "act"


class Segment(str, Enum):
    """Block of the sequence, in attention order."""

    PREFIX = "prefix"
    GEN = "gen"
    STATE = "state"
    ACTION = "action"


SEGMENT_ORDER = (Segment.PREFIX, Segment.GEN, Segment.STATE, Segment.ACTION)


class SegmentLayout(BaseModel):
    """Token counts for prefix / generation / state / action blocks."""

    model_config = ConfigDict(frozen=True)

    n_prefix: int = Field(..., ge=1, description="Vision + language prefix tokens")
    n_gen: int = Field(default=0, ge=0, description="Generation-block tokens (0 without foresight)")
    n_state: int = Field(default=1, ge=1, description="State tokens")
    n_action: int = Field(..., ge=1, description="Action tokens, one per chunk position")

    @property
    def total(self) -> int:
        return self.n_prefix + self.n_gen + self.n_state + self.n_action

    def count(self, segment: Segment) -> int:
        return {
            Segment.PREFIX: self.n_prefix,
            Segment.GEN: self.n_gen,
            Segment.STATE: self.n_state,
            Segment.ACTION: self.n_action,
        }[segment]

    def bounds(self, segment: Segment) -> tuple[int, int]:
        """Half-open [start, end) of a segment."""
        start = 0
        for seg in SEGMENT_ORDER:
            end = start + self.count(seg)
            if seg is segment:
                return start, end
            start = end
        raise LayoutError(f"unknown segment {segment}")

    def segment_of(self, index: int) -> Segment:
        if not 0 <= index < self.total:
            raise LayoutError(f"token index {index} outside layout of {self.total} tokens")
        for seg in SEGMENT_ORDER:
            start, end = self.bounds(seg)
            if start <= index < end:
                return seg
        raise LayoutError(f"token index {index} not covered")  # unreachable
