"""Conveyor world state."""

from pydantic import BaseModel, Field


class WorldObject(BaseModel):
    """One item on (or off) the belt."""

    class_id: int = Field(..., ge=0, description="Object class index")
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    radius: float = Field(..., gt=0)
    target_bin: int = Field(..., ge=0, description="Bin this object belongs in")
    held: bool = False
    lost: bool = False
    placed_bin: int | None = Field(default=None, description="Bin it was released into")


class WorldState(BaseModel):
    """Full Markov state of one environment instance."""

    gripper: tuple[float, float]
    grip: float = Field(default=-1.0, description="-1 open, 1 closed")
    objects: list[WorldObject] = Field(default_factory=list)
    belt_y: tuple[float, float] = (0.35, 0.65)
    belt_speed: float = 0.0
    target_index: int = Field(default=0, ge=0, description="Object named by the instruction")
    step: int = 0

    @property
    def target(self) -> WorldObject:
        return self.objects[self.target_index]

    def held_index(self) -> int | None:
        for i, obj in enumerate(self.objects):
            if obj.held:
                return i
        return None
