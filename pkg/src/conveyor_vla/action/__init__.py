"""Flow-matching action head."""

from conveyor_vla.action.flow import (
    FlowSample,
    action_loss,
    euler_sample,
    make_flow_sample,
    sample_tau,
)

__all__ = ["FlowSample", "action_loss", "euler_sample", "make_flow_sample", "sample_tau"]
