"""Attention masking for the unified token sequence."""

from conveyor_vla.masking.blockwise import (
    block_ids,
    build_blockwise_mask,
    check_no_forward_leak,
    format_mask,
    reference_mask,
)

__all__ = [
    "block_ids",
    "build_blockwise_mask",
    "check_no_forward_leak",
    "format_mask",
    "reference_mask",
]
