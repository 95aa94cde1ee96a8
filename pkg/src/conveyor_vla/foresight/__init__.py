"""Visual foresight: frozen tokenizers and the compression head."""

from conveyor_vla.foresight.head import ForesightHead, gen_loss
from conveyor_vla.foresight.tokenizer import (
    AnalyticTokenizer,
    LatentTokenizer,
    LearnedTokenizer,
    build_tokenizer,
    dct_basis,
    patchify,
    unpatchify,
)

__all__ = [
    "AnalyticTokenizer",
    "ForesightHead",
    "LatentTokenizer",
    "LearnedTokenizer",
    "build_tokenizer",
    "dct_basis",
    "gen_loss",
    "patchify",
    "unpatchify",
]
