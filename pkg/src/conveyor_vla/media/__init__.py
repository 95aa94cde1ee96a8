"""Image output."""

from conveyor_vla.media.pgm import read_pgm, write_pgm, write_triplet

__all__ = ["read_pgm", "write_pgm", "write_triplet"]
