"""Portable graymap output for inspecting frames and foresight predictions."""

import logging
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


def to_gray8(image: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8, clipping out-of-range predictions."""
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(image: np.ndarray, path: Path) -> Path:
    """Binary (P5) graymap of a 2-D image."""
    pixels = to_gray8(image)
    if pixels.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {pixels.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = pixels.shape
    with path.open("wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    return path


def read_pgm(path: Path) -> np.ndarray:
    """uint8 pixels of a P5 file written by `write_pgm`."""
    data = Path(path).read_bytes()
    magic, dims, maxval, body = data.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit P5 graymap")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(body[: w * h], dtype=np.uint8).reshape(h, w)


def write_triplet(
    current: np.ndarray, predicted: np.ndarray, actual: np.ndarray, directory: Path, stem: str
) -> list[Path]:
    """current / predicted / actual images side by side as three files."""
    directory = Path(directory)
    paths = [
        write_pgm(current, directory / f"{stem}_current.pgm"),
        write_pgm(predicted, directory / f"{stem}_predicted.pgm"),
        write_pgm(actual, directory / f"{stem}_actual.pgm"),
    ]
    logger.debug("Wrote foresight triplet %s in %s", stem, directory)
    return paths
