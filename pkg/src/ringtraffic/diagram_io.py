"""CSV and portable-graymap export of time-space diagrams.

Images put time on the horizontal axis and ring position on the vertical
axis (site 0 at the top); occupied sites are black (0), empty sites white
(255).
"""

from __future__ import annotations

import csv

import numpy as np

from .metropolis import TimeSpaceDiagram

GAP_GRAY = 128


def write_csv(diagram: TimeSpaceDiagram, path) -> None:
    """One line per time step, N comma-separated 0/1 values, no header."""
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(diagram.states.tolist())


def read_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[int(v) for v in row] for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path}: no rows")
    arr = np.array(rows)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{path}: site states must be 0 or 1")
    return arr.astype(np.uint8)


def diagram_pixels(states, scale: int = 1) -> np.ndarray:
    """(N, T) uint8 pixel array, each cell magnified to ``scale`` x ``scale``."""
    states = np.asarray(states)
    pixels = np.where(states.T > 0, 0, 255).astype(np.uint8)
    if scale > 1:
        pixels = np.kron(pixels, np.ones((scale, scale), dtype=np.uint8))
    return pixels


def side_by_side(left, right, gap: int = 2, scale: int = 1) -> np.ndarray:
    """Two diagrams next to each other separated by a gray band (truth left, forecast right)."""
    a = diagram_pixels(left, scale)
    b = diagram_pixels(right, scale)
    if a.shape[0] != b.shape[0]:
        raise ValueError("diagrams must have the same number of sites")
    band = np.full((a.shape[0], gap * scale), GAP_GRAY, dtype=np.uint8)
    return np.hstack([a, band, b])


def write_pgm(pixels, path, binary: bool = True) -> None:
    """P5 (binary) or P2 (ASCII) graymap with maxval 255."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    height, width = pixels.shape
    if binary:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
            fh.write(pixels.tobytes())
    else:
        with open(path, "w") as fh:
            fh.write(f"P2\n{width} {height}\n255\n")
            for row in pixels:
                fh.write(" ".join(str(v) for v in row) + "\n")


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit graymaps are not supported")
    if magic == "P5":
        raw = data[pos + 1 : pos + 1 + width * height]
        if len(raw) != width * height:
            raise ValueError(f"{path}: truncated pixel data")
        return np.frombuffer(raw, dtype=np.uint8).reshape(height, width).copy()
    if magic == "P2":
        values = data[pos:].split()
        return np.array([int(v) for v in values], dtype=np.uint8).reshape(height, width)
    raise ValueError(f"{path}: not a P2/P5 graymap")


def write_diagram(diagram: TimeSpaceDiagram, path, scale: int = 1) -> None:
    """Pick the format from the suffix: ``.csv`` or a graymap (``.pgm``)."""
    if str(path).lower().endswith(".csv"):
        write_csv(diagram, path)
    else:
        write_pgm(diagram_pixels(diagram.states, scale), path)
