"""Grid file formats.

GRID2 is a lossless text format: a one-line header ``GRID2 <extent> <spacing>
<n>`` followed by n rows of n repr-exact floats (row-major, row 0 = highest y).

PGM export writes a binary 16-bit P5 image (big-endian samples, maxval 65535)
plus a JSON sidecar ``<path>.json`` carrying the geometry and the affine
value range needed to dequantize.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .grid import Grid, GridGeometry

__all__ = ["save_grid2", "load_grid2", "save_pgm16", "load_pgm16"]


def save_grid2(grid: Grid, path) -> None:
    lines = [f"GRID2 {grid.extent!r} {grid.spacing!r} {grid.geometry.size}"]
    for row in grid.values:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_grid2(path) -> Grid:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "GRID2":
        raise FormatError(f"{path}: bad header {lines[0]!r}")
    try:
        extent, spacing, n = float(head[1]), float(head[2]), int(head[3])
    except ValueError as e:
        raise FormatError(f"{path}: bad header values: {e}") from None
    geom = GridGeometry(extent, spacing)
    if geom.size != n:
        raise FormatError(
            f"{path}: header claims {n} samples per side but extent/spacing give {geom.size}"
        )
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n:
        raise FormatError(f"{path}: expected {n} data rows, found {len(rows)}")
    try:
        values = np.array([[float(v) for v in row.split()] for row in rows])
    except ValueError as e:
        raise FormatError(f"{path}: bad value: {e}") from None
    if values.shape != (n, n):
        raise FormatError(f"{path}: ragged rows, shape {values.shape}")
    return Grid(geom, values)


def save_pgm16(grid: Grid, path, extra: dict = None) -> None:
    """Quantize linearly onto [0, 65535]; a constant grid maps to all zeros.

    ``extra`` entries are merged into the sidecar (provenance like seeds).
    """
    path = Path(path)
    vmin = float(grid.values.min())
    vmax = float(grid.values.max())
    if vmax > vmin:
        scaled = (grid.values - vmin) / (vmax - vmin) * 65535.0
        raw = np.rint(scaled).astype(">u2")
    else:
        raw = np.zeros(grid.values.shape, dtype=">u2")
    n = grid.geometry.size
    header = f"P5\n{n} {n}\n65535\n".encode("ascii")
    path.write_bytes(header + raw.tobytes())
    sidecar = {
        "extent": grid.extent,
        "spacing": grid.spacing,
        "value_min": vmin,
        "value_max": vmax,
    }
    if extra:
        sidecar.update(extra)
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def _parse_pgm_header(data: bytes, path) -> tuple:
    """Return (width, height, maxval, offset) for a binary PGM, skipping
    whitespace/comments per the netpbm grammar."""
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            c = data[pos : pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        return data[start:pos]

    magic = token()
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as e:
        raise FormatError(f"{path}: bad PGM header: {e}") from None
    pos += 1  # single whitespace byte after maxval
    return w, h, maxval, pos


def load_pgm16(path) -> Grid:
    path = Path(path)
    data = path.read_bytes()
    w, h, maxval, offset = _parse_pgm_header(data, path)
    if maxval != 65535:
        raise FormatError(f"{path}: expected 16-bit PGM (maxval 65535), got {maxval}")
    if w != h:
        raise FormatError(f"{path}: grid images must be square, got {w}x{h}")
    if len(data) - offset < 2 * w * h:
        raise FormatError(f"{path}: truncated pixel data")
    raw = np.frombuffer(data, dtype=">u2", offset=offset, count=w * h)
    side = Path(str(path) + ".json")
    try:
        meta = json.loads(side.read_text())
        extent = float(meta["extent"])
        spacing = float(meta["spacing"])
        vmin = float(meta["value_min"])
        vmax = float(meta["value_max"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{side}: bad or missing sidecar: {e}") from None
    geom = GridGeometry(extent, spacing)
    if geom.size != w:
        raise FormatError(
            f"{path}: sidecar geometry gives {geom.size} samples per side, image has {w}"
        )
    values = vmin + raw.reshape(h, w).astype(np.float64) / 65535.0 * (vmax - vmin)
    return Grid(geom, values)
