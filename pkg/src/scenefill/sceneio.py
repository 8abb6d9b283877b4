"""ASCII scene file reader/writer.

Layout (PLY-compatible vertex list with an extra label channel)::

    ply
    format ascii 1.0
    element vertex N
    property float x
    property float y
    property float z
    property uchar red
    property uchar green
    property uchar blue
    property uchar label
    end_header
    <x y z red green blue label>   # one vertex per line, N lines

Coordinates are written with 17 significant digits so binary64 positions
round-trip exactly. Colors are quantized to 8 bits in the file; in-memory
colors that are multiples of 1/255 round-trip unchanged. Labels are codes
0..11. ``comment`` lines after the format line are permitted and ignored.
"""

from __future__ import annotations

import numpy as np

from .core import NUM_CLASSES, LabeledPointCloud

_PROPS = (
    "property float x", "property float y", "property float z",
    "property uchar red", "property uchar green", "property uchar blue",
    "property uchar label",
)


class SceneParseError(ValueError):
    """Malformed scene file; carries the byte offset of the bad record."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def save_scene(cloud, path):
    """Write a cloud to ``path`` in the format documented in this module."""
    rgb = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        for p in _PROPS:
            fh.write(p + "\n")
        fh.write("end_header\n")
        for (x, y, z), (r, g, b), lab in zip(cloud.positions, rgb, cloud.labels):
            fh.write("%.17g %.17g %.17g %d %d %d %d\n" % (x, y, z, r, g, b, lab))


def load_scene(path):
    """Parse a scene file; raises SceneParseError naming the byte offset."""
    with open(path, "rb") as fh:
        raw = fh.read()
    text = raw.decode("ascii", errors="replace")
    lines = text.split("\n")
    offsets = np.zeros(len(lines) + 1, dtype=np.int64)
    for i, ln in enumerate(lines):
        offsets[i + 1] = offsets[i] + len(ln.encode("ascii", errors="replace")) + 1

    pos = 0

    def take(expect=None, what=""):
        nonlocal pos
        while pos < len(lines) and lines[pos].strip() == "" and expect is not None:
            pos += 1
        if pos >= len(lines):
            raise SceneParseError(f"truncated file, expected {what or expect}",
                                  int(offsets[min(pos, len(lines) - 1)]))
        ln = lines[pos].strip()
        off = int(offsets[pos])
        pos += 1
        if expect is not None and ln != expect:
            raise SceneParseError(f"expected {expect!r}, got {ln!r}", off)
        return ln, off

    take("ply", "magic line")
    take("format ascii 1.0", "format line")
    # optional comment lines, then the vertex count
    while pos < len(lines) and lines[pos].strip().startswith("comment"):
        pos += 1
    ln, off = take(what="element vertex line")
    parts = ln.split()
    if len(parts) != 3 or parts[0] != "element" or parts[1] != "vertex":
        raise SceneParseError(f"expected 'element vertex N', got {ln!r}", off)
    try:
        count = int(parts[2])
    except ValueError:
        raise SceneParseError(f"bad vertex count {parts[2]!r}", off) from None
    if count < 0:
        raise SceneParseError("negative vertex count", off)
    for p in _PROPS:
        take(p, "property declaration")
    take("end_header", "end_header")

    xyz = np.zeros((count, 3))
    rgb = np.zeros((count, 3))
    lab = np.zeros(count, dtype=np.uint8)
    for i in range(count):
        ln, off = take(what=f"vertex record {i}")
        parts = ln.split()
        if len(parts) != 7:
            raise SceneParseError(f"vertex record needs 7 fields, got {len(parts)}", off)
        try:
            x, y, z = (float(parts[k]) for k in range(3))
            r, g, b, code = (int(parts[k]) for k in range(3, 7))
        except ValueError:
            raise SceneParseError("unparseable vertex record", off) from None
        if not all(np.isfinite((x, y, z))):
            raise SceneParseError("non-finite coordinate", off)
        if not all(0 <= c <= 255 for c in (r, g, b)):
            raise SceneParseError("color channel outside 0..255", off)
        if not 0 <= code <= NUM_CLASSES:
            raise SceneParseError(f"unknown label code {code}", off)
        xyz[i] = (x, y, z)
        rgb[i] = (r / 255.0, g / 255.0, b / 255.0)
        lab[i] = code
    return LabeledPointCloud(xyz, rgb, lab)
