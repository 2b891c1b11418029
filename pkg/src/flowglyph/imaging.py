"""Glyph rasterization: FeatureSet -> 28x28 grayscale image.

Each session becomes one column. Horizontal position encodes when the
session started relative to the group's time span; bar length above the
baseline encodes client->server application bytes on a log scale, below
the baseline server->client. A presentation-size PNG with endpoint
labels is available for human inspection; the CNN only ever sees the
28x28 raster.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from .features import FeatureSet

GLYPH_SIZE = 28
BASELINE_UP = 13
BASELINE_DOWN = 14
MAX_LEG = 13
B_CAP = 10_000_000

GLYPH_MAGIC = b"GLY1"
GLYPH_VERSION = 1

PNG_WIDTH = 640
PNG_HEIGHT = 320


class EmptyFeatureSet(ValueError):
    """Raised when asked to render a FeatureSet with no sessions."""


class GlyphFormatError(ValueError):
    """Raised when glyph bytes violate the file format."""


def half_up(x: float) -> int:
    """floor(x + 0.5): the one rounding rule used everywhere a real
    becomes a pixel coordinate or a count."""
    return math.floor(x + 0.5)


@dataclass
class Glyph:
    """28x28 grayscale raster plus an optional class label."""

    pixels: bytes
    label: str = ""
    width: int = GLYPH_SIZE
    height: int = GLYPH_SIZE

    def __post_init__(self) -> None:
        if self.width != GLYPH_SIZE or self.height != GLYPH_SIZE:
            raise GlyphFormatError(f"glyph must be {GLYPH_SIZE}x{GLYPH_SIZE}")
        if len(self.pixels) != self.width * self.height:
            raise GlyphFormatError(
                f"expected {self.width * self.height} pixels, got {len(self.pixels)}"
            )

    def pixel(self, x: int, y: int) -> int:
        return self.pixels[y * self.width + x]

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(
            self.height, self.width
        )


def _leg_height(n_bytes: int) -> int:
    ratio = math.log1p(n_bytes) / math.log1p(B_CAP)
    if ratio > 1.0:
        ratio = 1.0
    return half_up(ratio * MAX_LEG)


def _column_positions(first_ts_seq: list[float]) -> list[int]:
    n = len(first_ts_seq)
    t0 = first_ts_seq[0]
    span = first_ts_seq[-1] - t0
    xs = []
    for i, ts in enumerate(first_ts_seq):
        if span == 0:
            x = half_up(i * (GLYPH_SIZE - 1) / max(1, n - 1))
        else:
            x = half_up((ts - t0) / span * (GLYPH_SIZE - 1))
        xs.append(min(max(x, 0), GLYPH_SIZE - 1))
    return xs


def render_glyph(fs: FeatureSet, label: str = "") -> Glyph:
    """Rasterize a FeatureSet onto the 28x28 grid.

    Column x = half_up((ts - t0) / span * 27); equal-timestamp groups
    spread evenly instead. A leg of height h > 0 fills rows [13-h, 13]
    upward or [14, 14+h] downward at intensity 255; h = 0 draws nothing.
    Sessions sharing a column combine by per-pixel maximum.
    """
    if fs.n_sessions == 0:
        raise EmptyFeatureSet("cannot render a FeatureSet with no sessions")
    grid = bytearray(GLYPH_SIZE * GLYPH_SIZE)
    xs = _column_positions(fs.first_ts_seq)
    for i, x in enumerate(xs):
        h_up = _leg_height(fs.up_bytes[i])
        h_down = _leg_height(fs.down_bytes[i])
        if h_up > 0:
            for y in range(BASELINE_UP - h_up, BASELINE_UP + 1):
                grid[y * GLYPH_SIZE + x] = 255
        if h_down > 0:
            for y in range(BASELINE_DOWN, BASELINE_DOWN + h_down + 1):
                grid[y * GLYPH_SIZE + x] = 255
    return Glyph(pixels=bytes(grid), label=label)


def normalize_glyph(glyph: Glyph) -> np.ndarray:
    """Map pixel intensities to the unit interval: value = pixel / 255."""
    return glyph.to_array().astype(np.float32) / np.float32(255.0)


def encode_glyph(glyph: Glyph) -> bytes:
    """Serialize to the GLY1 container."""
    label_bytes = glyph.label.encode("utf-8")
    if len(label_bytes) > 255:
        raise GlyphFormatError("label exceeds 255 UTF-8 bytes")
    header = GLYPH_MAGIC + struct.pack(
        "<BHHB", GLYPH_VERSION, glyph.width, glyph.height, len(label_bytes)
    )
    return header + label_bytes + glyph.pixels


def decode_glyph(data: bytes) -> Glyph:
    """Parse a GLY1 container back into a Glyph."""
    if len(data) < 10:
        raise GlyphFormatError("truncated glyph header")
    if data[:4] != GLYPH_MAGIC:
        raise GlyphFormatError(f"bad magic {data[:4]!r}")
    version, width, height, label_len = struct.unpack_from("<BHHB", data, 4)
    if version != GLYPH_VERSION:
        raise GlyphFormatError(f"unsupported glyph version {version}")
    if width != GLYPH_SIZE or height != GLYPH_SIZE:
        raise GlyphFormatError(f"unsupported dimensions {width}x{height}")
    offset = 10
    if len(data) < offset + label_len + width * height:
        raise GlyphFormatError("truncated glyph body")
    label = data[offset : offset + label_len].decode("utf-8")
    offset += label_len
    pixels = data[offset : offset + width * height]
    if len(data) != offset + width * height:
        raise GlyphFormatError("trailing bytes after pixel data")
    return Glyph(pixels=pixels, label=label)


def render_presentation_png(fs: FeatureSet) -> bytes:
    """Render a 640x320 anti-aliased chart of the group for humans.

    Client IP is printed top-left, server IP:port top-right. Bars use
    the same time mapping and log heights as the glyph, drawn at 4x and
    downsampled. Never fed to the CNN.
    """
    from PIL import Image, ImageDraw

    if fs.n_sessions == 0:
        raise EmptyFeatureSet("cannot render a FeatureSet with no sessions")

    ss = 4
    width, height = PNG_WIDTH * ss, PNG_HEIGHT * ss
    margin_x, margin_top = 48 * ss, 40 * ss
    axis_y = height // 2
    band = axis_y - margin_top
    bar_w = 9 * ss
    plot_w = width - 2 * margin_x - bar_w

    up_color = (62, 102, 170)
    down_color = (178, 72, 60)
    axis_color = (80, 80, 80)

    image = Image.new("RGB", (width, height), (255, 255, 255))
    draw = ImageDraw.Draw(image)
    draw.line([(margin_x // 2, axis_y), (width - margin_x // 2, axis_y)],
              fill=axis_color, width=ss)

    t0 = fs.first_ts_seq[0]
    span = fs.first_ts_seq[-1] - t0
    n = fs.n_sessions
    for i, ts in enumerate(fs.first_ts_seq):
        if span == 0:
            frac = i / max(1, n - 1)
        else:
            frac = (ts - t0) / span
        x = margin_x + half_up(frac * plot_w)
        h_up = half_up(
            min(1.0, math.log1p(fs.up_bytes[i]) / math.log1p(B_CAP)) * band
        )
        h_down = half_up(
            min(1.0, math.log1p(fs.down_bytes[i]) / math.log1p(B_CAP)) * band
        )
        if h_up > 0:
            draw.rectangle([x, axis_y - h_up, x + bar_w - 1, axis_y - 1],
                           fill=up_color)
        if h_down > 0:
            draw.rectangle([x, axis_y + 1, x + bar_w - 1, axis_y + h_down],
                           fill=down_color)

    image = image.resize((PNG_WIDTH, PNG_HEIGHT), Image.LANCZOS)

    client_ip, server_ip, server_port = fs.group_ref
    draw = ImageDraw.Draw(image)
    server_text = f"{server_ip}:{server_port}"
    draw.text((8, 8), client_ip, fill=(30, 30, 30))
    text_w = draw.textlength(server_text)
    draw.text((PNG_WIDTH - 8 - text_w, 8), server_text, fill=(30, 30, 30))

    out = io.BytesIO()
    image.save(out, format="PNG")
    return out.getvalue()
