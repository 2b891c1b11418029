"""flowglyph: turn two-party multi-session TCP traffic into glyph images and classify them."""

__version__ = "0.1.0"

from .pcapio import Capture, FrameRecord, parse_pcap, write_pcap
from .sessions import Session, SessionSet, assemble_sessions
from .features import FeatureSet, PartyGroup, extract_features, group_sessions
from .imaging import Glyph, normalize_glyph, render_glyph

__all__ = [
    "Capture",
    "FrameRecord",
    "parse_pcap",
    "write_pcap",
    "Session",
    "SessionSet",
    "assemble_sessions",
    "PartyGroup",
    "FeatureSet",
    "group_sessions",
    "extract_features",
    "Glyph",
    "render_glyph",
    "normalize_glyph",
    "__version__",
]
