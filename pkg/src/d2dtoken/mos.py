"""Mean-opinion-score models that turn link quality into per-type benefits.

Video quality follows a logistic curve in PSNR saturating at 4.5; elastic
(file-transfer style) quality is logarithmic in throughput.  A traffic type's
benefit is the MOS difference between the direct link and the cellular link.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

LOG_NATURAL = "natural"
LOG_BASE10 = "base10"

VIDEO = "video"
ELASTIC = "elastic"


class NonPositiveMosError(ValueError):
    """Elastic MOS is only defined where b4 * throughput exceeds 1."""


@dataclass(frozen=True)
class MosParams:
    """Shape parameters of the two MOS curves.

    b1 (1/dB) and b2 (dB) set the slope and midpoint of the video logistic;
    b3 scales the elastic curve and b4 (1/kbps) normalizes throughput.  The
    elastic log base is a modeling choice and is carried along explicitly.
    """

    b1: float = 1.0
    b2: float = 5.0
    b3: float = 2.6949
    b4: float = 0.0235
    log_base: str = LOG_NATURAL

    def __post_init__(self):
        if self.b1 <= 0 or self.b3 <= 0 or self.b4 <= 0:
            raise ValueError("b1, b3, b4 must be positive")
        if self.log_base not in (LOG_NATURAL, LOG_BASE10):
            raise ValueError(f"log_base must be {LOG_NATURAL!r} or {LOG_BASE10!r}")

    def _log(self, x: float) -> float:
        return math.log(x) if self.log_base == LOG_NATURAL else math.log10(x)


@dataclass(frozen=True)
class LinkQuality:
    """Observed link quality: PSNR in dB (video), throughput in kbps (elastic)."""

    psnr: float
    throughput: float

    def __post_init__(self):
        if self.throughput <= 0:
            raise ValueError("throughput must be positive")


def mos_video(params: MosParams, psnr: float) -> float:
    """Video MOS on the 1..4.5 scale for a given PSNR in dB."""
    return 4.5 - 3.5 / (1.0 + math.exp(params.b1 * (psnr - params.b2)))


def mos_elastic(params: MosParams, throughput: float) -> float:
    """Elastic-traffic MOS for a throughput in kbps.

    Raises NonPositiveMosError when the throughput is at or below the curve's
    zero crossing (b4 * throughput <= 1).
    """
    scaled = params.b4 * throughput
    if scaled <= 1.0:
        raise NonPositiveMosError(
            f"b4 * throughput = {scaled:.6g} <= 1 gives a non-positive MOS"
        )
    return params.b3 * params._log(scaled)


def benefit_from_mos(
    params: MosParams,
    d2d: LinkQuality,
    cellular: LinkQuality,
    traffic_kind: str,
) -> float:
    """Per-type benefit: MOS gain of the direct link over the cellular link.

    The direct link is assumed at least as good as cellular; a negative
    difference is rejected rather than clamped.
    """
    if traffic_kind == VIDEO:
        gain = mos_video(params, d2d.psnr) - mos_video(params, cellular.psnr)
    elif traffic_kind == ELASTIC:
        gain = mos_elastic(params, d2d.throughput) - mos_elastic(params, cellular.throughput)
    else:
        raise ValueError(f"traffic_kind must be {VIDEO!r} or {ELASTIC!r}")
    if gain < 0:
        raise ValueError(
            f"direct link MOS below cellular for {traffic_kind} traffic "
            f"(difference {gain:.6g}); inputs violate the direct-link-superiority assumption"
        )
    return gain
