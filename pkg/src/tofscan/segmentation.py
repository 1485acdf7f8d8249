"""Voting arbitration between RGB- and depth-derived masks, plus quality metrics.

The mask provider is pluggable: simulator oracle masks and file-loaded masks
travel through the same code path. Metric definitions:

    iou      = |P ∩ G| / |P ∪ G|          (1.0 when both empty)
    fn_rate  = 100 * |G \\ P| / |G|
    fp_rate  = 100 * |P \\ G| / (total - |G|)   (false positives over true background)

The false-positive denominator is the true-background pixel count so that both
rates live in [0, 100]; pass ``fp_over_prediction=True`` to normalize by |P|
instead when comparing against other conventions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import decode_mask_pgm
from .geometry import BinaryMask, DepthImage

__all__ = [
    "ArbitrationMode", "MaskPair", "SegMetrics",
    "fuse", "metrics", "apply_mask_to_depth", "load_masks",
]


class ArbitrationMode(enum.Enum):
    RGB_ONLY = "rgb"
    DEPTH_ONLY = "depth"
    ONE_VOTE_OR = "or"
    TWO_VOTE_AND = "and"

    @staticmethod
    def parse(name: str) -> "ArbitrationMode":
        for m in ArbitrationMode:
            if m.value == name.lower():
                return m
        raise ValueError(f"unknown arbitration mode {name!r} (use rgb|depth|or|and)")


@dataclass(frozen=True)
class MaskPair:
    rgb_mask: BinaryMask
    depth_mask: BinaryMask

    def __post_init__(self):
        a, b = self.rgb_mask, self.depth_mask
        if (a.width, a.height) != (b.width, b.height):
            raise ValueError(f"rgb mask {a.width}x{a.height} does not match "
                             f"depth mask {b.width}x{b.height}")


@dataclass(frozen=True)
class SegMetrics:
    iou: float
    fp_rate: float  # percent
    fn_rate: float  # percent


def fuse(pair: MaskPair, mode: ArbitrationMode) -> BinaryMask:
    """Pixelwise vote: OR = 1-vote union, AND = 2-vote intersection."""
    if mode is ArbitrationMode.RGB_ONLY:
        return pair.rgb_mask
    if mode is ArbitrationMode.DEPTH_ONLY:
        return pair.depth_mask
    a = pair.rgb_mask.foreground()
    b = pair.depth_mask.foreground()
    fg = a | b if mode is ArbitrationMode.ONE_VOTE_OR else a & b
    return BinaryMask.from_bool(fg)


def metrics(pred: BinaryMask, gt: BinaryMask, fp_over_prediction: bool = False) -> SegMetrics:
    """IOU, false-positive and false-negative rates of ``pred`` against ``gt``."""
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ValueError(f"prediction {pred.width}x{pred.height} does not match "
                         f"ground truth {gt.width}x{gt.height}")
    p = pred.foreground()
    g = gt.foreground()
    n_g = int(g.sum())
    n_p = int(p.sum())
    if n_g == 0:
        raise ValueError("ground truth has empty foreground; fn rate undefined")
    inter = int((p & g).sum())
    union = n_p + n_g - inter
    iou = 1.0 if union == 0 else inter / union
    fn = 100.0 * (n_g - inter) / n_g
    if fp_over_prediction:
        fp = 0.0 if n_p == 0 else 100.0 * (n_p - inter) / n_p
    else:
        background = p.size - n_g
        fp = 0.0 if background == 0 else 100.0 * (n_p - inter) / background
    return SegMetrics(iou=iou, fp_rate=fp, fn_rate=fn)


def apply_mask_to_depth(depth: DepthImage, mask: BinaryMask) -> DepthImage:
    """Zero background pixels; foreground depth is untouched."""
    if (mask.width, mask.height) != (depth.width, depth.height):
        raise ValueError(f"mask {mask.width}x{mask.height} does not match "
                         f"depth {depth.width}x{depth.height}")
    out = np.where(mask.foreground(), depth.data, 0).astype(np.uint16)
    return DepthImage(depth.width, depth.height, out)


def load_masks(directory, device_ids) -> dict[int, MaskPair]:
    """Load <device>_rgbmask.pgm / <device>_depthmask.pgm pairs for every device."""
    directory = Path(directory)
    out: dict[int, MaskPair] = {}
    for dev in device_ids:
        pair = []
        for suffix in ("rgbmask", "depthmask"):
            path = directory / f"{dev}_{suffix}.pgm"
            if not path.exists():
                raise FileNotFoundError(f"missing {suffix} for device {dev}: {path}")
            pair.append(decode_mask_pgm(path.read_bytes()))
        out[int(dev)] = MaskPair(rgb_mask=pair[0], depth_mask=pair[1])
    return out
