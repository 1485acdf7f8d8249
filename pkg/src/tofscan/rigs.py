"""Camera rig builders: look-at poses and the default sensor layouts.

Two stock layouts: a 10-sensor ring (five rods, two heights) used for the
known-object and interference studies, and an 8-sensor chute rig (2 covering
the head, 2 on top, 4 on the body sides). Chain order in each builder lists
physically adjacent sensors consecutively so that neighbors share calibration
cube faces and view overlap.
"""

from __future__ import annotations

import numpy as np

from .geometry import CameraIntrinsics, RigidTransform
from .render import SensorModel

__all__ = ["look_at", "default_intrinsics", "known_object_rig", "cattle_rig",
           "KNOWN_OBJECT_CHAIN", "CATTLE_CHAIN"]

# registration chain orders: consecutive devices share calibration-cube faces
# and view overlap (same rod first, then same-height ring hops)
KNOWN_OBJECT_CHAIN = (0, 1, 3, 2, 4, 5, 7, 6, 8, 9)
# walk: top-rear, +y side rear/front, +y head, top-front, -y head, -y side front/rear
CATTLE_CHAIN = (3, 2, 1, 0, 4, 7, 6, 5)


def look_at(eye, center, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-world pose: +z toward ``center``, +y roughly against ``up``."""
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(center, dtype=np.float64) - eye
    nf = np.linalg.norm(f)
    if nf == 0:
        raise ValueError("eye and center coincide")
    f = f / nf
    up = np.asarray(up, dtype=np.float64)
    r = np.cross(f, up)
    if np.linalg.norm(r) < 1e-9:
        r = np.cross(f, (1.0, 0.0, 0.0))
    r = r / np.linalg.norm(r)
    d = np.cross(f, r)  # image-down axis
    rot = np.column_stack([r, d, f])
    return RigidTransform(rot, eye)


def default_intrinsics(width: int = 320, height: int = 240,
                       focal: float | None = None) -> CameraIntrinsics:
    f = focal if focal is not None else 0.7 * width
    return CameraIntrinsics(fx=f, fy=f, cx=(width - 1) / 2, cy=(height - 1) / 2,
                            width=width, height=height)


def known_object_rig(n_rods: int = 5, radius: float = 1.2, center=(0.0, 0.0, 0.8),
                     heights=(0.45, 1.15), intrinsics: CameraIntrinsics | None = None,
                     sigma0: float = 0.002, sigma1: float = 0.0005,
                     dropout: float = 0.0) -> list[SensorModel]:
    """Sensors paired on rods around a suspended object; ids walk rod by rod."""
    intr = intrinsics or default_intrinsics()
    center = np.asarray(center, dtype=np.float64)
    rig = []
    dev = 0
    for k in range(n_rods):
        angle = 2 * np.pi * k / n_rods
        x = center[0] + radius * np.cos(angle)
        y = center[1] + radius * np.sin(angle)
        for z in heights:
            pose = look_at((x, y, z), center)
            rig.append(SensorModel(dev, intr, pose, sigma0, sigma1, dropout))
            dev += 1
    return rig


def cattle_rig(intrinsics: CameraIntrinsics | None = None,
               sigma0: float = 0.002, sigma1: float = 0.0005,
               dropout: float = 0.0) -> list[SensorModel]:
    """8 sensors around the chute volume, ordered as a view-overlap chain.

    Walks one body side head-to-tail, crosses over the top, and returns along
    the other side to the head cameras, keeping consecutive devices' frustums
    overlapped.
    """
    intr = intrinsics or default_intrinsics()
    head = (1.15, 0.0, 1.35)
    # side cameras sit below the body midline so their rays pass under the
    # flank and over the chute rail, covering the belly
    stations = [
        ((2.35, 0.75, 1.70), head),     # head side +y
        ((1.45, 1.70, 0.78), (0.5, 0.0, 0.95)),   # body side +y, front
        ((-0.95, 1.70, 0.78), (-0.4, 0.0, 0.95)),  # body side +y, rear
        ((-0.65, 0.0, 2.85), (-0.3, 0.0, 1.0)),   # top, rear
        ((0.65, 0.0, 2.85), (0.3, 0.0, 1.0)),     # top, front
        ((-0.95, -1.70, 0.78), (-0.4, 0.0, 0.95)),  # body side -y, rear
        ((1.45, -1.70, 0.78), (0.5, 0.0, 0.95)),   # body side -y, front
        ((2.35, -0.75, 1.70), head),    # head side -y
    ]
    return [SensorModel(dev, intr, look_at(eye, at), sigma0, sigma1, dropout)
            for dev, (eye, at) in enumerate(stations)]
