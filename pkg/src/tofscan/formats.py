"""On-disk and on-wire encodings: binary PLY, 16-bit PGM (P5), PPM (P6), JSON camera files.

PGM stores 16-bit samples big-endian (most significant byte first, as the
netpbm spec requires for maxval > 255); PLY is binary little-endian with
float32 coordinates, optional uchar RGB and float32 normals.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import BinaryMask, CameraIntrinsics, ColorImage, DepthImage, PointCloud, RigidTransform

__all__ = [
    "encode_pgm16", "decode_pgm16", "encode_pgm8", "decode_pgm8",
    "encode_ppm", "decode_ppm",
    "write_ply", "read_ply",
    "save_intrinsics", "load_intrinsics", "save_transform", "load_transform",
    "encode_mask_pgm", "decode_mask_pgm",
]


def _read_pnm_header(buf: bytes, magic: bytes):
    """Parse 'P5'/'P6' header tokens, skipping '#' comments; returns (w, h, maxval, offset)."""
    if not buf.startswith(magic):
        raise ValueError(f"not a {magic.decode()} file (got {buf[:2]!r})")
    tokens = []
    i = len(magic)
    while len(tokens) < 3:
        if i >= len(buf):
            raise ValueError("truncated PNM header")
        c = buf[i:i + 1]
        if c == b"#":
            while i < len(buf) and buf[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(buf) and not buf[j:j + 1].isspace():
                j += 1
            tokens.append(int(buf[i:j]))
            i = j
    return tokens[0], tokens[1], tokens[2], i + 1  # single whitespace after maxval


def encode_pgm16(img: DepthImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n65535\n".encode()
    return header + img.data.astype(">u2").tobytes()


def decode_pgm16(buf: bytes) -> DepthImage:
    w, h, maxval, off = _read_pnm_header(buf, b"P5")
    if maxval != 65535:
        raise ValueError(f"expected 16-bit PGM (maxval 65535), got {maxval}")
    need = w * h * 2
    if len(buf) - off < need:
        raise ValueError("truncated PGM payload")
    data = np.frombuffer(buf, dtype=">u2", count=w * h, offset=off)
    return DepthImage(w, h, data.reshape(h, w).astype(np.uint16))


def encode_pgm8(data: np.ndarray) -> bytes:
    h, w = data.shape
    return f"P5\n{w} {h}\n255\n".encode() + np.ascontiguousarray(data, dtype=np.uint8).tobytes()


def decode_pgm8(buf: bytes) -> np.ndarray:
    w, h, maxval, off = _read_pnm_header(buf, b"P5")
    if maxval != 255:
        raise ValueError(f"expected 8-bit PGM (maxval 255), got {maxval}")
    data = np.frombuffer(buf[off:off + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise ValueError("truncated PGM payload")
    return data.reshape(h, w).copy()


def encode_mask_pgm(mask: BinaryMask) -> bytes:
    return encode_pgm8(mask.data)


def decode_mask_pgm(buf: bytes) -> BinaryMask:
    data = decode_pgm8(buf)
    return BinaryMask(data.shape[1], data.shape[0], data)  # rejects non-{0,255} values


def encode_ppm(img: ColorImage) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode()
    return header + img.data.tobytes()


def decode_ppm(buf: bytes) -> ColorImage:
    w, h, maxval, off = _read_pnm_header(buf, b"P6")
    if maxval != 255:
        raise ValueError(f"expected 8-bit PPM (maxval 255), got {maxval}")
    data = np.frombuffer(buf[off:off + w * h * 3], dtype=np.uint8)
    if data.size != w * h * 3:
        raise ValueError("truncated PPM payload")
    return ColorImage(w, h, data.reshape(h, w, 3).copy())


# --- PLY ---------------------------------------------------------------

def write_ply(path, cloud: PointCloud = None, *, vertices: np.ndarray = None,
              triangles: np.ndarray = None) -> None:
    """Write a point cloud, or a triangle mesh via ``vertices``/``triangles``."""
    path = Path(path)
    if cloud is not None:
        verts = cloud.points
        colors = cloud.colors
        normals = cloud.normals
        tris = None
    else:
        verts = np.asarray(vertices, dtype=np.float64)
        colors = normals = None
        tris = np.asarray(triangles, dtype=np.uint32) if triangles is not None else None

    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {len(verts)}"]
    lines += ["property float x", "property float y", "property float z"]
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if normals is not None:
        lines += ["property float nx", "property float ny", "property float nz"]
        fields += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
    if tris is not None:
        lines += [f"element face {len(tris)}", "property list uchar uint vertex_indices"]
    lines.append("end_header")

    rec = np.zeros(len(verts), dtype=np.dtype(fields))
    rec["x"], rec["y"], rec["z"] = verts[:, 0], verts[:, 1], verts[:, 2]
    if colors is not None:
        rgb = np.clip(np.round(colors * 255.0), 0, 255).astype(np.uint8)
        rec["red"], rec["green"], rec["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    if normals is not None:
        rec["nx"], rec["ny"], rec["nz"] = normals[:, 0], normals[:, 1], normals[:, 2]

    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode())
        f.write(rec.tobytes())
        if tris is not None:
            face = np.zeros(len(tris), dtype=np.dtype([("n", "u1"), ("i", "<u4", (3,))]))
            face["n"] = 3
            face["i"] = tris
            f.write(face.tobytes())


def read_ply(path):
    """Read a binary-little-endian PLY written by :func:`write_ply`.

    Returns a PointCloud when the file has no faces, else (vertices, triangles).
    """
    buf = Path(path).read_bytes()
    end = buf.index(b"end_header\n") + len(b"end_header\n")
    header = buf[:end].decode().splitlines()
    if header[1] != "format binary_little_endian 1.0":
        raise ValueError(f"unsupported PLY format line: {header[1]}")
    n_vert = n_face = 0
    props = []
    element = None
    for line in header[2:]:
        parts = line.split()
        if parts[0] == "element":
            element = parts[1]
            if element == "vertex":
                n_vert = int(parts[2])
            elif element == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and element == "vertex":
            if parts[1] == "list":
                raise ValueError("list property on vertex element is unsupported")
            props.append((parts[2], {"float": "<f4", "uchar": "u1"}[parts[1]]))
    rec = np.frombuffer(buf, dtype=np.dtype(props), count=n_vert, offset=end)
    names = [p[0] for p in props]
    pts = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    if n_face:
        face_dt = np.dtype([("n", "u1"), ("i", "<u4", (3,))])
        faces = np.frombuffer(buf, dtype=face_dt, count=n_face, offset=end + rec.nbytes)
        if not np.all(faces["n"] == 3):
            raise ValueError("non-triangular face in PLY")
        return pts, faces["i"].astype(np.int64).copy()
    colors = None
    if "red" in names:
        colors = np.column_stack([rec["red"], rec["green"], rec["blue"]]).astype(np.float64) / 255.0
    normals = None
    if "nx" in names:
        normals = np.column_stack([rec["nx"], rec["ny"], rec["nz"]]).astype(np.float64)
        lens = np.linalg.norm(normals, axis=1)
        lens[lens == 0] = 1.0
        normals = normals / lens[:, None]  # float32 round trip re-normalization
    return PointCloud(pts, colors=colors, normals=normals)


# --- JSON camera files --------------------------------------------------

def save_intrinsics(path, intr: CameraIntrinsics) -> None:
    Path(path).write_text(json.dumps(intr.to_json_dict(), indent=2))


def load_intrinsics(path) -> CameraIntrinsics:
    return CameraIntrinsics.from_json_dict(json.loads(Path(path).read_text()))


def save_transform(path, t: RigidTransform) -> None:
    Path(path).write_text(json.dumps(t.to_json_dict(), indent=2))


def load_transform(path) -> RigidTransform:
    return RigidTransform.from_json_dict(json.loads(Path(path).read_text()))
