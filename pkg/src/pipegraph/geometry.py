"""Shared geometric kernels: pinhole projection, masks, voxel grids, PCA boxes.

Conventions (fixed across the whole artifact):
  * pixel (u, v) addresses the exact lattice point sampled by that pixel's
    ray; u grows right, v grows down
  * depth is planar: distance along the camera's optical axis (+z forward)
  * camera frame is right-handed with +x right, +y down, +z forward
  * pose quaternions are camera-to-world, (w, x, y, z)
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateCloud, DomainError, InvalidDepth
from .model import CameraIntrinsics, CameraPose, DepthMap, RotatedBox, as_cloud


def intrinsics_from_fov(width: int, height: int, hfov_deg: float) -> CameraIntrinsics:
    """Square-pixel intrinsics from image size and horizontal field of view."""
    if not 0.0 < hfov_deg < 180.0:
        raise DomainError(f"horizontal fov must be in (0, 180), got {hfov_deg}")
    f = width / (2.0 * math.tan(math.radians(hfov_deg) / 2.0))
    return CameraIntrinsics(
        width=int(width), height=int(height), fx=f, fy=f, cx=width / 2.0, cy=height / 2.0
    )


def quat_from_matrix(rot: np.ndarray) -> np.ndarray:
    """Unit (w, x, y, z) quaternion for a rotation matrix, w >= 0."""
    m = np.asarray(rot, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def look_at_pose(position, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Pose at `position` with the optical axis through `target` (+y image down)."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise DomainError("look_at_pose: target coincides with position")
    z = forward / norm
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    xn = np.linalg.norm(x)
    if xn < 1e-12:
        raise DomainError("look_at_pose: view direction parallel to up vector")
    x /= xn
    y = np.cross(z, x)
    rot = np.stack([x, y, z], axis=1)  # columns are camera axes in world frame
    return CameraPose(position=position, quaternion=quat_from_matrix(rot))


def unproject(pixel, depth: float, intr: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """World point for a pixel at the given planar depth."""
    if not (np.isfinite(depth) and depth > 0):
        raise InvalidDepth(f"depth must be finite and positive, got {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    cam = np.array(
        [(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth]
    )
    return pose.rotation() @ cam + pose.position


def unproject_pixels(
    us: np.ndarray, vs: np.ndarray, depths: np.ndarray, intr: CameraIntrinsics, pose: CameraPose
) -> np.ndarray:
    """Vectorized unproject; caller guarantees valid depths."""
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    cam = np.stack(
        [(us - intr.cx) * depths / intr.fx, (vs - intr.cy) * depths / intr.fy, depths],
        axis=1,
    )
    return cam @ pose.rotation().T + pose.position


def project(point, intr: CameraIntrinsics, pose: CameraPose):
    """Pixel and planar depth for a world point, or None when behind the camera."""
    cam = pose.rotation().T @ (np.asarray(point, dtype=np.float64) - pose.position)
    if cam[2] <= 0:
        return None
    u = intr.cx + intr.fx * cam[0] / cam[2]
    v = intr.cy + intr.fy * cam[1] / cam[2]
    return (u, v), float(cam[2])


def project_points(
    points: np.ndarray, intr: CameraIntrinsics, pose: CameraPose
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized project: (uv (N,2), depth (N,), in_front (N,) bool).

    uv rows for points behind the camera are unspecified; mask with in_front.
    """
    pts = as_cloud(points)
    cam = (pts - pose.position) @ pose.rotation()
    z = cam[:, 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack(
            [intr.cx + intr.fx * cam[:, 0] / z, intr.cy + intr.fy * cam[:, 1] / z], axis=1
        )
    return uv, z, in_front


def erode_mask(mask: np.ndarray, iterations: int) -> np.ndarray:
    """Morphological erosion with a 3x3 structuring element (8-connectivity).

    Pixels outside the image count as unset, so masks shrink at image borders.
    """
    m = np.asarray(mask, dtype=bool)
    for _ in range(int(iterations)):
        if not m.any():
            break
        padded = np.zeros((m.shape[0] + 2, m.shape[1] + 2), dtype=bool)
        padded[1:-1, 1:-1] = m
        m = (
            padded[:-2, :-2] & padded[:-2, 1:-1] & padded[:-2, 2:]
            & padded[1:-1, :-2] & padded[1:-1, 1:-1] & padded[1:-1, 2:]
            & padded[2:, :-2] & padded[2:, 1:-1] & padded[2:, 2:]
        )
    return m


def rasterize_polygons(
    polygons: list[np.ndarray], width: int, height: int
) -> np.ndarray:
    """Even-odd scanline rasterization of polygon(s) into an (H, W) bool mask.

    All contours share one even-odd parity (holes supported). A pixel (u, v)
    is inside when a horizontal ray through (u, v) crosses the combined edge
    set an odd number of times to its left.
    """
    mask = np.zeros((height, width), dtype=bool)
    edges = []
    for poly in polygons:
        p = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
        if p.shape[0] < 3:
            continue
        q = np.roll(p, -1, axis=0)
        keep = p[:, 1] != q[:, 1]  # horizontal edges never cross a scanline
        edges.append(np.concatenate([p[keep], q[keep]], axis=1))
    if not edges:
        return mask
    e = np.concatenate(edges, axis=0)  # columns: x0, y0, x1, y1
    ylo = np.minimum(e[:, 1], e[:, 3])
    yhi = np.maximum(e[:, 1], e[:, 3])
    v_min = max(0, int(math.ceil(ylo.min())))
    v_max = min(height - 1, int(math.floor(yhi.max())))
    for v in range(v_min, v_max + 1):
        hit = (ylo <= v) & (v < yhi)  # half-open in y avoids double-counted vertices
        if not hit.any():
            continue
        seg = e[hit]
        xs = seg[:, 0] + (v - seg[:, 1]) * (seg[:, 2] - seg[:, 0]) / (seg[:, 3] - seg[:, 1])
        xs = np.sort(xs)
        for x_left, x_right in zip(xs[0::2], xs[1::2]):
            u0 = int(math.floor(x_left)) + 1  # strictly inside the span
            u1 = int(math.ceil(x_right)) - 1
            if u1 >= 0 and u0 < width:
                mask[v, max(u0, 0) : min(u1, width - 1) + 1] = True
    return mask


def mask_to_cloud(
    mask: np.ndarray,
    depth: DepthMap,
    intr: CameraIntrinsics,
    pose: CameraPose,
    erosion: int = 0,
) -> np.ndarray:
    """Erode a bitmask, then unproject every set pixel that has valid depth."""
    m = erode_mask(mask, erosion) if erosion else np.asarray(mask, dtype=bool)
    vs, us = np.nonzero(m)
    if vs.size == 0:
        return np.zeros((0, 3))
    d = depth.values[vs, us].astype(np.float64)
    valid = np.isfinite(d) & (d > 0)
    if not valid.any():
        return np.zeros((0, 3))
    return unproject_pixels(us[valid], vs[valid], d[valid], intr, pose)


def voxel_downsample(cloud: np.ndarray, cell: float) -> np.ndarray:
    """One centroid per occupied grid cell; grid anchored at the origin.

    Output rows are ordered by cell index lexicographically, so the result
    is independent of input point order.
    """
    pts, _ = voxel_downsample_indexed(cloud, cell)
    return pts


def voxel_downsample_indexed(cloud: np.ndarray, cell: float) -> tuple[np.ndarray, np.ndarray]:
    """voxel_downsample plus the cell index of every input point."""
    if cell <= 0:
        raise DomainError(f"voxel cell must be positive, got {cell}")
    pts = as_cloud(cloud)
    if pts.shape[0] == 0:
        return pts, np.zeros(0, dtype=np.int64)
    keys = np.floor(pts / cell).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    sums = np.zeros((counts.shape[0], 3))
    np.add.at(sums, inverse, pts)
    return sums / counts[:, None], inverse


def rotated_bbox(cloud: np.ndarray) -> RotatedBox:
    """PCA-oriented bounding box; axes ordered by extent descending.

    Axis signs are normalized (largest-magnitude component positive) so the
    box is deterministic for a given cloud.
    """
    pts = as_cloud(cloud)
    n = pts.shape[0]
    if n < 1:
        raise DegenerateCloud("rotated_bbox requires at least one point")
    mean = pts.mean(axis=0)
    if n == 1:
        return RotatedBox(center=mean, axes=np.eye(3), half_extents=np.zeros(3))
    centered = pts - mean
    cov = centered.T @ centered / n
    _, vecs = np.linalg.eigh(cov)
    axes = vecs.T[::-1].copy()  # descending eigenvalue order
    for k in range(3):
        j = int(np.argmax(np.abs(axes[k])))
        if axes[k, j] < 0:
            axes[k] = -axes[k]
    coords = centered @ axes.T
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    extents = (hi - lo) / 2.0
    order = np.argsort(-extents, kind="stable")
    axes = axes[order]
    extents = extents[order]
    local_center = ((lo + hi) / 2.0)[order]
    center = mean + local_center @ axes
    return RotatedBox(center=center, axes=axes, half_extents=extents)


def write_ply(cloud: np.ndarray, path) -> None:
    """ASCII PLY dump for external viewers."""
    pts = as_cloud(cloud)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {pts.shape[0]}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("end_header\n")
        for x, y, z in pts:
            fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
