"""Synthetic scene fixtures: tilted ground plane plus box obstacles.

The ground surface is the plane Z = a*X + b*Y + c in camera coordinates,
rendered through the pinhole model. Obstacles are image-aligned pillars:
a pixel rectangle whose top face sits at a constant depth `height`
meters closer to the camera than the plane at the rectangle's center.
Keeping obstacles pixel-aligned with flat tops means every ground-truth
quantity (depths, normals, per-pixel surface areas) has a closed form.

Scene-spec files are plain text: a [scene] block with resolution,
intrinsics and the unsafe buffer radius, a [plane] block with a/b/c, and
zero or more [box] blocks with u0/v0/u1/v1/height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics
from .geometry import ray_grid
from .slz import SAFE, UNSAFE, dilate_unsafe


@dataclass(frozen=True)
class Box:
    """Image-aligned obstacle: inclusive pixel rect raised above the plane."""

    u0: int
    v0: int
    u1: int
    v1: int
    height: float

    def __post_init__(self):
        if not (0 <= self.u0 <= self.u1 and 0 <= self.v0 <= self.v1):
            raise ValueError(f"degenerate box rect ({self.u0},{self.v0})-({self.u1},{self.v1})")
        if not (math.isfinite(self.height) and self.height > 0):
            raise ValueError(f"box height must be finite and > 0, got {self.height}")


@dataclass(frozen=True)
class Scene:
    width: int
    height: int
    intr: CameraIntrinsics
    plane: tuple  # (a, b, c): ground plane Z = a X + b Y + c
    boxes: tuple = ()
    buffer_radius: int = 0

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ValueError(f"scene must be at least 3x3, got {self.width}x{self.height}")
        a, b, c = self.plane
        if not all(math.isfinite(v) for v in (a, b, c)) or c <= 0:
            raise ValueError(f"plane needs finite a, b and c > 0, got {self.plane}")
        if self.buffer_radius < 0:
            raise ValueError(f"buffer radius must be >= 0, got {self.buffer_radius}")
        for box in self.boxes:
            if box.u1 >= self.width or box.v1 >= self.height:
                raise ValueError(f"box {box} exceeds the {self.width}x{self.height} frame")


@dataclass
class SceneRender:
    depth: np.ndarray  # (H, W) float64, 0 where the ray misses the scene
    normals: np.ndarray  # (H, W, 3) float64 analytic unit normals
    mask: np.ndarray  # (H, W) uint8 safe/unsafe
    exact_area: np.ndarray  # (H, W) float64 exact per-pixel surface area, m^2
    sidecar: dict = field(default_factory=dict)


def plane_depth(height, width, intr: CameraIntrinsics, a, b, c):
    """Pinhole depth raster of the plane Z = a X + b Y + c; 0 beyond the horizon."""
    rays = ray_grid(height, width, intr)
    g = 1.0 - a * rays[..., 0] - b * rays[..., 1]
    depth = np.zeros((height, width), dtype=np.float64)
    vis = g > 0
    depth[vis] = c / g[vis]
    return depth


def plane_unit_normal(a, b):
    """Camera-facing unit normal of Z = a X + b Y + c."""
    n = np.array([a, b, -1.0]) / math.sqrt(a * a + b * b + 1.0)
    return n


def exact_plane_cell_areas(height, width, intr: CameraIntrinsics, a, b, c):
    """Exact surface area of the plane patch seen by each whole pixel.

    Integrates the area element c^2 sqrt(1+a^2+b^2) / (fx fy g^3) in
    closed form over each pixel cell [u-1/2, u+1/2] x [v-1/2, v+1/2];
    pixels whose center is past the horizon get 0.
    """
    alpha = a / intr.fx
    beta = b / intr.fy
    us = np.arange(width, dtype=np.float64) - intr.cx
    vs = np.arange(height, dtype=np.float64) - intr.cy

    def g_of(u, v):
        return 1.0 - alpha * u[None, :] - beta * v[:, None]

    if alpha == 0.0 and beta == 0.0:
        cell = np.ones((height, width), dtype=np.float64)
    elif beta == 0.0:
        gp = 1.0 - alpha * (us + 0.5)
        gm = 1.0 - alpha * (us - 0.5)
        cell = ((gp ** -2 - gm ** -2) / (2.0 * alpha))[None, :] * np.ones((height, 1))
    elif alpha == 0.0:
        gp = 1.0 - beta * (vs + 0.5)
        gm = 1.0 - beta * (vs - 0.5)
        cell = ((gp ** -2 - gm ** -2) / (2.0 * beta))[:, None] * np.ones((1, width))
    else:
        gpp = g_of(us + 0.5, vs + 0.5)
        gpm = g_of(us + 0.5, vs - 0.5)
        gmp = g_of(us - 0.5, vs + 0.5)
        gmm = g_of(us - 0.5, vs - 0.5)
        cell = (1.0 / gpp - 1.0 / gmp - 1.0 / gpm + 1.0 / gmm) / (2.0 * alpha * beta)

    scale = c * c * math.sqrt(a * a + b * b + 1.0) / (intr.fx * intr.fy)
    areas = scale * cell
    areas[g_of(us, vs) <= 0] = 0.0
    return areas


def render_scene(scene: Scene) -> SceneRender:
    """Depth, analytic normals, safe mask and exact per-pixel areas."""
    a, b, c = scene.plane
    intr = scene.intr
    depth = plane_depth(scene.height, scene.width, intr, a, b, c)
    ground_visible = depth > 0

    normals = np.zeros((scene.height, scene.width, 3), dtype=np.float64)
    normals[ground_visible] = plane_unit_normal(a, b)
    exact = exact_plane_cell_areas(scene.height, scene.width, intr, a, b, c)

    footprint = np.zeros((scene.height, scene.width), dtype=np.uint8)
    box_areas = []
    for box in scene.boxes:
        uc = (box.u0 + box.u1) / 2.0
        vc = (box.v0 + box.v1) / 2.0
        rx = (uc - intr.cx) / intr.fx
        ry = (vc - intr.cy) / intr.fy
        g_center = 1.0 - a * rx - b * ry
        if g_center <= 0:
            raise ValueError(f"box {box} centered past the plane horizon")
        z_top = c / g_center - box.height
        if z_top <= 0:
            raise ValueError(f"box {box} top would sit behind the camera")
        region = np.zeros_like(footprint, dtype=bool)
        region[box.v0:box.v1 + 1, box.u0:box.u1 + 1] = True
        wins = region & (~ground_visible | (z_top < depth))
        depth[wins] = z_top
        normals[wins] = (0.0, 0.0, -1.0)
        exact[wins] = z_top * z_top / (intr.fx * intr.fy)
        footprint[region] = 1
        box_areas.append(float(exact[wins].sum()))

    unsafe = dilate_unsafe(footprint, scene.buffer_radius)
    unsafe[depth <= 0] = UNSAFE
    mask = np.where(unsafe == 1, UNSAFE, SAFE).astype(np.uint8)

    visible = depth > 0
    sidecar = {
        "plane_a": a, "plane_b": b, "plane_c": c,
        "buffer_radius": scene.buffer_radius,
        "analytic_total_area": float(exact[visible].sum()),
        "analytic_safe_area": float(exact[visible & (mask == SAFE)].sum()),
    }
    for i, area in enumerate(box_areas):
        sidecar[f"box{i}_top_area"] = area
    return SceneRender(depth=depth, normals=normals, mask=mask,
                       exact_area=exact, sidecar=sidecar)


def parse_scene(path) -> Scene:
    """Parse a scene-spec file (see module docstring for the format)."""
    sections = []
    current = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = (line[1:-1].strip().lower(), {})
                sections.append(current)
                continue
            if current is None or "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected [section] or key=value")
            key, _, val = line.partition("=")
            current[1][key.strip()] = val.strip()

    scene_kv = plane_kv = None
    boxes = []
    for name, kv in sections:
        if name == "scene":
            if scene_kv is not None:
                raise ValueError(f"{path}: duplicate [scene] section")
            scene_kv = kv
        elif name == "plane":
            if plane_kv is not None:
                raise ValueError(f"{path}: duplicate [plane] section")
            plane_kv = kv
        elif name == "box":
            boxes.append(kv)
        else:
            raise ValueError(f"{path}: unknown section [{name}]")
    if scene_kv is None or plane_kv is None:
        raise ValueError(f"{path}: a [scene] and a [plane] section are required")

    def take(kv, key, cast, default=None):
        if key not in kv:
            if default is not None:
                return default
            raise ValueError(f"{path}: missing key {key!r}")
        try:
            return cast(kv[key])
        except ValueError:
            raise ValueError(f"{path}: bad value for {key!r}: {kv[key]!r}") from None

    intr = CameraIntrinsics(take(scene_kv, "fx", float), take(scene_kv, "fy", float),
                            take(scene_kv, "cx", float), take(scene_kv, "cy", float))
    return Scene(
        width=take(scene_kv, "width", int),
        height=take(scene_kv, "height", int),
        intr=intr,
        plane=(take(plane_kv, "a", float), take(plane_kv, "b", float),
               take(plane_kv, "c", float)),
        boxes=tuple(Box(take(kv, "u0", int), take(kv, "v0", int), take(kv, "u1", int),
                        take(kv, "v1", int), take(kv, "height", float)) for kv in boxes),
        buffer_radius=take(scene_kv, "buffer", int, default=0),
    )
