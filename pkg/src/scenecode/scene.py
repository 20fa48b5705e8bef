"""Deterministic procedural renderer with factored ground truth.

Scenes are lit by a single directional light and viewed by an orthographic
camera orbiting the object. Three extrinsic factors (camera azimuth, camera
elevation, light azimuth) and a four-dimensional intrinsic vector fully
determine every pixel, so equal parameters give bit-identical images.

Two object kinds exist: a head-like composite (ellipsoid head, ellipsoid
nose, two darker eye patches) whose intrinsics control axis ratio, nose
length, eye spacing and base albedo; and a blocky chair (box seat, back and
legs, optional arms) for the single-extrinsic-factor setup.

Conventions: positive azimuth orbits the camera to the viewer's right,
positive elevation looks down from above, and the light azimuth is measured
in the same frame as the camera azimuth. Shading is Lambertian
``max(0, n.l)`` on top of a small ambient floor; the floor keeps every
covered pixel strictly positive for any in-range light direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError

INTRINSIC_DIM = 4
SCENE_KINDS = ("head", "chair")

AZIMUTH_RANGE = (-90.0, 90.0)
ELEVATION_RANGE = (-30.0, 30.0)
LIGHT_RANGE = (-90.0, 90.0)

FRAME_HALF_SIZE = 1.6
CAMERA_DISTANCE = 5.0
AMBIENT = 0.2

FACTOR_RANGES = {
    "azimuth": AZIMUTH_RANGE,
    "elevation": ELEVATION_RANGE,
    "light_azimuth": LIGHT_RANGE,
}


@dataclass(frozen=True)
class SceneParams:
    """Ground-truth generating parameters for one scene."""

    azimuth: float
    elevation: float
    light_azimuth: float
    intrinsic: tuple[float, ...]
    kind: str = "head"

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise DomainError(f"unknown scene kind {self.kind!r}")
        _check_range("azimuth", self.azimuth, AZIMUTH_RANGE)
        _check_range("elevation", self.elevation, ELEVATION_RANGE)
        _check_range("light_azimuth", self.light_azimuth, LIGHT_RANGE)
        if len(self.intrinsic) != INTRINSIC_DIM:
            raise DomainError(f"intrinsic must have {INTRINSIC_DIM} entries")
        for v in self.intrinsic:
            _check_range("intrinsic", v, (-1.0, 1.0))

    def value_of(self, factor: str) -> float:
        if factor not in FACTOR_RANGES:
            raise ContractError(f"{factor!r} has no scalar value")
        return getattr(self, factor)

    def replace(self, **kwargs) -> "SceneParams":
        fields = {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "light_azimuth": self.light_azimuth,
            "intrinsic": self.intrinsic,
            "kind": self.kind,
        }
        fields.update(kwargs)
        return SceneParams(**fields)


def _check_range(name: str, value: float, rng: tuple[float, float]) -> None:
    if not (rng[0] <= value <= rng[1]) or not math.isfinite(value):
        raise DomainError(f"{name}={value} outside [{rng[0]}, {rng[1]}]")


@dataclass
class TransformBatch:
    """Mini-batch in which exactly one scene factor varies."""

    images: np.ndarray  # (B, 1, res, res) float32
    params: list[SceneParams]
    active_factor: str

    def validate(self) -> None:
        if len(self.params) < 2:
            raise ContractError("batch must contain at least 2 examples")
        if self.active_factor not in FACTOR_RANGES and self.active_factor != "intrinsic":
            raise ContractError(f"unknown factor {self.active_factor!r}")
        base = self.params[0]
        for p in self.params[1:]:
            for name in ("azimuth", "elevation", "light_azimuth"):
                if name != self.active_factor and getattr(p, name) != getattr(base, name):
                    raise ContractError(f"inactive factor {name} varies inside the batch")
            if self.active_factor != "intrinsic" and p.intrinsic != base.intrinsic:
                raise ContractError("inactive intrinsic vector varies inside the batch")
            if p.kind != base.kind:
                raise ContractError("scene kind varies inside the batch")

    def values(self) -> np.ndarray:
        """Ground-truth values of the active factor (extrinsic batches only)."""
        return np.array([p.value_of(self.active_factor) for p in self.params])


def _camera_frame(azimuth_deg: float, elevation_deg: float):
    """Orthonormal camera basis in object space: (right, up, toward-camera)."""
    phi = math.radians(azimuth_deg)
    alpha = math.radians(elevation_deg)
    sp, cp = math.sin(phi), math.cos(phi)
    sa, ca = math.sin(alpha), math.cos(alpha)
    toward = np.array([sp * ca, sa, cp * ca])
    right = np.array([cp, 0.0, -sp])
    up = np.array([-sp * sa, ca, -cp * sa])
    return right, up, toward


def _pixel_grid(resolution: int):
    """Pixel-center coordinates; columns left-to-right, rows top-to-bottom."""
    scale = FRAME_HALF_SIZE / resolution
    u = (2 * np.arange(resolution) + 1 - resolution) * scale
    v = (resolution - 1 - 2 * np.arange(resolution)) * scale
    return np.meshgrid(u, v)  # uu varies along columns, vv along rows


def _ray_ellipsoid(origins, direction, center, radii):
    """Nearest positive hit t for each ray, +inf where missed."""
    o = (origins - center) / radii
    d = direction / radii
    a = float(d @ d)
    b = 2.0 * (o @ d)
    c = np.sum(o * o, axis=-1) - 1.0
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t = (-b - sq) / (2.0 * a)
    return np.where(hit & (t > 0.0), t, np.inf)


def _ray_box(origins, direction, center, half):
    """Slab-method entry t (+inf where missed) and the entering axis."""
    n = origins.shape[0]
    t_near = np.full(n, -np.inf)
    t_far = np.full(n, np.inf)
    axis_near = np.zeros(n, dtype=np.int8)
    for ax in range(3):
        o = origins[:, ax]
        d = float(direction[ax])
        lo = center[ax] - half[ax]
        hi = center[ax] + half[ax]
        if abs(d) < 1e-12:
            outside = (o < lo) | (o > hi)
            t_far = np.where(outside, -np.inf, t_far)
            continue
        t1 = (lo - o) / d
        t2 = (hi - o) / d
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        take = near > t_near
        axis_near = np.where(take, ax, axis_near)
        t_near = np.maximum(t_near, near)
        t_far = np.minimum(t_far, far)
    hit = (t_near <= t_far) & (t_near > 0.0)
    return np.where(hit, t_near, np.inf), axis_near


def _head_primitives(intrinsic):
    c0, c1, c2, c3 = intrinsic
    head_radii = np.array([0.80 + 0.10 * c0, 0.95, 0.72])
    nose_center = np.array([0.0, -0.10, 0.70])
    nose_radii = np.array([0.16, 0.16, 0.30 + 0.12 * c1])
    eye_spacing = 0.35 + 0.12 * c2
    albedo = 0.75 + 0.20 * c3
    return head_radii, nose_center, nose_radii, eye_spacing, albedo


def _render_head(origins, direction, light, intrinsic):
    head_radii, nose_center, nose_radii, eye_spacing, albedo = _head_primitives(intrinsic)

    t_head = _ray_ellipsoid(origins, direction, np.zeros(3), head_radii)
    t_nose = _ray_ellipsoid(origins, direction, nose_center, nose_radii)
    t = np.minimum(t_head, t_nose)
    covered = np.isfinite(t)
    ts = np.where(covered, t, 0.0)
    points = origins + ts[:, None] * direction

    nose_wins = t_nose < t_head
    normals = np.where(
        nose_wins[:, None],
        (points - nose_center) / (nose_radii * nose_radii),
        points / (head_radii * head_radii),
    )
    norms = np.linalg.norm(normals, axis=1)
    normals = normals / np.where(norms > 0, norms, 1.0)[:, None]

    # Darker eye patches: angular proximity on the head's unit-sphere chart.
    surface = points / head_radii
    s_norm = np.linalg.norm(surface, axis=1)
    surface = surface / np.where(s_norm > 0, s_norm, 1.0)[:, None]
    eye_dir = np.array([eye_spacing, 0.32, 1.0])
    eye_l = np.array([-eye_spacing, 0.32, 1.0])
    eye_dir = eye_dir / np.linalg.norm(eye_dir)
    eye_l = eye_l / np.linalg.norm(eye_l)
    closeness = np.maximum(surface @ eye_dir, surface @ eye_l)
    hi, lo = math.cos(0.18), math.cos(0.30)
    blend = np.clip((closeness - lo) / (hi - lo), 0.0, 1.0)
    pixel_albedo = albedo * np.where(nose_wins, 1.0, 1.0 - 0.75 * blend)

    diffuse = np.maximum(normals @ light, 0.0)
    shade = pixel_albedo * (AMBIENT + (1.0 - AMBIENT) * diffuse)
    return np.where(covered, shade, 0.0)


def _chair_boxes(intrinsic):
    c0, c1, c2, c3 = intrinsic
    hw = 0.52 + 0.14 * c0
    hb = 0.42 + 0.14 * c1
    hd = 0.45 + 0.10 * c2
    boxes = [
        (np.array([0.0, -0.05, 0.0]), np.array([hw, 0.07, hd])),  # seat
        (np.array([0.0, hb - 0.05, -hd + 0.06]), np.array([hw, hb, 0.06])),  # back
    ]
    for sx in (-1.0, 1.0):
        for sz in (-1.0, 1.0):
            boxes.append(
                (
                    np.array([sx * (hw - 0.06), -0.38, sz * (hd - 0.06)]),
                    np.array([0.05, 0.28, 0.05]),
                )
            )
    if c3 > 0.0:
        for sx in (-1.0, 1.0):
            boxes.append(
                (
                    np.array([sx * (hw + 0.04), 0.18, 0.0]),
                    np.array([0.05, 0.16, hd * 0.8]),
                )
            )
    return boxes


def _render_chair(origins, direction, light, intrinsic):
    boxes = _chair_boxes(intrinsic)
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_axis = np.zeros(n, dtype=np.int8)
    for center, half in boxes:
        t, axis = _ray_box(origins, direction, center, half)
        take = t < best_t
        best_axis = np.where(take, axis, best_axis)
        best_t = np.where(take, t, best_t)
    covered = np.isfinite(best_t)

    normals = np.zeros((n, 3))
    for ax in range(3):
        sign = -math.copysign(1.0, direction[ax]) if abs(direction[ax]) > 1e-12 else 0.0
        normals[:, ax] = np.where(best_axis == ax, sign, 0.0)

    diffuse = np.maximum(normals @ light, 0.0)
    shade = 0.8 * (AMBIENT + (1.0 - AMBIENT) * diffuse)
    return np.where(covered, shade, 0.0)


def render(params: SceneParams, resolution: int) -> np.ndarray:
    """Render a (1, res, res) grayscale image in [0, 1]."""
    if resolution < 1:
        raise ContractError(f"resolution must be positive, got {resolution}")
    right, up, toward = _camera_frame(params.azimuth, params.elevation)
    uu, vv = _pixel_grid(resolution)
    origins = (
        uu.reshape(-1, 1) * right[None, :]
        + vv.reshape(-1, 1) * up[None, :]
        + CAMERA_DISTANCE * toward[None, :]
    )
    direction = -toward

    phi_l = math.radians(params.light_azimuth)
    light = np.array([math.sin(phi_l), 0.0, math.cos(phi_l)])

    if params.kind == "head":
        shade = _render_head(origins, direction, light, params.intrinsic)
    else:
        shade = _render_chair(origins, direction, light, params.intrinsic)
    image = shade.reshape(resolution, resolution).astype(np.float32)
    return image[None]


def coverage_mask(params: SceneParams, resolution: int) -> np.ndarray:
    """Boolean mask of pixels the object covers (independent of lighting)."""
    return render(params, resolution)[0] > 0.0


def _draw_params(rng: np.random.Generator, kind: str) -> SceneParams:
    return SceneParams(
        azimuth=float(rng.uniform(*AZIMUTH_RANGE)),
        elevation=float(rng.uniform(*ELEVATION_RANGE)),
        light_azimuth=float(rng.uniform(*LIGHT_RANGE)),
        intrinsic=tuple(float(x) for x in rng.uniform(-1.0, 1.0, INTRINSIC_DIM)),
        kind=kind,
    )


def _redraw_factor(rng: np.random.Generator, params: SceneParams, factor: str) -> SceneParams:
    if factor == "intrinsic":
        intr = tuple(float(x) for x in rng.uniform(-1.0, 1.0, INTRINSIC_DIM))
        return params.replace(intrinsic=intr)
    value = float(rng.uniform(*FACTOR_RANGES[factor]))
    return params.replace(**{factor: value})


def make_batch(
    rng: np.random.Generator,
    active_factor: str,
    batch_size: int = 20,
    resolution: int = 32,
    kind: str = "head",
) -> TransformBatch:
    """Draw inactive factors once, the active factor per example, and render."""
    if batch_size < 2:
        raise ContractError(f"batch_size must be >= 2, got {batch_size}")
    if active_factor not in FACTOR_RANGES and active_factor != "intrinsic":
        raise ContractError(f"unknown factor {active_factor!r}")
    base = _draw_params(rng, kind)
    params = [_redraw_factor(rng, base, active_factor) for _ in range(batch_size)]
    images = np.stack([render(p, resolution) for p in params])
    batch = TransformBatch(images=images, params=params, active_factor=active_factor)
    batch.validate()
    return batch


def make_sweep(base: SceneParams, factor: str, values: np.ndarray) -> list[SceneParams]:
    """The same scene with one extrinsic factor set to each value in turn."""
    if factor not in FACTOR_RANGES:
        raise ContractError(f"can only sweep extrinsic factors, not {factor!r}")
    return [base.replace(**{factor: float(v)}) for v in values]
