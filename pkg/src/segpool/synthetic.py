"""Synthetic LiDAR sequences: primitive objects on a ground plane seen from a route.

World objects (boxes, cylinders, ellipsoids) are placed once per ``(spec, seed)``
in a band alongside the route. Each frame re-samples the sensor-facing part of
every object within ``render_range`` plus a ground disk, so repeated visits see
the same world objects from a different pose. Points carry object labels
(``-1`` ground, ``-2`` transient clutter) for the accuracy checks.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .errors import ParameterError
from .ingest import PointCloudFrame, Pose, Sequence

GROUND_LABEL = -1
TRANSIENT_LABEL = -2

PRIMITIVES = ("box", "cylinder", "ellipsoid")


@dataclass
class SceneSpec:
    """Scene parameters for :func:`generate_synthetic_sequence`.

    Distances are meters, times seconds. ``shape_templates = 0`` gives every
    object its own dimensions; a positive value draws objects from that many
    shared shapes (perturbed by ``shape_jitter``), so places differ mainly by
    arrangement.
    """

    waypoints: list = field(default_factory=lambda: [[0.0, 0.0]])
    num_frames: int = 10
    frame_period: float = 1.0
    objects_per_scene: int = 10
    primitives: list = field(default_factory=lambda: list(PRIMITIVES))
    shape_templates: int = 0
    shape_jitter: float = 0.05
    noise: float = 0.0
    render_range: float = 20.0
    lateral_range: list = field(default_factory=lambda: [4.0, 12.0])
    min_gap: float = 2.5
    object_clearance: float = 0.5
    sensor_height: float = 1.8
    ground_points: int = 40000
    surface_density: float = 250.0
    max_object_points: int = 8000
    transient_objects: int = 0
    self_occlusion: bool = True
    shadowing: bool = True
    shadow_resolution_deg: float = 1.0
    shadow_margin: float = 0.5

    def __post_init__(self):
        self.waypoints = [[float(v) for v in wp] for wp in self.waypoints]
        self.primitives = list(self.primitives)
        self.lateral_range = [float(v) for v in self.lateral_range]

    def validate(self) -> None:
        if not self.waypoints:
            raise ParameterError("trajectory needs at least one waypoint")
        if any(len(wp) != 2 for wp in self.waypoints):
            raise ParameterError("waypoints are (x, y) pairs")
        if self.num_frames < 1:
            raise ParameterError("num_frames must be >= 1")
        if self.frame_period <= 0:
            raise ParameterError("frame_period must be positive")
        if self.objects_per_scene < 0 or self.transient_objects < 0:
            raise ParameterError("object counts must be non-negative")
        bad = set(self.primitives) - set(PRIMITIVES)
        if bad or not self.primitives:
            raise ParameterError(f"unknown primitives {sorted(bad)}; choose from {PRIMITIVES}")
        lo, hi = self.lateral_range
        if not 0 <= lo < hi:
            raise ParameterError("lateral_range must satisfy 0 <= min < max")
        if self.noise < 0:
            raise ParameterError("noise must be non-negative")
        if self.surface_density <= 0 or self.max_object_points < 1:
            raise ParameterError("surface_density and max_object_points must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**data)

    def save(self, path) -> None:
        path = Path(path)
        text = json.dumps(self.to_dict(), indent=2) if path.suffix == ".json" else yaml.safe_dump(self.to_dict())
        path.write_text(text)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


@dataclass
class WorldObject:
    id: int
    primitive: str
    center: np.ndarray  # world coordinates of the primitive's center
    dims: np.ndarray  # box: full w, l, h; cylinder: r, r, h; ellipsoid: semi-axes a, b, c
    yaw: float

    def area(self) -> float:
        a, b, c = self.dims
        if self.primitive == "box":
            return 2 * (a * b + a * c + b * c)
        if self.primitive == "cylinder":
            return 2 * np.pi * a * c + 2 * np.pi * a * a
        p = 1.6075
        return 4 * np.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3) ** (1 / p)


@dataclass
class SyntheticWorld:
    spec: SceneSpec
    objects: list
    positions: np.ndarray  # (n_frames, 2) route samples
    yaws: np.ndarray


# ----------------------------------------------------------------------------
# trajectory and world layout


def _route(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    wps = np.asarray(spec.waypoints, dtype=np.float64)
    n = spec.num_frames
    if len(wps) == 1:
        return np.repeat(wps, n, axis=0), np.zeros(n)
    seg = np.diff(wps, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    if total == 0:
        return np.repeat(wps[:1], n, axis=0), np.zeros(n)
    s = np.linspace(0.0, total, n) if n > 1 else np.zeros(1)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    # skip zero-length segments when picking headings
    nonzero = np.flatnonzero(seg_len > 0)
    idx = nonzero[np.clip(np.searchsorted(nonzero, idx), 0, len(nonzero) - 1)]
    frac = (s - cum[idx]) / seg_len[idx]
    pos = wps[idx] + frac[:, None] * seg[idx]
    yaw = np.arctan2(seg[idx, 1], seg[idx, 0])
    return pos, yaw


def _dist_to_polyline(pts: np.ndarray, wps: np.ndarray) -> np.ndarray:
    if len(wps) == 1:
        return np.linalg.norm(pts - wps[0], axis=1)
    best = np.full(len(pts), np.inf)
    for a, b in zip(wps[:-1], wps[1:]):
        ab = b - a
        denom = ab @ ab
        t = np.zeros(len(pts)) if denom == 0 else np.clip((pts - a) @ ab / denom, 0.0, 1.0)
        d = np.linalg.norm(pts - (a + t[:, None] * ab), axis=1)
        best = np.minimum(best, d)
    return best


def _random_shape(rng: np.random.Generator, primitive: str) -> np.ndarray:
    if primitive == "box":
        return np.array([rng.uniform(0.6, 3.0), rng.uniform(0.6, 3.0), rng.uniform(0.8, 3.0)])
    if primitive == "cylinder":
        r = rng.uniform(0.2, 0.8)
        return np.array([r, r, rng.uniform(1.5, 4.0)])
    return np.array([rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5), rng.uniform(0.4, 1.2)])


def _object_height(primitive: str, dims: np.ndarray) -> float:
    return dims[2] if primitive != "ellipsoid" else 2 * dims[2]


def _place_objects(spec: SceneSpec, rng: np.random.Generator) -> list:
    wps = np.asarray(spec.waypoints, dtype=np.float64)
    lo, hi = spec.lateral_range
    if spec.shape_templates > 0:
        templates = []
        for _ in range(spec.shape_templates):
            prim = spec.primitives[rng.integers(len(spec.primitives))]
            templates.append((prim, _random_shape(rng, prim)))

    def make_shape():
        if spec.shape_templates > 0:
            prim, dims = templates[rng.integers(len(templates))]
            dims = dims * (1 + rng.uniform(-spec.shape_jitter, spec.shape_jitter, 3))
            if prim == "cylinder":
                dims[1] = dims[0]
            return prim, dims
        prim = spec.primitives[rng.integers(len(spec.primitives))]
        return prim, _random_shape(rng, prim)

    stationary = len(wps) == 1 or np.all(np.linalg.norm(np.diff(wps, axis=0), axis=1) == 0)
    if stationary:
        target = spec.objects_per_scene
        budget = 1000 * max(target, 1)
        xmin, ymin = wps[0] - hi
        xmax, ymax = wps[0] + hi
    else:
        # density chosen so roughly objects_per_scene lie within render range
        density = spec.objects_per_scene / (4.0 * spec.render_range * (hi - lo))
        xmin, ymin = wps.min(axis=0) - hi
        xmax, ymax = wps.max(axis=0) + hi
        budget = int(round(density * (xmax - xmin) * (ymax - ymin)))
        target = None

    centers, shapes = [], []
    attempts = 0
    while attempts < budget and (target is None or len(centers) < target):
        attempts += 1
        cand = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        d = _dist_to_polyline(cand[None], wps)[0]
        if not lo <= d <= hi:
            continue
        prim, dims = make_shape()
        radius = 0.5 * np.hypot(dims[0], dims[1]) if prim == "box" else max(dims[0], dims[1])
        if d - radius < 1.0:
            continue  # keep the road clear
        if any(np.linalg.norm(cand - c) < radius + r + spec.min_gap for c, r in zip(centers, [s[2] for s in shapes])):
            continue
        centers.append(cand)
        shapes.append((prim, dims, radius))
    if target is not None and len(centers) < target:
        raise ParameterError(f"could only place {len(centers)} of {target} objects; widen lateral_range")

    objects = []
    for i, (c, (prim, dims, _)) in enumerate(zip(centers, shapes)):
        zc = spec.object_clearance + 0.5 * _object_height(prim, dims)
        objects.append(WorldObject(i, prim, np.array([c[0], c[1], zc]), dims, rng.uniform(-np.pi, np.pi)))
    return objects


def build_world(spec: SceneSpec, seed: int) -> SyntheticWorld:
    spec.validate()
    rng = np.random.default_rng([seed, 0])
    positions, yaws = _route(spec)
    objects = _place_objects(spec, rng)
    return SyntheticWorld(spec, objects, positions, yaws)


# ----------------------------------------------------------------------------
# surface sampling


def _sample_surface(obj: WorldObject, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform samples (and outward normals) in the object's local frame."""
    a, b, c = obj.dims
    if obj.primitive == "box":
        half = np.array([a, b, c]) / 2
        areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        uv = rng.uniform(-1, 1, size=(n, 3)) * half
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        uv[np.arange(n), axis] = sign * half[axis]
        normals = np.zeros((n, 3))
        normals[np.arange(n), axis] = sign
        return uv, normals
    if obj.primitive == "cylinder":
        r, h = a, c
        side, cap = 2 * np.pi * r * h, np.pi * r * r
        part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
        theta = rng.uniform(0, 2 * np.pi, n)
        pts = np.empty((n, 3))
        normals = np.zeros((n, 3))
        s = part == 0
        pts[s] = np.column_stack([r * np.cos(theta[s]), r * np.sin(theta[s]), rng.uniform(-h / 2, h / 2, s.sum())])
        normals[s] = np.column_stack([np.cos(theta[s]), np.sin(theta[s]), np.zeros(s.sum())])
        for k, zsign in ((1, 1.0), (2, -1.0)):
            m = part == k
            rad = r * np.sqrt(rng.uniform(0, 1, m.sum()))
            pts[m] = np.column_stack([rad * np.cos(theta[m]), rad * np.sin(theta[m]), np.full(m.sum(), zsign * h / 2)])
            normals[m, 2] = zsign
        return pts, normals
    # ellipsoid: rejection on the sphere parametrisation for area uniformity
    axes = np.array([a, b, c])
    out = []
    need = n
    while need > 0:
        u = rng.normal(size=(2 * need + 8, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        grad = np.linalg.norm(u / axes, axis=1)
        keep = rng.uniform(0, grad.max(), len(u)) < grad
        out.append(u[keep][:need])
        need -= len(out[-1])
    u = np.concatenate(out)
    pts = u * axes
    normals = pts / axes**2
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return pts, normals


def _render_object(obj: WorldObject, sensor: np.ndarray, spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Scanner-like sampling: density falls with range squared, back faces culled."""
    r = max(np.linalg.norm(obj.center[:2] - sensor[:2]), 3.0)
    n = int(min(spec.surface_density * obj.area() * (10.0 / r) ** 2, spec.max_object_points))
    c, s = np.cos(obj.yaw), np.sin(obj.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    local, normals = _sample_surface(obj, n, rng)
    world = local @ rot.T + obj.center
    if not spec.self_occlusion:
        return world
    facing = np.einsum("ij,ij->i", normals @ rot.T, sensor - world) > 0
    return world[facing]


def _visible(local: np.ndarray, resolution_deg: float, margin: float) -> np.ndarray:
    """Range-image z-buffer: keep points within ``margin`` of the nearest return in their cell."""
    rng_ = np.linalg.norm(local, axis=1)
    az = np.degrees(np.arctan2(local[:, 1], local[:, 0]))
    el = np.degrees(np.arctan2(local[:, 2], np.hypot(local[:, 0], local[:, 1])))
    cells = np.floor(az / resolution_deg).astype(np.int64) * 100_000 + np.floor(el / resolution_deg).astype(np.int64)
    _, inv = np.unique(cells, return_inverse=True)
    nearest = np.full(inv.max() + 1, np.inf)
    np.minimum.at(nearest, inv, rng_)
    return rng_ <= nearest[inv] + margin


def render_frame(world: SyntheticWorld, k: int, seed: int) -> PointCloudFrame:
    spec = world.spec
    rng = np.random.default_rng([seed, 1, k])
    xy = world.positions[k]
    pose = Pose.from_yaw(world.yaws[k], (xy[0], xy[1], spec.sensor_height))
    sensor = pose.translation

    pts_world, labels = [], []
    for obj in world.objects:
        r = np.linalg.norm(obj.center[:2] - xy)
        if r > spec.render_range:
            continue
        p = _render_object(obj, sensor, spec, rng)
        pts_world.append(p)
        labels.append(np.full(len(p), obj.id))

    for _ in range(spec.transient_objects):
        prim = spec.primitives[rng.integers(len(spec.primitives))]
        ang = rng.uniform(-np.pi, np.pi)
        rad = rng.uniform(spec.lateral_range[0], spec.render_range)
        dims = _random_shape(rng, prim) * 0.6
        center = np.array([xy[0] + rad * np.cos(ang), xy[1] + rad * np.sin(ang),
                           spec.object_clearance + 0.5 * _object_height(prim, dims)])
        tmp = WorldObject(-1, prim, center, dims, rng.uniform(-np.pi, np.pi))
        p = _render_object(tmp, sensor, spec, rng)
        pts_world.append(p)
        labels.append(np.full(len(p), TRANSIENT_LABEL))

    if spec.ground_points > 0:
        rad = spec.render_range * np.sqrt(rng.uniform(0, 1, spec.ground_points))
        ang = rng.uniform(-np.pi, np.pi, spec.ground_points)
        g = np.column_stack([xy[0] + rad * np.cos(ang), xy[1] + rad * np.sin(ang), np.zeros(spec.ground_points)])
        pts_world.append(g)
        labels.append(np.full(len(g), GROUND_LABEL))

    pts = np.concatenate(pts_world) if pts_world else np.zeros((0, 3))
    lab = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)
    local = pose.inverse().apply(pts)
    if spec.shadowing and len(local):
        keep = _visible(local, spec.shadow_resolution_deg, spec.shadow_margin)
        local, lab = local[keep], lab[keep]
    if spec.noise > 0:
        local = local + rng.normal(scale=spec.noise, size=local.shape)
    return PointCloudFrame(points=local, timestamp=k * spec.frame_period, frame_index=k,
                           labels=lab.astype(np.int64))


def generate_synthetic_sequence(spec: SceneSpec, seed: int = 0, world: Optional[SyntheticWorld] = None) -> Sequence:
    """Render every frame of ``spec``; a pure function of ``(spec, seed)``."""
    if world is None:
        world = build_world(spec, seed)
    frames = [render_frame(world, k, seed) for k in range(spec.num_frames)]
    poses = [Pose.from_yaw(world.yaws[k], (*world.positions[k], spec.sensor_height)) for k in range(spec.num_frames)]
    return Sequence(frames, poses)


# ----------------------------------------------------------------------------
# stock scenes


def looped_benchmark_spec(num_frames: int = 200) -> SceneSpec:
    """Rectangular loop driven once, then partly again one lane over.

    About a quarter of the frames revisit earlier places. Objects come from a
    small shared shape vocabulary so places are told apart by layout as much
    as by content.
    """
    return SceneSpec(
        waypoints=[[0, 0], [120, 0], [120, 60], [0, 60], [0, 1.5], [110, 1.5]],
        num_frames=num_frames,
        frame_period=1.0,
        objects_per_scene=14,
        shape_templates=8,
        shape_jitter=0.05,
        noise=0.02,
        render_range=20.0,
        lateral_range=[4.0, 14.0],
    )


def moving_sensor_spec(num_frames: int = 100, objects_per_scene: int = 20) -> SceneSpec:
    return SceneSpec(
        waypoints=[[0, 0], [150, 0]],
        num_frames=num_frames,
        frame_period=1.0,
        objects_per_scene=objects_per_scene,
        noise=0.02,
        render_range=20.0,
        lateral_range=[4.0, 16.0],
    )
