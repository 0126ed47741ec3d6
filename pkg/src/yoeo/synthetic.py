"""Procedural articulated scenes with full ground truth.

Objects are boxes: a body plus drawer/hinge-lid/hinge-handle parts
attached to its faces. Drawers slide out of the +x face; hinged parts
sit on the +z face and pivot about their +x bottom edge. Points are
area-weighted surface samples; every part point carries its canonical
coordinate, and every instance stores the canonical->camera similarity
transform, metric size, and camera-frame joint axis.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSpec
from .geometry import Sim3Transform, rotation_about_axis
from .npcs import JointAxis, canonicalize_part, transform_axis
from .parts import (
    ARTICULATION_LIMITS,
    KIND_TO_CLASS,
    joint_axis_in_part_frame,
)

SCENE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PartSpec:
    kind: str
    extents: np.ndarray
    joint: JointAxis  # in the body frame
    articulation_value: float
    attach_pose: Sim3Transform  # part rest frame in the body frame

    def __post_init__(self):
        object.__setattr__(
            self, "extents", np.asarray(self.extents, dtype=np.float64).reshape(3)
        )


@dataclass(frozen=True)
class ArticulatedObjectSpec:
    body_extents: np.ndarray
    parts: tuple[PartSpec, ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "body_extents",
            np.asarray(self.body_extents, dtype=np.float64).reshape(3),
        )

    def validate(self) -> None:
        if (self.body_extents <= 0).any():
            raise DegenerateSpec("body extents must be positive")
        boxes = []
        for part in self.parts:
            if part.kind not in KIND_TO_CLASS:
                raise DegenerateSpec(f"unknown part kind {part.kind!r}")
            if (part.extents <= 0).any():
                raise DegenerateSpec("part extents must be positive")
            lo, hi = ARTICULATION_LIMITS[part.kind]
            if not lo <= part.articulation_value <= hi:
                raise DegenerateSpec(
                    f"{part.kind} articulation {part.articulation_value} "
                    f"outside [{lo}, {hi}]"
                )
            center = part.attach_pose.translation
            boxes.append((center - part.extents / 2, center + part.extents / 2))
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if _aabbs_overlap(boxes[i], boxes[j]):
                    raise DegenerateSpec(f"parts {i} and {j} overlap at rest")


def _aabbs_overlap(a, b) -> bool:
    return bool((a[0] < b[1]).all() and (b[0] < a[1]).all())


@dataclass(frozen=True)
class GenConfig:
    rng_seed: int = 0
    objects_per_scene: int = 1
    points_per_scene: int = 4096
    drawer_count: tuple[int, int] = (0, 2)
    lid_count: tuple[int, int] = (0, 1)
    handle_count: tuple[int, int] = (0, 2)
    body_extents_range: tuple[float, float] = (0.25, 0.55)
    drawer_extents: tuple = ((0.06, 0.12), (0.12, 0.22), (0.08, 0.16))
    lid_extents: tuple = ((0.12, 0.3), (0.12, 0.3), (0.015, 0.03))
    handle_extents: tuple = ((0.07, 0.14), (0.025, 0.05), (0.02, 0.04))
    camera_distance_range: tuple[float, float] = (1.2, 2.0)
    camera_elevation_range_deg: tuple[float, float] = (15.0, 60.0)
    camera_azimuth_range_deg: tuple[float, float] = (0.0, 360.0)
    partial_view: bool = False
    view_grid: tuple[int, int] = (160, 120)
    min_part_points: int = 64
    # Articulation can swing a hinged part's centroid by ~9 cm, so keep
    # same-class placements far enough apart for bandwidth-0.05 clustering.
    same_class_face_separation: float = 0.16

    def __post_init__(self):
        if self.points_per_scene < 512:
            raise ValueError("points_per_scene must be >= 512")
        if self.objects_per_scene < 1:
            raise ValueError("objects_per_scene must be >= 1")


@dataclass(frozen=True)
class InstanceRecord:
    semantic_class: int
    pose: Sim3Transform  # canonical unit cube -> camera frame
    size: np.ndarray
    axis: JointAxis  # camera frame


@dataclass(frozen=True)
class Scene:
    points: np.ndarray
    gt_semantic: np.ndarray
    gt_instance: np.ndarray
    gt_npcs: np.ndarray  # NaN rows for background points
    instances: tuple[InstanceRecord, ...]
    camera_pose: Sim3Transform  # camera frame -> world frame


def _sample_face_positions(rng, face_extent, part_extent, margin=0.01):
    half = face_extent / 2 - part_extent / 2 - margin
    if half <= 0:
        return None
    return rng.uniform(-half, half)


def _try_place(rng, body, kind, extents, placed, min_sep_centers):
    """Rest-frame center for a part on its face, avoiding earlier parts."""
    bx, by, bz = body
    gap = 0.002
    for _ in range(40):
        if kind == "drawer":
            y = _sample_face_positions(rng, by, extents[1])
            z = _sample_face_positions(rng, bz, extents[2])
            if y is None or z is None:
                return None
            center = np.array([bx / 2 + gap + extents[0] / 2, y, z])
            face_key = ("x+", np.array([y, z]))
        else:
            x = _sample_face_positions(rng, bx, extents[0])
            y = _sample_face_positions(rng, by, extents[1])
            if x is None or y is None:
                return None
            center = np.array([x, y, bz / 2 + gap + extents[2] / 2])
            face_key = ("z+", np.array([x, y]))

        lo, hi = center - extents / 2, center + extents / 2
        if any(_aabbs_overlap((lo, hi), b) for b in placed["boxes"]):
            continue
        close = False
        for other_kind, other_face, other_pos in placed["faces"]:
            if other_kind == kind and other_face == face_key[0]:
                if np.linalg.norm(other_pos - face_key[1]) < min_sep_centers:
                    close = True
                    break
        if close:
            continue
        placed["boxes"].append((lo, hi))
        placed["faces"].append((kind, face_key[0], face_key[1]))
        return center
    return None


def generate_object(seed: int, cfg: GenConfig = GenConfig()) -> ArticulatedObjectSpec:
    """Deterministic random object spec; resamples placements on overlap
    (bounded retries) and drops parts that cannot be placed."""
    rng = np.random.default_rng(seed)
    body = rng.uniform(*cfg.body_extents_range, size=3)

    kind_table = (
        ("drawer", cfg.drawer_count, cfg.drawer_extents),
        ("hinge_lid", cfg.lid_count, cfg.lid_extents),
        ("hinge_handle", cfg.handle_count, cfg.handle_extents),
    )
    max_possible = cfg.drawer_count[1] + cfg.lid_count[1] + cfg.handle_count[1]

    parts = []
    for _ in range(16):  # placement-failure retries
        kinds = []
        for kind, count_range, ext_range in kind_table:
            count = int(rng.integers(count_range[0], count_range[1] + 1))
            kinds.extend((kind, ext_range) for _ in range(count))
        if not kinds and max_possible > 0:
            continue

        placed = {"boxes": [], "faces": []}
        parts = []
        for kind, ext_range in kinds:
            extents = np.array([rng.uniform(*r) for r in ext_range])
            center = _try_place(
                rng, body, kind, extents, placed, cfg.same_class_face_separation
            )
            if center is None:
                continue
            attach = Sim3Transform(1.0, np.eye(3), center)
            part_axis = joint_axis_in_part_frame(kind, extents)
            joint = transform_axis(part_axis, attach)
            lo, hi = ARTICULATION_LIMITS[kind]
            articulation = float(
                rng.uniform(lo + 0.15 * (hi - lo), lo + 0.85 * (hi - lo))
            )
            parts.append(PartSpec(kind, extents, joint, articulation, attach))
        if parts or max_possible == 0:
            break

    spec = ArticulatedObjectSpec(body, tuple(parts))
    spec.validate()
    return spec


def articulated_part_pose(part: PartSpec, articulation: float | None = None) -> Sim3Transform:
    """Part rest frame -> body frame after applying the articulation."""
    value = part.articulation_value if articulation is None else articulation
    if part.kind == "drawer":
        shift = value * part.joint.direction
        return Sim3Transform(
            1.0, part.attach_pose.rotation, part.attach_pose.translation + shift
        )
    rotation = rotation_about_axis(part.joint.direction, value)
    origin = part.joint.origin
    about_axis = Sim3Transform(1.0, rotation, origin - rotation @ origin)
    return about_axis.compose(part.attach_pose)


def _box_face_samples(rng, extents, count):
    """Area-weighted stratified surface samples of a centered box."""
    ex, ey, ez = extents
    # (fixed axis, sign, u axis, v axis, u extent, v extent)
    faces = [
        (0, 1, 1, 2, ey, ez), (0, -1, 1, 2, ey, ez),
        (1, 1, 0, 2, ex, ez), (1, -1, 0, 2, ex, ez),
        (2, 1, 0, 1, ex, ey), (2, -1, 0, 1, ex, ey),
    ]
    areas = np.array([f[4] * f[5] for f in faces], dtype=np.float64)
    alloc = _largest_remainder(areas / areas.sum() * count)

    pts = []
    half = np.asarray(extents) / 2
    for (axis, sign, ua, va, ue, ve), n_face in zip(faces, alloc):
        if n_face == 0:
            continue
        grid_u = max(1, int(round(np.sqrt(n_face * ue / max(ve, 1e-9)))))
        grid_v = int(np.ceil(n_face / grid_u))
        cells = np.stack(
            np.meshgrid(np.arange(grid_u), np.arange(grid_v), indexing="ij"), axis=-1
        ).reshape(-1, 2)
        cells = cells[rng.permutation(len(cells))[:n_face]]
        jitter = rng.uniform(size=(n_face, 2))
        uv = (cells + jitter) / [grid_u, grid_v] * [ue, ve] - [ue / 2, ve / 2]
        face_pts = np.zeros((n_face, 3))
        face_pts[:, axis] = sign * half[axis]
        face_pts[:, ua] = uv[:, 0]
        face_pts[:, va] = uv[:, 1]
        pts.append(face_pts)
    return np.vstack(pts)


def _largest_remainder(quota: np.ndarray) -> np.ndarray:
    base = np.floor(quota).astype(int)
    short = int(round(quota.sum())) - base.sum()
    order = np.argsort(-(quota - base), kind="stable")
    base[order[:short]] += 1
    return base


def _camera_pose(rng, cfg: GenConfig) -> Sim3Transform:
    """Camera -> world; camera looks at the origin along its +z axis."""
    distance = rng.uniform(*cfg.camera_distance_range)
    elevation = np.deg2rad(rng.uniform(*cfg.camera_elevation_range_deg))
    azimuth = np.deg2rad(rng.uniform(*cfg.camera_azimuth_range_deg))
    position = distance * np.array(
        [
            np.cos(elevation) * np.cos(azimuth),
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
        ]
    )
    forward = -position / np.linalg.norm(position)
    up_hint = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up_hint)
    if np.linalg.norm(right) < 1e-9:
        right = np.array([1.0, 0.0, 0.0])
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=1)  # columns = camera axes
    return Sim3Transform(1.0, rotation, position)


def _partial_view_mask(points_cam: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Keep the nearest point per angular grid cell (z-buffer culling)."""
    x, y, z = points_cam[:, 0], points_cam[:, 1], points_cam[:, 2]
    azimuth = np.arctan2(x, z)
    elevation = np.arctan2(y, np.hypot(x, z))
    dist = np.linalg.norm(points_cam, axis=1)

    def bins(values, n):
        lo, hi = values.min(), values.max()
        span = max(hi - lo, 1e-9)
        return np.minimum((values - lo) / span * n, n - 1).astype(np.int64)

    cell = bins(azimuth, grid[0]) * grid[1] + bins(elevation, grid[1])
    order = np.lexsort((np.arange(len(cell)), dist, cell))
    sorted_cells = cell[order]
    first = np.ones(len(cell), dtype=bool)
    first[1:] = sorted_cells[1:] != sorted_cells[:-1]
    keep = np.zeros(len(cell), dtype=bool)
    keep[order[first]] = True
    return keep


def render_scene(spec: ArticulatedObjectSpec, cfg: GenConfig) -> Scene:
    """Sample, pose, and label surface points for one or more objects.

    Point allocation is area-weighted across all boxes with a floor of
    `min_part_points` per part so clustering stays viable on small
    handles. Objects beyond the first are spaced out along world x.
    """
    spec.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    camera = _camera_pose(rng, cfg)
    camera_inv = camera.inverse()

    specs = [spec]
    if cfg.objects_per_scene > 1:
        specs = [spec] + [
            generate_object(int(rng.integers(0, 2**63 - 1)), cfg)
            for _ in range(cfg.objects_per_scene - 1)
        ]
    spacing = 1.5 * max(np.linalg.norm(s.body_extents) for s in specs)

    boxes = []  # (extents, world pose, semantic class, instance id or -1, kind)
    next_instance = 0
    for obj_idx, obj in enumerate(specs):
        offset = np.array([obj_idx * spacing, 0.0, 0.0])
        body_pose = Sim3Transform(1.0, np.eye(3), offset)
        boxes.append((obj.body_extents, body_pose, 0, -1, None))
        for part in obj.parts:
            world = body_pose.compose(articulated_part_pose(part))
            boxes.append((part.extents, world, KIND_TO_CLASS[part.kind], next_instance, part))
            next_instance += 1

    areas = np.array(
        [2 * (e[0] * e[1] + e[0] * e[2] + e[1] * e[2]) for e, *_ in boxes]
    )
    alloc = _largest_remainder(areas / areas.sum() * cfg.points_per_scene)
    floors = np.zeros(len(boxes), dtype=int)
    for i, b in enumerate(boxes):
        if b[3] >= 0:
            floors[i] = max(cfg.min_part_points, 4)
    alloc = np.maximum(alloc, floors)
    excess = alloc.sum() - cfg.points_per_scene
    while excess > 0:
        slack = alloc - floors
        i = int(np.argmax(slack))
        if slack[i] <= 0:
            raise DegenerateSpec("point budget too small for the part floors")
        take = min(excess, slack[i])
        alloc[i] -= take
        excess -= take

    all_points, all_sem, all_inst, all_npcs = [], [], [], []
    instances = []
    for (extents, world_pose, sem, inst_id, part), n_box in zip(boxes, alloc):
        cam_pose = camera_inv.compose(world_pose)
        if inst_id >= 0:
            diagonal = float(np.linalg.norm(extents))
            pose = Sim3Transform(
                diagonal,
                cam_pose.rotation,
                cam_pose.translation
                - diagonal * cam_pose.rotation @ np.full(3, 0.5),
            )
            axis_part = joint_axis_in_part_frame(part.kind, extents)
            axis_canon = JointAxis(
                axis_part.origin / diagonal + 0.5,
                axis_part.direction,
                axis_part.kind,
            )
            instances.append(
                InstanceRecord(sem, pose, extents.copy(), transform_axis(axis_canon, pose))
            )
        if n_box == 0:
            continue
        local = _box_face_samples(rng, extents, int(n_box))
        points_cam = cam_pose.apply(local)
        all_points.append(points_cam)
        all_sem.append(np.full(len(local), sem, dtype=np.int64))
        all_inst.append(np.full(len(local), inst_id, dtype=np.int64))
        if inst_id >= 0:
            npcs, _ = canonicalize_part(points_cam, cam_pose, extents)
            all_npcs.append(npcs)
        else:
            all_npcs.append(np.full((len(local), 3), np.nan))

    points = np.vstack(all_points)
    scene = Scene(
        points=points,
        gt_semantic=np.concatenate(all_sem),
        gt_instance=np.concatenate(all_inst),
        gt_npcs=np.vstack(all_npcs),
        instances=tuple(instances),
        camera_pose=camera,
    )
    if cfg.partial_view:
        keep = _partial_view_mask(points, cfg.view_grid)
        scene = dataclasses.replace(
            scene,
            points=scene.points[keep],
            gt_semantic=scene.gt_semantic[keep],
            gt_instance=scene.gt_instance[keep],
            gt_npcs=scene.gt_npcs[keep],
        )

    _check_npcs_roundtrip(scene)
    return scene


def _check_npcs_roundtrip(scene: Scene) -> None:
    for idx, record in enumerate(scene.instances):
        mask = scene.gt_instance == idx
        if not mask.any():
            continue
        rebuilt = record.pose.apply(scene.gt_npcs[mask])
        err = np.abs(rebuilt - scene.points[mask]).max()
        if err > 1e-6:
            raise DegenerateSpec(f"instance {idx} npcs roundtrip error {err:.2e}")


def gt_offsets(scene: Scene) -> np.ndarray:
    """Per-point offset to its instance centroid; zero for background."""
    offsets = np.zeros_like(scene.points)
    for idx in range(len(scene.instances)):
        mask = scene.gt_instance == idx
        if mask.any():
            offsets[mask] = scene.points[mask].mean(axis=0) - scene.points[mask]
    return offsets


def scene_to_dict(scene: Scene) -> dict:
    def vec(a):
        return np.asarray(a, dtype=np.float64).reshape(-1).tolist()

    return {
        "version": SCENE_SCHEMA_VERSION,
        "points": scene.points.tolist(),
        "gt_semantic": scene.gt_semantic.tolist(),
        "gt_instance": scene.gt_instance.tolist(),
        "gt_npcs": [
            None if np.isnan(row).any() else row.tolist() for row in scene.gt_npcs
        ],
        "instances": [
            {
                "class": record.semantic_class,
                "pose": {
                    "s": record.pose.scale,
                    "R": vec(record.pose.rotation),
                    "t": vec(record.pose.translation),
                },
                "size": vec(record.size),
                "axis": {
                    "origin": vec(record.axis.origin),
                    "dir": vec(record.axis.direction),
                    "kind": record.axis.kind,
                },
            }
            for record in scene.instances
        ],
        "camera_pose": {
            "R": vec(scene.camera_pose.rotation),
            "t": vec(scene.camera_pose.translation),
        },
    }


def scene_from_dict(data: dict) -> Scene:
    if data.get("version") != SCENE_SCHEMA_VERSION:
        raise ValueError(f"unsupported scene version {data.get('version')}")
    npcs = np.array(
        [[np.nan] * 3 if row is None else row for row in data["gt_npcs"]],
        dtype=np.float64,
    ).reshape(-1, 3)
    instances = tuple(
        InstanceRecord(
            semantic_class=int(item["class"]),
            pose=Sim3Transform(
                item["pose"]["s"],
                np.array(item["pose"]["R"]).reshape(3, 3),
                np.array(item["pose"]["t"]),
            ),
            size=np.array(item["size"]),
            axis=JointAxis(
                np.array(item["axis"]["origin"]),
                np.array(item["axis"]["dir"]),
                item["axis"]["kind"],
            ),
        )
        for item in data["instances"]
    )
    return Scene(
        points=np.array(data["points"], dtype=np.float64).reshape(-1, 3),
        gt_semantic=np.array(data["gt_semantic"], dtype=np.int64),
        gt_instance=np.array(data["gt_instance"], dtype=np.int64),
        gt_npcs=npcs,
        instances=instances,
        camera_pose=Sim3Transform(
            1.0,
            np.array(data["camera_pose"]["R"]).reshape(3, 3),
            np.array(data["camera_pose"]["t"]),
        ),
    )


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh)


def load_scene(path) -> Scene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


def export_ply(scene: Scene, path) -> None:
    """ASCII PLY with xyz and the semantic label per vertex."""
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(scene.points)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write("property int label\nend_header\n")
        for p, label in zip(scene.points, scene.gt_semantic):
            fh.write(f"{p[0]} {p[1]} {p[2]} {label}\n")
