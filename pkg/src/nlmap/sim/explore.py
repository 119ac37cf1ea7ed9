"""Waypoint exploration: noisy multi-view region proposals from a synthetic scene."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..embedding import MockVLM
from ..errors import InvalidArgumentError
from ..scene import Frame, Intrinsics, Pose, RegionProposal
from ..core import EmbeddingVector
from .scene import DISTRACTOR_LABELS, SyntheticScene

IMAGE_W, IMAGE_H = 640, 512
CAMERA_HEIGHT = 1.0
DEPTH_PATCH = 9


@dataclass(frozen=True)
class NoiseSpec:
    position_sigma: float = 0.05
    radius_sigma: float = 0.01
    detect_prob: float = 0.8
    false_positive_rate: float = 0.5
    embedding_noise: float | None = None  # overrides the mock's noise_sigma when set
    depth_outlier_rate: float = 0.15  # chance the depth patch hits the background behind an object
    depth_outlier_range: tuple[float, float] = (0.5, 1.5)

    def __post_init__(self):
        if not 0.0 <= self.detect_prob <= 1.0:
            raise InvalidArgumentError("detect_prob must be in [0, 1]")
        if self.position_sigma < 0 or self.radius_sigma < 0 or self.false_positive_rate < 0:
            raise InvalidArgumentError("noise magnitudes must be >= 0")
        if self.embedding_noise is not None and self.embedding_noise < 0:
            raise InvalidArgumentError("embedding_noise must be >= 0")
        if not 0.0 <= self.depth_outlier_rate <= 1.0:
            raise InvalidArgumentError("depth_outlier_rate must be in [0, 1]")
        lo, hi = self.depth_outlier_range
        if not 0 <= lo <= hi:
            raise InvalidArgumentError("depth_outlier_range must be 0 <= lo <= hi")
        object.__setattr__(self, "depth_outlier_range", (float(lo), float(hi)))

    @classmethod
    def noiseless(cls) -> "NoiseSpec":
        return cls(0.0, 0.0, 1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_dict(cls, d) -> "NoiseSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown noise keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["depth_outlier_range"] = list(self.depth_outlier_range)
        return d


@dataclass(frozen=True)
class CameraModel:
    hfov_deg: float = 90.0
    max_range: float = 4.0
    width: int = IMAGE_W
    height: int = IMAGE_H

    @property
    def intrinsics(self) -> Intrinsics:
        f = (self.width / 2.0) / math.tan(math.radians(self.hfov_deg) / 2.0)
        return Intrinsics(f, f, self.width / 2.0, self.height / 2.0, self.width, self.height)


def camera_pose(x: float, y: float, yaw: float, height: float = CAMERA_HEIGHT) -> Pose:
    """Level camera at (x, y, height) looking along ``yaw`` (radians from +x)."""
    c, s = math.cos(yaw), math.sin(yaw)
    right = (s, -c, 0.0)
    down = (0.0, 0.0, -1.0)
    forward = (c, s, 0.0)
    rot = np.array([right, down, forward]).T
    return Pose(rot, (x, y, height))


def default_waypoints(bounds: Sequence[float], n: int = 8, height: float = CAMERA_HEIGHT) -> list[Pose]:
    """Cameras on the perimeter of ``bounds`` looking at its centre.

    Corners come first, then edge midpoints; ``n`` > 8 adds cameras on an
    inner ring looking outward, which covers the strips beside the
    perimeter cameras.
    """
    xmin, ymin, xmax, ymax = bounds
    cx, cy = (xmin + xmax) / 2.0, (ymin + ymax) / 2.0
    spots = [(xmin, ymin), (xmax, ymax), (xmax, ymin), (xmin, ymax), (cx, ymin), (cx, ymax), (xmin, cy), (xmax, cy)]
    ring = max(0, n - len(spots))
    for i in range(ring):
        a = 2 * math.pi * i / ring
        spots.append((cx + 0.25 * (xmax - xmin) * math.cos(a), cy + 0.25 * (ymax - ymin) * math.sin(a)))
    poses = []
    for i, (x, y) in enumerate(spots[:n]):
        yaw = math.atan2(cy - y, cx - x) if i < 8 else math.atan2(y - cy, x - cx)
        poses.append(camera_pose(x, y, yaw, height))
    return poses


def project(position, size: float, pose: Pose, intr: Intrinsics):
    """(bbox, depth) of an object seen from ``pose``, or None when behind the camera."""
    p = pose.inverse_apply(position)
    z = float(p[2])
    if z <= 1e-6:
        return None
    u = intr.fx * p[0] / z + intr.cx
    v = intr.fy * p[1] / z + intr.cy
    w = size * intr.fx / z
    h = size * intr.fy / z
    return (u - w / 2.0, v - h / 2.0, u + w / 2.0, v + h / 2.0), z


def in_view(position, size: float, pose: Pose, camera: CameraModel) -> bool:
    """Whole bbox inside the image and centre within range."""
    intr = camera.intrinsics
    proj = project(position, size, pose, intr)
    if proj is None:
        return False
    (x0, y0, x1, y1), _ = proj
    if np.linalg.norm(np.asarray(position) - pose.t) > camera.max_range:
        return False
    return x0 >= 0 and y0 >= 0 and x1 <= intr.width and y1 <= intr.height


@dataclass(frozen=True)
class RoiTruth:
    label: str
    spurious: bool
    object_index: int | None


@dataclass(frozen=True)
class Exploration:
    frames: tuple[Frame, ...]
    truth: tuple[tuple[RoiTruth, ...], ...]  # per frame, per roi


def explore(
    scene: SyntheticScene,
    waypoints: Sequence[Pose],
    noise: NoiseSpec,
    vlm: MockVLM,
    *,
    camera: CameraModel = CameraModel(),
    seed: int | None = None,
    distractors: Sequence[str] = DISTRACTOR_LABELS,
) -> Exploration:
    """Frames plus the ground truth behind every ROI (for graders and oracles)."""
    if not waypoints:
        raise InvalidArgumentError("need at least one waypoint")
    if noise.embedding_noise is not None and noise.embedding_noise != vlm.spec.noise_sigma:
        vlm = MockVLM(replace(vlm.spec, noise_sigma=noise.embedding_noise), vlm.channels)
    rng = np.random.default_rng(scene.seed if seed is None else seed)
    intr = camera.intrinsics
    channels = vlm.channel_ids
    frames, truth = [], []

    def roi_for(label, pos, size, pose, depth_offset=0.0):
        proj = project(pos, size, pose, intr)
        if proj is None:
            return None
        (x0, y0, x1, y1), z = proj
        if x0 < 0 or y0 < 0 or x1 > intr.width or y1 > intr.height:
            return None
        nonce = int(rng.integers(0, 2**62))
        chans = {cid: EmbeddingVector(vlm.region_vector(cid, label, nonce), cid) for cid in channels}
        return RegionProposal((x0, y0, x1, y1), (z + depth_offset,) * DEPTH_PATCH, chans, 1.0)

    for fi, pose in enumerate(waypoints):
        rois, tr = [], []
        for oi, obj in enumerate(scene.objects):
            if not in_view(obj.position, obj.radius, pose, camera):
                continue
            if rng.random() >= noise.detect_prob:
                continue
            pos = np.asarray(obj.position) + (rng.normal(0.0, noise.position_sigma, 3) if noise.position_sigma > 0 else 0.0)
            size = obj.radius + (rng.normal(0.0, noise.radius_sigma) if noise.radius_sigma > 0 else 0.0)
            size = max(size, 0.01)
            offset = 0.0
            if noise.depth_outlier_rate > 0 and rng.random() < noise.depth_outlier_rate:
                offset = rng.uniform(*noise.depth_outlier_range)
            roi = roi_for(obj.label, pos, size, pose, offset)
            if roi is not None:
                rois.append(roi)
                tr.append(RoiTruth(obj.label, False, oi))
        for _ in range(int(rng.poisson(noise.false_positive_rate)) if noise.false_positive_rate > 0 else 0):
            label = distractors[int(rng.integers(len(distractors)))]
            depth = rng.uniform(0.8, camera.max_range * 0.9)
            size = rng.uniform(0.05, 0.2)
            half = size * intr.fx / depth / 2.0
            u = rng.uniform(half, intr.width - half)
            v = rng.uniform(half * intr.fy / intr.fx, intr.height - half * intr.fy / intr.fx)
            p_cam = np.array([(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth])
            roi = roi_for(label, pose.apply(p_cam), size, pose)
            if roi is not None:
                rois.append(roi)
                tr.append(RoiTruth(label, True, None))
        frames.append(Frame(f"f{fi:03d}", pose, intr, tuple(rois)))
        truth.append(tuple(tr))
    return Exploration(tuple(frames), tuple(truth))


def simulate_exploration(scene, waypoints, noise, vlm, **kw) -> list[Frame]:
    return list(explore(scene, waypoints, noise, vlm, **kw).frames)
