"""Positive/negative pair mining from planar pose logs.

Each image is placed a fixed distance in front of its camera (the "image
position") and carries the direction vector from camera to that point.
Candidates closer than a distance threshold in image position become
positives when their direction vectors agree within an angle threshold and
they come from a different scene. Everything else, except the query itself
and its own consecutive frames, is a negative.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

DEFAULT_OFFSET_M = 25.0
DEFAULT_DIST_THRESHOLD_M = 10.0
DEFAULT_ANGLE_THRESHOLD_RAD = math.radians(45.0)
DEFAULT_CONSEC_WINDOW_US = 2_000_000


class Condition(enum.Enum):
    DAY = "day"
    NIGHT = "night"
    DAY_RAIN = "day_rain"
    NIGHT_RAIN = "night_rain"

    @property
    def is_night(self) -> bool:
        return self in (Condition.NIGHT, Condition.NIGHT_RAIN)

    @property
    def is_rain(self) -> bool:
        return self in (Condition.DAY_RAIN, Condition.NIGHT_RAIN)


class Difficulty(enum.IntEnum):
    """Recall difficulty; integer order is Easy < SemiHard < Hard."""

    EASY = 0
    SEMI_HARD = 1
    HARD = 2

    @property
    def label(self) -> str:
        return {0: "easy", 1: "semi_hard", 2: "hard"}[int(self)]

    @classmethod
    def from_label(cls, label: str) -> "Difficulty":
        for d in cls:
            if d.label == label:
                return d
        raise InvalidInputError(f"unknown difficulty label {label!r}")


def wrap_angle(theta: float) -> float:
    """Map an angle onto [-pi, pi)."""
    wrapped = (theta + math.pi) % (2.0 * math.pi) - math.pi
    # float modulo can land exactly on +pi
    return -math.pi if wrapped >= math.pi else wrapped


def yaw_from_quaternion(w: float, x: float, y: float, z: float) -> float:
    """Planar heading of a (w, x, y, z) rotation, rotating the +x axis."""
    return wrap_angle(math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z)))


@dataclass(frozen=True)
class SampleMeta:
    sample_id: str
    scene_id: str
    cam_pos: tuple[float, float]
    yaw: float
    condition: Condition
    timestamp: int = 0

    def __post_init__(self):
        x, y = (float(v) for v in self.cam_pos)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(self.yaw)):
            raise InvalidInputError(f"sample {self.sample_id!r}: non-finite pose")
        object.__setattr__(self, "cam_pos", (x, y))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        if not isinstance(self.condition, Condition):
            object.__setattr__(self, "condition", Condition(self.condition))


@dataclass(frozen=True)
class ImageGeometry:
    img_pos: np.ndarray
    dir_vec: np.ndarray


@dataclass
class PairSet:
    query_id: str
    positive_ids: list[str] = field(default_factory=list)
    negative_ids: list[str] = field(default_factory=list)
    difficulty: Difficulty | None = None

    @property
    def has_positives(self) -> bool:
        return len(self.positive_ids) > 0


def image_position(meta: SampleMeta, offset_m: float = DEFAULT_OFFSET_M) -> ImageGeometry:
    """Point ``offset_m`` metres along the optical axis, plus the camera-to-image vector."""
    if not (offset_m > 0 and math.isfinite(offset_m)):
        raise InvalidInputError(f"offset_m must be a positive finite number, got {offset_m}")
    cam = np.asarray(meta.cam_pos, dtype=np.float64)
    if not np.all(np.isfinite(cam)) or not math.isfinite(meta.yaw):
        raise InvalidInputError(f"sample {meta.sample_id!r}: non-finite pose")
    img = cam + offset_m * np.array([math.cos(meta.yaw), math.sin(meta.yaw)])
    return ImageGeometry(img_pos=img, dir_vec=img - cam)


def vector_angle(v_q, v_cp) -> float:
    """Unsigned angle in radians between two planar vectors."""
    a = np.asarray(v_q, dtype=np.float64)
    b = np.asarray(v_cp, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InvalidInputError("vector_angle: zero-length vector")
    cos = float(np.dot(a, b) / (na * nb))
    return math.acos(min(1.0, max(-1.0, cos)))


def pair_difficulty(query: Condition, positive: Condition) -> Difficulty:
    """Difficulty of retrieving a ``positive`` image from a ``query`` image.

    Same condition is easy, a rain-only change (same illumination) is
    semi-hard, any illumination change is hard.
    """
    if query is positive:
        return Difficulty.EASY
    if query.is_night == positive.is_night:
        return Difficulty.SEMI_HARD
    return Difficulty.HARD


def classify_difficulty(query: SampleMeta, positives) -> Difficulty:
    """Query difficulty: the easiest pairwise difficulty over all positives."""
    positives = list(positives)
    if not positives:
        raise InvalidInputError(f"query {query.sample_id!r} has no positives")
    return min(pair_difficulty(query.condition, p.condition) for p in positives)


def mine_pairs(
    samples,
    dist_threshold_m: float = DEFAULT_DIST_THRESHOLD_M,
    angle_threshold_rad: float = DEFAULT_ANGLE_THRESHOLD_RAD,
    consec_window_us: int = DEFAULT_CONSEC_WINDOW_US,
    offset_m: float = DEFAULT_OFFSET_M,
) -> list[PairSet]:
    """Mine positives, negatives and difficulty for every sample as a query.

    Output is sorted by ``query_id``; positive and negative lists are sorted
    by sample id. Queries without positives carry ``difficulty=None``.
    """
    samples = list(samples)
    if not dist_threshold_m > 0:
        raise InvalidInputError(f"dist_threshold_m must be > 0, got {dist_threshold_m}")
    if not 0 < angle_threshold_rad <= math.pi:
        raise InvalidInputError(f"angle_threshold_rad must be in (0, pi], got {angle_threshold_rad}")
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        seen, dup = set(), None
        for i in ids:
            if i in seen:
                dup = i
                break
            seen.add(i)
        raise InvalidInputError(f"duplicate sample_id {dup!r}")
    if not samples:
        return []

    order = sorted(range(len(samples)), key=lambda i: ids[i])
    samples = [samples[i] for i in order]
    ids = [ids[i] for i in order]

    geoms = [image_position(s, offset_m) for s in samples]
    img = np.stack([g.img_pos for g in geoms])
    unit = np.stack([g.dir_vec / np.linalg.norm(g.dir_vec) for g in geoms])
    scenes = np.array([s.scene_id for s in samples], dtype=object)
    stamps = np.array([s.timestamp for s in samples], dtype=np.int64)

    out = []
    for qi, q in enumerate(samples):
        dist = np.sqrt(np.sum((img - img[qi]) ** 2, axis=1))
        cos = np.clip(unit @ unit[qi], -1.0, 1.0)
        other_scene = scenes != q.scene_id
        # vectorised vector_angle(v_q, v_cp) < threshold
        angle_ok = np.arccos(cos) < angle_threshold_rad
        pos_mask = (dist < dist_threshold_m) & angle_ok & other_scene
        consec = (~other_scene) & (np.abs(stamps - q.timestamp) <= consec_window_us)
        neg_mask = ~pos_mask & ~consec
        pos_mask[qi] = False
        neg_mask[qi] = False

        pos_idx = np.flatnonzero(pos_mask)
        diff = classify_difficulty(q, [samples[i] for i in pos_idx]) if len(pos_idx) else None
        out.append(PairSet(
            query_id=q.sample_id,
            positive_ids=[ids[i] for i in pos_idx],
            negative_ids=[ids[i] for i in np.flatnonzero(neg_mask)],
            difficulty=diff,
        ))
    return out
