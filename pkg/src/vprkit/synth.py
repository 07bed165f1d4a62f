"""Synthetic corpus: pose log plus visual/structural feature maps.

The layout is a set of road segments far apart from each other. Each
segment is driven by two or three traversals (scenes) under chosen
conditions, so every difficulty class shows up. Features are tied to the
place: traversals of the same place share a visual and a structural
template. Night images see the visual template scaled by ``corruption``
plus noise of weight ``1 - corruption``; structural maps ignore the
condition.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import DEFAULT_OFFSET_M, Condition, SampleMeta
from .io import write_fmap, write_pose_log

D, N, DR, NR = Condition.DAY, Condition.NIGHT, Condition.DAY_RAIN, Condition.NIGHT_RAIN

# which conditions drive each segment
SEGMENT_KINDS = (
    (D, D),
    (D, N),
    (D, DR),
    (N, NR),
    (N, D, DR),
    (DR, N),
    (D, NR),
    (N, N),
)


@dataclass
class CorpusSpec:
    n_segments: int = 20
    places_per_segment: int = 6
    place_spacing_m: float = 20.0
    segment_gap_m: float = 1000.0
    frame_dt_us: int = 1_500_000
    pos_jitter_m: float = 1.0
    yaw_jitter_deg: float = 3.0
    h: int = 8
    w: int = 8
    k_v: int = 64
    k_s: int = 128
    shared_level: float = 1.0
    place_sigma: float = 1.0
    day_noise: float = 0.15
    night_noise: float = 0.2
    rain_factor: float = 0.7
    rain_noise: float = 0.1
    structural_noise: float = 1.5
    corruption: float = 0.1
    kinds: tuple = SEGMENT_KINDS
    offset_m: float = DEFAULT_OFFSET_M


@dataclass
class Corpus:
    samples: list
    visual: dict = field(default_factory=dict)
    structural: dict = field(default_factory=dict)

    @property
    def ids(self):
        return [s.sample_id for s in self.samples]


def generate_corpus(spec: CorpusSpec | None = None, seed: int = 0) -> Corpus:
    spec = spec or CorpusSpec()
    rng = np.random.default_rng(seed)
    shape_v = (spec.h, spec.w, spec.k_v)
    shape_s = (spec.h, spec.w, spec.k_s)
    shared_v = spec.shared_level * np.abs(rng.standard_normal(spec.k_v))
    corpus = Corpus(samples=[])
    n_cols = max(1, math.ceil(math.sqrt(spec.n_segments)))

    for seg in range(spec.n_segments):
        origin = spec.segment_gap_m * np.array([seg % n_cols, seg // n_cols], dtype=float)
        heading = rng.uniform(-math.pi, math.pi)
        direction = np.array([math.cos(heading), math.sin(heading)])
        kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
        templates = []
        for _ in range(spec.places_per_segment):
            t_v = shared_v + spec.place_sigma * rng.standard_normal(shape_v)
            t_s = np.abs(rng.standard_normal(spec.k_s)) + 0.5 * rng.standard_normal(shape_s)
            templates.append((t_v, t_s))

        for trav, cond in enumerate(kind):
            scene = f"seg{seg:03d}-t{trav}"
            t0 = int(rng.integers(0, 10**9)) * 1000
            for place, (t_v, t_s) in enumerate(templates):
                sid = f"{scene}-f{place:02d}"
                img_target = origin + place * spec.place_spacing_m * direction
                yaw = heading + math.radians(spec.yaw_jitter_deg) * rng.standard_normal()
                cam = (img_target - spec.offset_m * np.array([math.cos(yaw), math.sin(yaw)])
                       + spec.pos_jitter_m * rng.standard_normal(2))
                corpus.samples.append(SampleMeta(
                    sample_id=sid, scene_id=scene, cam_pos=(float(cam[0]), float(cam[1])), yaw=yaw,
                    condition=cond, timestamp=t0 + place * spec.frame_dt_us,
                ))
                corpus.visual[sid] = _render_visual(rng, t_v, cond, spec).astype(np.float32)
                st = t_s + spec.structural_noise * rng.standard_normal(shape_s)
                corpus.structural[sid] = np.maximum(st, 0.0).astype(np.float32)
    return corpus


def _render_visual(rng, template, cond: Condition, spec: CorpusSpec):
    x = template.copy()
    if cond.is_night:
        # corruption 1.0 leaves night images statistically identical to day ones
        x = spec.corruption * x + (1.0 - spec.corruption) * spec.night_noise * rng.standard_normal(x.shape)
    if cond.is_rain:
        x = spec.rain_factor * x + spec.rain_noise * rng.standard_normal(x.shape)
    x = x + spec.day_noise * rng.standard_normal(x.shape)
    return np.maximum(x, 0.0)


def write_corpus(corpus: Corpus, outdir) -> Path:
    """Write ``poses.csv``, per-sample FMAP files and ``manifest.csv``; returns the manifest path."""
    out = Path(outdir)
    (out / "visual").mkdir(parents=True, exist_ok=True)
    (out / "structural").mkdir(parents=True, exist_ok=True)
    write_pose_log(out / "poses.csv", corpus.samples)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "visual", "structural"])
        for sid in corpus.ids:
            v_rel, s_rel = f"visual/{sid}.fmap", f"structural/{sid}.fmap"
            write_fmap(out / v_rel, corpus.visual[sid])
            write_fmap(out / s_rel, corpus.structural[sid])
            writer.writerow([sid, v_rel, s_rel])
    return manifest
