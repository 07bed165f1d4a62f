"""File formats: FMAP/DESC binaries, pose logs, pair sets, parameters, splits.

Binary layouts (all little-endian)::

    FMAP  b"FMAP" | u16 version | u32 h | u32 w | u32 k | f32[h*w*k] channel-last
    DESC  b"DESC" | u32 count | u32 dim | f32[count*dim]

DESC files carry no ids; the writer puts them one per line in a sidecar
``<path>.ids``.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from . import aggregators as agg
from .dataset_graph import SplitAssignment, SplitStats
from .errors import FormatError, InvalidInputError
from .geometry import Condition, Difficulty, PairSet, SampleMeta

FMAP_MAGIC = b"FMAP"
DESC_MAGIC = b"DESC"
FMAP_VERSION = 1
_FMAP_HEADER = struct.Struct("<4sHIII")
_DESC_HEADER = struct.Struct("<4sII")
_F32 = np.dtype("<f4")

POSE_FIELDS = ("sample_id", "scene_id", "timestamp_us", "cam_x", "cam_y", "yaw_rad", "condition")


def encode_fmap(x) -> bytes:
    x = np.asarray(x)
    if x.ndim != 3:
        raise InvalidInputError(f"feature map must be 3-D, got shape {x.shape}")
    h, w, k = x.shape
    return _FMAP_HEADER.pack(FMAP_MAGIC, FMAP_VERSION, h, w, k) + np.ascontiguousarray(x, dtype=_F32).tobytes()


def decode_fmap(buf: bytes) -> np.ndarray:
    if len(buf) < _FMAP_HEADER.size:
        raise FormatError(f"truncated FMAP header: {len(buf)} bytes", offset=len(buf))
    magic, version, h, w, k = _FMAP_HEADER.unpack_from(buf, 0)
    if magic != FMAP_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FMAP_MAGIC!r}", offset=0)
    if version != FMAP_VERSION:
        raise FormatError(f"unsupported FMAP version {version}", offset=4)
    expected = _FMAP_HEADER.size + 4 * h * w * k
    if len(buf) != expected:
        raise FormatError(f"FMAP payload size mismatch: expected {expected} bytes, got {len(buf)}",
                          offset=min(len(buf), expected))
    return np.frombuffer(buf, dtype=_F32, offset=_FMAP_HEADER.size).reshape(h, w, k).astype(np.float32)


def encode_desc(matrix) -> bytes:
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise InvalidInputError(f"descriptor matrix must be 2-D, got shape {m.shape}")
    count, dim = m.shape
    return _DESC_HEADER.pack(DESC_MAGIC, count, dim) + np.ascontiguousarray(m, dtype=_F32).tobytes()


def decode_desc(buf: bytes) -> np.ndarray:
    if len(buf) < _DESC_HEADER.size:
        raise FormatError(f"truncated DESC header: {len(buf)} bytes", offset=len(buf))
    magic, count, dim = _DESC_HEADER.unpack_from(buf, 0)
    if magic != DESC_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DESC_MAGIC!r}", offset=0)
    expected = _DESC_HEADER.size + 4 * count * dim
    if len(buf) != expected:
        raise FormatError(f"DESC payload size mismatch: expected {expected} bytes, got {len(buf)}",
                          offset=min(len(buf), expected))
    return np.frombuffer(buf, dtype=_F32, offset=_DESC_HEADER.size).reshape(count, dim).astype(np.float32)


def write_fmap(path, x) -> None:
    Path(path).write_bytes(encode_fmap(x))


def read_fmap(path) -> np.ndarray:
    return decode_fmap(Path(path).read_bytes())


def write_desc(path, ids, matrix) -> None:
    ids = [str(i) for i in ids]
    if len(ids) != np.asarray(matrix).shape[0]:
        raise InvalidInputError("one id per descriptor row required")
    Path(path).write_bytes(encode_desc(matrix))
    Path(str(path) + ".ids").write_text("".join(i + "\n" for i in ids), encoding="utf-8")


def read_desc(path):
    """Return ``(ids, matrix)``; ids come from the sidecar, or row numbers if it is missing."""
    matrix = decode_desc(Path(path).read_bytes())
    sidecar = Path(str(path) + ".ids")
    if sidecar.exists():
        ids = sidecar.read_text(encoding="utf-8").splitlines()
        if len(ids) != matrix.shape[0]:
            raise FormatError(f"{sidecar}: {len(ids)} ids for {matrix.shape[0]} descriptors")
    else:
        ids = [str(i) for i in range(matrix.shape[0])]
    return ids, matrix


# -- pose logs ---------------------------------------------------------------

def read_pose_log(path) -> list[SampleMeta]:
    """Parse a comma-separated pose log with a header row."""
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return samples
        missing = [f for f in POSE_FIELDS if f not in reader.fieldnames]
        if missing:
            raise FormatError(f"{path}: line 1: missing columns {missing}")
        for row in reader:
            line = reader.line_num
            try:
                x, y, yaw = float(row["cam_x"]), float(row["cam_y"]), float(row["yaw_rad"])
                if not all(math.isfinite(v) for v in (x, y, yaw)):
                    raise ValueError("non-finite pose value")
                samples.append(SampleMeta(
                    sample_id=row["sample_id"], scene_id=row["scene_id"], cam_pos=(x, y), yaw=yaw,
                    condition=Condition(row["condition"].strip().lower()),
                    timestamp=int(row["timestamp_us"]),
                ))
            except (ValueError, TypeError, InvalidInputError) as exc:
                raise FormatError(f"{path}: line {line}: {exc}") from None
    return samples


def write_pose_log(path, samples) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(POSE_FIELDS)
        for s in samples:
            writer.writerow([s.sample_id, s.scene_id, s.timestamp, repr(s.cam_pos[0]), repr(s.cam_pos[1]),
                             repr(s.yaw), s.condition.value])


# -- pair sets ---------------------------------------------------------------

def pairset_to_dict(ps: PairSet) -> dict:
    return {
        "query_id": ps.query_id,
        "positives": list(ps.positive_ids),
        "negatives": list(ps.negative_ids),
        "difficulty": ps.difficulty.label if ps.difficulty is not None else None,
    }


def pairset_from_dict(d) -> PairSet:
    diff = d.get("difficulty")
    return PairSet(query_id=d["query_id"], positive_ids=list(d["positives"]),
                   negative_ids=list(d["negatives"]),
                   difficulty=Difficulty.from_label(diff) if diff is not None else None)


def write_pairsets(path, pairsets) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ps in pairsets:
            fh.write(json.dumps(pairset_to_dict(ps), separators=(",", ":")) + "\n")


def read_pairsets(path) -> list[PairSet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(pairset_from_dict(json.loads(line)))
            except (KeyError, ValueError, InvalidInputError) as exc:
                raise FormatError(f"{path}: line {n}: {exc}") from None
    return out


# -- splits ------------------------------------------------------------------

def stats_to_dict(stats: SplitStats) -> dict:
    return stats.as_row()


def split_to_dict(split: SplitAssignment, stats: dict | None = None) -> dict:
    out = {
        "train": sorted(split.train_scenes),
        "test": sorted(split.test_scenes),
        "isolated": sorted(split.isolated_scenes),
    }
    if stats is not None:
        out["stats"] = {name: stats_to_dict(s) for name, s in stats.items()}
    return out


def format_stats_table(stats: dict) -> str:
    """Rows per split: D N D&R N&R | E SH H | scenes samples."""
    header = ["", "D", "N", "D&R", "N&R", "E", "SH", "H", "Scene", "Sample"]
    lines = [" ".join(f"{h:>7}" for h in header)]
    for name, s in stats.items():
        row = s.as_row()
        vals = [row[c.value] for c in Condition] + [row[d.label] for d in Difficulty] + [row["scenes"], row["samples"]]
        lines.append(" ".join([f"{name:>7}"] + [f"{v:>7d}" for v in vals]))
    return "\n".join(lines) + "\n"


# -- aggregator parameters ---------------------------------------------------

def _arr(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _unarr(d, name):
    try:
        shape = tuple(int(s) for s in d["shape"])
        data = np.asarray(d["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"parameter {name!r}: {exc}") from None
    if data.size != int(np.prod(shape)):
        raise FormatError(f"parameter {name!r}: {data.size} values for shape {shape}")
    return data.reshape(shape)


def params_to_dict(variant, params) -> dict:
    variant = agg.Variant.parse(variant)
    arrays = {}
    extra = {}
    if params is None:
        pass
    elif isinstance(params, agg.MixVPRParams):
        arrays = {"depth_proj": params.depth_proj, "row_proj": params.row_proj}
        for i, m in enumerate(params.mixers):
            arrays[f"mixer{i}.w1"] = m.w1
            arrays[f"mixer{i}.w2"] = m.w2
        extra["n_mixers"] = len(params.mixers)
    elif isinstance(params, agg.ConvAPParams):
        arrays = {"proj": params.proj}
        if params.bias is not None:
            arrays["bias"] = params.bias
        extra["grid"] = list(params.grid)
    else:
        arrays = dict(vars(params))
    return {"variant": variant.value, **extra, "arrays": {k: _arr(v) for k, v in arrays.items()}}


def params_from_dict(d):
    variant = agg.Variant.parse(d["variant"])
    arrays = {k: _unarr(v, k) for k, v in d.get("arrays", {}).items()}
    try:
        if variant is agg.Variant.SPOC:
            return variant, None
        if variant is agg.Variant.GEM:
            return variant, agg.GeMParams(p=arrays["p"])
        if variant is agg.Variant.NETVLAD:
            return variant, agg.NetVLADParams(arrays["weights"], arrays["bias"], arrays["centers"])
        if variant is agg.Variant.CONVAP:
            return variant, agg.ConvAPParams(arrays["proj"], tuple(d["grid"]), arrays.get("bias"))
        if variant is agg.Variant.EIGENPLACES:
            return variant, agg.EigenPlacesParams(arrays["p"], arrays["proj"], arrays["bias"])
        mixers = [agg.MixerBlock(arrays[f"mixer{i}.w1"], arrays[f"mixer{i}.w2"]) for i in range(int(d["n_mixers"]))]
        return variant, agg.MixVPRParams(arrays["depth_proj"], arrays["row_proj"], mixers)
    except KeyError as exc:
        raise FormatError(f"{variant.value} parameters missing {exc.args[0]!r}") from None


def write_params(path, variant, params, structural_p=None) -> None:
    d = params_to_dict(variant, params)
    if structural_p is not None:
        d["structural_p"] = _arr(structural_p)
    Path(path).write_text(json.dumps(d), encoding="utf-8")


def read_params(path):
    """Return ``(variant, params, structural_p or None)``."""
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    variant, params = params_from_dict(d)
    sp = _unarr(d["structural_p"], "structural_p") if "structural_p" in d else None
    return variant, params, sp
