"""End-to-end glue: feature maps to descriptors, and descriptors to recall."""

from __future__ import annotations

import numpy as np

from . import aggregators as agg
from .errors import InvalidInputError
from .fusion import FusionWeights, fuse, l2_normalize
from .geometry import (DEFAULT_ANGLE_THRESHOLD_RAD, DEFAULT_CONSEC_WINDOW_US, DEFAULT_DIST_THRESHOLD_M,
                       mine_pairs)
from .retrieval import DescriptorDB, recall_at_k


def visual_params_for(variant, shape, visual_dim: int, seed: int = 0):
    """Initial visual aggregator parameters producing ``visual_dim`` outputs."""
    variant = agg.Variant.parse(variant)
    if variant in (agg.Variant.SPOC, agg.Variant.GEM):
        if shape[2] != visual_dim:
            raise InvalidInputError(
                f"{variant.value} yields {shape[2]} dims; {visual_dim} are needed to reach the configured size")
        return agg.init_params(variant, shape, seed=seed)
    return agg.init_params(variant, shape, visual_dim, seed=seed)


def stream_descriptors(maps, variant, params) -> np.ndarray:
    return np.stack([agg.aggregate(variant, m, params) for m in maps])


def fused_descriptors(visual_maps, structural_maps, variant, params, structural_p=3.0,
                      weights: FusionWeights | None = None, normalize: bool = True) -> np.ndarray:
    """Weighted concatenation of visual and structural (GeM) descriptors.

    With ``normalize`` each stream is L2-normalised before weighting and
    the fused vector is normalised again.
    """
    f_v = stream_descriptors(visual_maps, variant, params)
    f_s = np.stack([agg.gem(m, structural_p) for m in structural_maps])
    if normalize:
        f_v, f_s = l2_normalize(f_v), l2_normalize(f_s)
    return fuse(f_v, f_s, weights, normalize=normalize)


def visual_descriptors(visual_maps, variant, params, normalize: bool = True) -> np.ndarray:
    f_v = stream_descriptors(visual_maps, variant, params)
    return l2_normalize(f_v) if normalize else f_v


def consecutive_frames(samples, window_us: int = DEFAULT_CONSEC_WINDOW_US) -> dict:
    """Map each sample id to the other ids of its scene within ``window_us``."""
    by_scene = {}
    for s in samples:
        by_scene.setdefault(s.scene_id, []).append(s)
    out = {}
    for members in by_scene.values():
        for s in members:
            out[s.sample_id] = {o.sample_id for o in members
                                if o.sample_id != s.sample_id and abs(o.timestamp - s.timestamp) <= window_us}
    return out


def evaluate(ids, descriptors, pairsets, ks=(1, 5, 10), exclude=None):
    """Recall report when every sample is both a query and a database entry."""
    db = DescriptorDB(ids, descriptors)
    rows = {sid: i for i, sid in enumerate(ids)}
    queries = [(db.matrix[rows[ps.query_id]], ps) for ps in pairsets if ps.query_id in rows]
    return recall_at_k(queries, db, ks, exclude=exclude)


def proxy_experiment(corpus, variant="convap", dim: int = 640, seed: int = 0, ks=(1, 5, 10),
                     dist_threshold_m=DEFAULT_DIST_THRESHOLD_M,
                     angle_threshold_rad=DEFAULT_ANGLE_THRESHOLD_RAD,
                     consec_window_us=DEFAULT_CONSEC_WINDOW_US):
    """Visual-only versus fused retrieval on one synthetic corpus.

    Both runs share the same untrained visual aggregator; the structural
    stream is GeM with p = 3. Returns ``(visual_report, fused_report)``.
    """
    ids = corpus.ids
    vis = [corpus.visual[i] for i in ids]
    st = [corpus.structural[i] for i in ids]
    k_s = st[0].shape[2]
    params = visual_params_for(variant, vis[0].shape, dim - k_s, seed=seed)
    pairsets = mine_pairs(corpus.samples, dist_threshold_m, angle_threshold_rad, consec_window_us)
    exclude = consecutive_frames(corpus.samples, consec_window_us)
    fused = fused_descriptors(vis, st, variant, params)
    visual = visual_descriptors(vis, variant, params)
    return (evaluate(ids, visual, pairsets, ks, exclude),
            evaluate(ids, fused, pairsets, ks, exclude))
