"""Global descriptor aggregation over dense feature maps.

A feature map is a channel-last ``(h, w, k)`` array. Every aggregator maps it
to a 1-D descriptor; none of them normalises its output.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


class Variant(str, enum.Enum):
    SPOC = "spoc"
    NETVLAD = "netvlad"
    GEM = "gem"
    CONVAP = "convap"
    EIGENPLACES = "eigenplaces"
    MIXVPR = "mixvpr"

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace("-", "").replace("_", "")
        for v in cls:
            if v.value == key:
                return v
        raise InvalidInputError(f"unknown aggregator variant {name!r}")


def as_feature_map(x, nonneg: bool = False) -> np.ndarray:
    """Validate and return ``x`` as a float64 ``(h, w, k)`` array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise InvalidInputError(f"feature map must be 3-D (h, w, k), got shape {x.shape}")
    h, w, k = x.shape
    if h * w == 0 or k == 0:
        raise InvalidInputError(f"feature map has an empty dimension: {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("feature map contains non-finite values")
    if nonneg and np.any(x < 0):
        raise InvalidInputError("GeM requires non-negative activations")
    return x


@dataclass
class NetVLADParams:
    weights: np.ndarray  # (S, k)
    bias: np.ndarray  # (S,)
    centers: np.ndarray  # (S, k)


@dataclass
class GeMParams:
    p: np.ndarray  # (k,)


@dataclass
class ConvAPParams:
    proj: np.ndarray  # (k, k')
    grid: tuple = (2, 2)
    bias: np.ndarray | None = None  # (k',)


@dataclass
class EigenPlacesParams:
    p: np.ndarray  # (k,)
    proj: np.ndarray  # (k, out)
    bias: np.ndarray  # (out,)


@dataclass
class MixerBlock:
    w1: np.ndarray  # (hidden, D)
    w2: np.ndarray  # (D, hidden)


@dataclass
class MixVPRParams:
    depth_proj: np.ndarray  # (k, d')
    row_proj: np.ndarray  # (D, r)
    mixers: list = field(default_factory=list)


def spoc(x) -> np.ndarray:
    """Per-channel mean of the activations."""
    x = as_feature_map(x)
    return x.reshape(-1, x.shape[2]).mean(axis=0)


def _softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def netvlad_assignments(x, params: NetVLADParams) -> np.ndarray:
    """Soft-assignment weights, shape ``(h*w, S)``; each row sums to one."""
    x = as_feature_map(x)
    flat = x.reshape(-1, x.shape[2])
    return _softmax_rows(flat @ np.asarray(params.weights, float).T + np.asarray(params.bias, float))


def netvlad(x, params: NetVLADParams) -> np.ndarray:
    """Soft-assigned residual sums, concatenated cluster by cluster (dim S*k)."""
    x = as_feature_map(x)
    w = np.asarray(params.weights, dtype=np.float64)
    c = np.asarray(params.centers, dtype=np.float64)
    b = np.asarray(params.bias, dtype=np.float64)
    k = x.shape[2]
    if w.ndim != 2 or w.shape[0] == 0:
        raise InvalidInputError("NetVLAD needs at least one cluster")
    n_clusters = w.shape[0]
    if w.shape != (n_clusters, k) or c.shape != (n_clusters, k) or b.shape != (n_clusters,):
        raise InvalidInputError(
            f"NetVLAD parameter shapes {w.shape}, {b.shape}, {c.shape} do not fit {n_clusters} clusters x {k} channels")
    flat = x.reshape(-1, k)
    a = netvlad_assignments(x, params)
    # sum_i a_is (x_i - c_s) = A^T X - (sum_i a_is) c_s
    vlad = a.T @ flat - a.sum(axis=0)[:, None] * c
    return vlad.reshape(-1)


def gem(x, p) -> np.ndarray:
    """Generalized mean per channel with exponent ``p`` (scalar or per-channel)."""
    x = as_feature_map(x, nonneg=True)
    k = x.shape[2]
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), (k,))
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        raise InvalidInputError("GeM exponents must be positive and finite")
    flat = x.reshape(-1, k)
    peak = flat.max(axis=0)
    safe = np.where(peak > 0, peak, 1.0)
    # scale by the channel max so large p does not overflow
    mean_pow = np.mean((flat / safe) ** p, axis=0)
    return np.where(peak > 0, safe * mean_pow ** (1.0 / p), 0.0)


def _partition(n: int, parts: int) -> list[tuple[int, int]]:
    base, rem = divmod(n, parts)
    bounds, start = [], 0
    for i in range(parts):
        size = base + (1 if i < rem else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def adaptive_avg_pool(x, grid) -> np.ndarray:
    """Average ``(h, w, k)`` over an ``s1 x s2`` grid of contiguous blocks.

    Blocks split each axis as evenly as possible, leading blocks taking the
    remainder (5 rows into 2 -> 3 + 2).
    """
    s1, s2 = grid
    h, w, k = x.shape
    if not (1 <= s1 <= h and 1 <= s2 <= w):
        raise InvalidInputError(f"pool grid {grid} does not fit a {h}x{w} map")
    out = np.empty((s1, s2, k))
    for i, (r0, r1) in enumerate(_partition(h, s1)):
        for j, (c0, c1) in enumerate(_partition(w, s2)):
            out[i, j] = x[r0:r1, c0:c1].reshape(-1, k).mean(axis=0)
    return out


def conv_ap(x, params: ConvAPParams) -> np.ndarray:
    """1x1 channel projection then adaptive average pooling.

    Output is flattened grid-row, grid-column, channel (dim s1*s2*k').
    """
    x = as_feature_map(x)
    proj = np.asarray(params.proj, dtype=np.float64)
    if proj.ndim != 2 or proj.shape[0] != x.shape[2]:
        raise InvalidInputError(f"Conv-AP projection {proj.shape} does not accept {x.shape[2]} channels")
    y = x @ proj
    if params.bias is not None:
        y = y + np.asarray(params.bias, dtype=np.float64)
    return adaptive_avg_pool(y, params.grid).reshape(-1)


def eigenplaces(x, params: EigenPlacesParams) -> np.ndarray:
    """Fully connected layer applied to the GeM descriptor."""
    x = as_feature_map(x, nonneg=True)
    proj = np.asarray(params.proj, dtype=np.float64)
    bias = np.asarray(params.bias, dtype=np.float64)
    if proj.ndim != 2 or proj.shape[0] != x.shape[2] or bias.shape != (proj.shape[1],):
        raise InvalidInputError(
            f"EigenPlaces projection {proj.shape} / bias {bias.shape} do not fit {x.shape[2]} channels")
    return gem(x, params.p) @ proj + bias


def feature_mixer(rows: np.ndarray, block: MixerBlock) -> np.ndarray:
    """One mixer block: each row gets ``W2 relu(W1 row)`` added to it."""
    hidden = np.maximum(rows @ np.asarray(block.w1, dtype=np.float64).T, 0.0)
    return rows + hidden @ np.asarray(block.w2, dtype=np.float64).T


def mixvpr(x, params: MixVPRParams) -> np.ndarray:
    """Feature-mixer cascade over flattened channels, then depth and row projections.

    The map is viewed as ``k`` rows of length ``D = h*w``. After the mixers,
    the depth projection maps ``k -> d'`` and the row projection maps
    ``D -> r``; the ``(d', r)`` result is flattened row-major.
    """
    x = as_feature_map(x)
    h, w, k = x.shape
    d = h * w
    rows = x.reshape(d, k).T
    for block in params.mixers:
        w1 = np.asarray(block.w1)
        w2 = np.asarray(block.w2)
        if w1.ndim != 2 or w1.shape[1] != d or w2.shape != (d, w1.shape[0]):
            raise InvalidInputError(f"mixer weights {w1.shape}, {w2.shape} do not fit row length {d}")
        rows = feature_mixer(rows, block)
    wd = np.asarray(params.depth_proj, dtype=np.float64)
    wr = np.asarray(params.row_proj, dtype=np.float64)
    if wd.ndim != 2 or wd.shape[0] != k or wr.ndim != 2 or wr.shape[0] != d:
        raise InvalidInputError(f"MixVPR projections {wd.shape}, {wr.shape} do not fit k={k}, D={d}")
    z_depth = rows.T @ wd  # (D, d')
    return (z_depth.T @ wr).reshape(-1)  # (d', r)


def aggregate(variant, x, params=None) -> np.ndarray:
    """Dispatch to the named aggregator."""
    variant = Variant.parse(variant)
    if variant is Variant.SPOC:
        return spoc(x)
    if params is None:
        raise InvalidInputError(f"{variant.value} requires parameters")
    if variant is Variant.GEM:
        return gem(x, params.p if isinstance(params, GeMParams) else params)
    return {
        Variant.NETVLAD: netvlad,
        Variant.CONVAP: conv_ap,
        Variant.EIGENPLACES: eigenplaces,
        Variant.MIXVPR: mixvpr,
    }[variant](x, params)


def output_dim(variant, params, k: int) -> int:
    """Descriptor length the variant produces for ``k`` input channels."""
    variant = Variant.parse(variant)
    if variant in (Variant.SPOC, Variant.GEM):
        return k
    if variant is Variant.NETVLAD:
        return np.asarray(params.weights).shape[0] * k
    if variant is Variant.CONVAP:
        s1, s2 = params.grid
        return s1 * s2 * np.asarray(params.proj).shape[1]
    if variant is Variant.EIGENPLACES:
        return np.asarray(params.proj).shape[1]
    return np.asarray(params.depth_proj).shape[1] * np.asarray(params.row_proj).shape[1]


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(variant, shape, out_dim=None, seed: int = 0, *, n_mixers: int = 2,
                grid=(2, 2), feature_range=(0.0, 1.0)):
    """Deterministic initial parameters for a ``(h, w, k)`` input.

    ``out_dim`` selects the descriptor length where the variant allows it
    (NetVLAD: S*k, Conv-AP: s1*s2*k', EigenPlaces: projection width,
    MixVPR: d'*r). GeM exponents start at 3.
    """
    variant = Variant.parse(variant)
    h, w, k = shape
    rng = np.random.default_rng(seed)
    if variant is Variant.SPOC:
        return None
    if variant is Variant.GEM:
        return GeMParams(p=np.full(k, 3.0))
    if variant is Variant.NETVLAD:
        n_clusters = 8 if out_dim is None else out_dim // k
        if n_clusters < 1 or (out_dim is not None and n_clusters * k != out_dim):
            raise InvalidInputError(f"NetVLAD output {out_dim} is not a multiple of k={k}")
        lo, hi = feature_range
        return NetVLADParams(weights=_uniform(rng, k, (n_clusters, k)),
                             bias=np.zeros(n_clusters),
                             centers=rng.uniform(lo, hi, size=(n_clusters, k)))
    if variant is Variant.CONVAP:
        cells = grid[0] * grid[1]
        k_out = k if out_dim is None else out_dim // cells
        if k_out < 1 or (out_dim is not None and k_out * cells != out_dim):
            raise InvalidInputError(f"Conv-AP output {out_dim} is not a multiple of grid cells {cells}")
        return ConvAPParams(proj=_uniform(rng, k, (k, k_out)), grid=tuple(grid))
    if variant is Variant.EIGENPLACES:
        width = 512 if out_dim is None else out_dim
        return EigenPlacesParams(p=np.full(k, 3.0), proj=_uniform(rng, k, (k, width)), bias=np.zeros(width))
    d = h * w
    target = out_dim if out_dim is not None else 4 * min(d, 4)
    rows_out = max(r for r in range(1, d + 1) if target % r == 0)
    depth_out = target // rows_out
    mixers = [MixerBlock(w1=_uniform(rng, d, (d, d)), w2=_uniform(rng, d, (d, d))) for _ in range(n_mixers)]
    return MixVPRParams(depth_proj=_uniform(rng, k, (k, depth_out)),
                        row_proj=_uniform(rng, d, (d, rows_out)), mixers=mixers)
