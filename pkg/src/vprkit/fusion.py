"""Descriptor fusion, the multi-head triplet objective and adaptive hard mining."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateInputError, InvalidInputError


class Head(str, enum.Enum):
    """Loss heads: fused, visual (R) and structural (B) descriptors."""

    F = "F"
    R = "R"
    B = "B"


@dataclass
class FusionWeights:
    w_v: float = 1.0
    w_s: float = 1.0


@dataclass
class LossConfig:
    margin: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    n_pos: int = 1
    n_neg: int = 6

    def __post_init__(self):
        if not self.margin > 0:
            raise InvalidInputError(f"margin must be > 0, got {self.margin}")
        if self.n_pos < 1 or self.n_neg < 1:
            raise InvalidInputError(f"n_pos and n_neg must be >= 1, got {self.n_pos}, {self.n_neg}")

    def head_weight(self, head: Head) -> float:
        return {Head.F: self.alpha, Head.R: self.beta, Head.B: self.gamma}[Head(head)]


@dataclass
class HeadBatch:
    anchor: np.ndarray  # (d,)
    positives: np.ndarray  # (n_pos, d)
    negatives: np.ndarray  # (n_neg, d)


@dataclass
class MiniBatch:
    """One anchor with its positives and negatives, per head."""

    heads: dict

    def __getitem__(self, head) -> HeadBatch:
        try:
            return self.heads[Head(head)]
        except KeyError:
            raise InvalidInputError(f"mini-batch has no head {Head(head).value}") from None


@dataclass(frozen=True)
class HardMinerState:
    hard_ratio: float = 0.5
    prev_mean_loss: float | None = None
    step_delta: float = 0.1
    tolerance: float = 1e-3
    r_min: float = 0.1
    r_max: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.r_min <= self.r_max <= 1.0:
            raise InvalidInputError(f"need 0 <= r_min <= r_max <= 1, got {self.r_min}, {self.r_max}")
        object.__setattr__(self, "hard_ratio", min(self.r_max, max(self.r_min, self.hard_ratio)))


def l2_normalize(v, eps: float = 0.0) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n <= eps):
        raise DegenerateInputError("cannot normalise a zero vector")
    return v / n


def fuse(f_v, f_s, weights: FusionWeights | None = None, normalize: bool = True) -> np.ndarray:
    """Concatenate the weighted visual and structural descriptors."""
    weights = weights or FusionWeights()
    f_v = np.asarray(f_v, dtype=np.float64)
    f_s = np.asarray(f_s, dtype=np.float64)
    if not (np.all(np.isfinite(f_v)) and np.all(np.isfinite(f_s))):
        raise InvalidInputError("fuse: non-finite descriptor")
    out = np.concatenate([weights.w_v * f_v, weights.w_s * f_s], axis=-1)
    if normalize:
        if weights.w_v == 0 and weights.w_s == 0:
            raise DegenerateInputError("fuse: both weights are zero, cannot normalise")
        out = l2_normalize(out)
    return out


def triplet_loss(q, p, n, margin: float = 0.5) -> float:
    """Hinge on Euclidean distances: ``max(d(q,p) - d(q,n) + margin, 0)``."""
    q, p, n = (np.asarray(a, dtype=np.float64) for a in (q, p, n))
    if not (q.shape == p.shape == n.shape) or q.ndim != 1:
        raise InvalidInputError(f"triplet_loss: shapes differ {q.shape}, {p.shape}, {n.shape}")
    return max(float(np.linalg.norm(q - p) - np.linalg.norm(q - n)) + margin, 0.0)


def head_loss(batch: MiniBatch, head, cfg: LossConfig | None = None) -> float:
    """Mean triplet loss over every (positive, negative) combination of one head."""
    cfg = cfg or LossConfig()
    hb = batch[head]
    pos = np.atleast_2d(np.asarray(hb.positives, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(hb.negatives, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise InvalidInputError("head_loss: empty positives or negatives")
    if len(pos) != cfg.n_pos or len(neg) != cfg.n_neg:
        raise InvalidInputError(
            f"head_loss: batch has {len(pos)} positives / {len(neg)} negatives, config expects {cfg.n_pos} / {cfg.n_neg}")
    q = np.asarray(hb.anchor, dtype=np.float64)
    if pos.shape[1] != q.shape[0] or neg.shape[1] != q.shape[0]:
        raise InvalidInputError("head_loss: descriptor dimensions differ within the head")
    d_pos = np.linalg.norm(pos - q, axis=1)
    d_neg = np.linalg.norm(neg - q, axis=1)
    grid = np.maximum(d_pos[:, None] - d_neg[None, :] + cfg.margin, 0.0)
    return float(grid.mean())


def multi_head_loss(batch: MiniBatch, cfg: LossConfig | None = None) -> float:
    cfg = cfg or LossConfig()
    return sum(cfg.head_weight(h) * head_loss(batch, h, cfg) for h in Head)


def select_negatives(candidates, n_neg: int, state: HardMinerState, seed: int = 0) -> list:
    """Pick ``n_neg`` negatives: the hardest ``ceil(ratio * n_neg)``, the rest at random.

    ``candidates`` is a sequence of ``(id, distance_to_anchor)``. Hard picks
    come first, ordered by distance (ties by id); random picks follow in
    draw order.
    """
    candidates = list(candidates)
    if n_neg < 1:
        raise InvalidInputError(f"n_neg must be >= 1, got {n_neg}")
    if len(candidates) < n_neg:
        raise InvalidInputError(f"need at least {n_neg} negative candidates, got {len(candidates)}")
    ranked = sorted(candidates, key=lambda c: (float(c[1]), c[0]))
    # guard against 0.1 * 6 = 0.6000000000000001 style round-up
    n_hard = min(n_neg, math.ceil(round(state.hard_ratio * n_neg, 9)))
    hard = [c[0] for c in ranked[:n_hard]]
    rest = ranked[n_hard:]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(rest), size=n_neg - n_hard, replace=False) if n_neg > n_hard else []
    return hard + [rest[i][0] for i in picks]


def update_miner(state: HardMinerState, epoch_mean_loss: float) -> HardMinerState:
    """Step the hard ratio down when the loss rises, up when it falls.

    Changes within ``tolerance`` leave the ratio alone. The first call only
    records the loss.
    """
    if not epoch_mean_loss >= 0:
        raise InvalidInputError(f"epoch mean loss must be >= 0, got {epoch_mean_loss}")
    ratio = state.hard_ratio
    prev = state.prev_mean_loss
    if prev is not None:
        if epoch_mean_loss > prev + state.tolerance:
            ratio -= state.step_delta
        elif epoch_mean_loss < prev - state.tolerance:
            ratio += state.step_delta
    ratio = min(state.r_max, max(state.r_min, round(ratio, 12)))
    return replace(state, hard_ratio=ratio, prev_mean_loss=float(epoch_mean_loss))
