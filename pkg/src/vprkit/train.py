"""Two-stream descriptor model, its analytic gradients, and a toy trainer.

The model mirrors the trainable tail of the pipeline: the visual stream is
GeM pooling followed by a linear projection, the structural stream is GeM
pooling, and the fused descriptor is the weighted concatenation of the two.
All three descriptors feed the multi-head triplet loss.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .aggregators import gem
from .errors import InvalidInputError, TrainingDivergedError
from .fusion import (HardMinerState, Head, HeadBatch, LossConfig, MiniBatch, multi_head_loss,
                     select_negatives, update_miner)
from .gradcheck import ParamVector

logger = logging.getLogger(__name__)

P_MIN = 0.5
DIVERGENCE_LIMIT = 1e6
TRACE_COLUMNS = ("step", "loss_F", "loss_R", "loss_B", "w_v", "w_s")
MINER_COLUMNS = ("epoch", "loss_F", "loss_R", "loss_B", "hard_ratio")


@dataclass
class Sample:
    visual: np.ndarray  # (h, w, k_v), non-negative
    structural: np.ndarray  # (h, w, k_s), non-negative


@dataclass
class TrainTuple:
    """Anchor, positives and negatives as indices into a sample list."""

    anchor: int
    positives: list
    negatives: list


def init_model(k_v: int, k_s: int, d_v: int, seed: int = 0, p0: float = 3.0) -> ParamVector:
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(k_v)
    return ParamVector.from_arrays({
        "p_v": np.full(k_v, p0),
        "proj": rng.uniform(-bound, bound, size=(k_v, d_v)),
        "bias": np.zeros(d_v),
        "p_s": np.full(k_s, p0),
        "w_v": np.ones(1),
        "w_s": np.ones(1),
    })


def gem_p_gradient(x, p) -> np.ndarray:
    """Derivative of each GeM output channel with respect to its own exponent."""
    x = np.asarray(x, dtype=np.float64)
    k = x.shape[-1]
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), (k,))
    flat = x.reshape(-1, k)
    peak = flat.max(axis=0)
    safe = np.where(peak > 0, peak, 1.0)
    xs = flat / safe
    powed = xs ** p
    m = powed.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        xlog = np.where(xs > 0, powed * np.log(np.where(xs > 0, xs, 1.0)), 0.0)
    m_log = xlog.mean(axis=0)
    m = np.where(peak > 0, m, 1.0)  # all-zero channels are masked below
    g = safe * m ** (1.0 / p)
    dg = g * (-np.log(m) / p**2 + m_log / (p * m))
    return np.where(peak > 0, dg, 0.0)


def _maybe_norm(v, normalize):
    if not normalize:
        return v, 1.0
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise InvalidInputError("zero descriptor cannot be normalised")
    return v / n, n


def _norm_backward(g, unit, norm, normalize):
    if not normalize:
        return g
    return (g - unit * float(unit @ g)) / norm


@dataclass
class _Forward:
    g_v: np.ndarray
    f_v: np.ndarray
    f_s: np.ndarray
    r: np.ndarray
    r_norm: float
    b: np.ndarray
    b_norm: float
    u_norm: float
    fused: np.ndarray

    def head(self, h: Head) -> np.ndarray:
        return {Head.F: self.fused, Head.R: self.r, Head.B: self.b}[h]


def _forward(sample: Sample, params: ParamVector, normalize: bool) -> _Forward:
    g_v = gem(sample.visual, params["p_v"])
    f_v = g_v @ params["proj"] + params["bias"]
    f_s = gem(sample.structural, params["p_s"])
    r, r_norm = _maybe_norm(f_v, normalize)
    b, b_norm = _maybe_norm(f_s, normalize)
    u = np.concatenate([params["w_v"][0] * r, params["w_s"][0] * b])
    fused, u_norm = _maybe_norm(u, normalize)
    return _Forward(g_v, f_v, f_s, r, r_norm, b, b_norm, u_norm, fused)


def describe(sample: Sample, params: ParamVector, normalize: bool = True) -> dict:
    """Descriptors of one sample for every head."""
    fw = _forward(sample, params, normalize)
    return {h: fw.head(h) for h in Head}


@dataclass
class Gradient:
    values: ParamVector
    loss: float
    head_losses: dict
    at_kink: bool = False


def analytic_gradients(samples, tuples, params: ParamVector, cfg: LossConfig | None = None,
                       normalize: bool = True) -> Gradient:
    """Loss and closed-form gradient of the mean multi-head triplet loss.

    The objective is averaged over ``tuples``. Hinge terms sitting exactly
    on the boundary, and zero query-positive distances, contribute a zero
    subgradient; ``at_kink`` reports that this happened.
    """
    cfg = cfg or LossConfig()
    tuples = list(tuples)
    if not tuples:
        raise InvalidInputError("no training tuples")
    used = sorted({i for t in tuples for i in (t.anchor, *t.positives, *t.negatives)})
    fw = {i: _forward(samples[i], params, normalize) for i in used}
    grads = {i: {h: np.zeros_like(fw[i].head(h)) for h in Head} for i in used}
    head_losses = {h: 0.0 for h in Head}
    at_kink = False
    scale_t = 1.0 / len(tuples)

    for t in tuples:
        if len(t.positives) != cfg.n_pos or len(t.negatives) != cfg.n_neg:
            raise InvalidInputError("tuple sizes do not match the loss configuration")
        for h in Head:
            weight = cfg.head_weight(h)
            q = fw[t.anchor].head(h)
            per_term = scale_t / (cfg.n_pos * cfg.n_neg)
            for pi in t.positives:
                dp_vec = q - fw[pi].head(h)
                d_qp = float(np.linalg.norm(dp_vec))
                for ni in t.negatives:
                    dn_vec = q - fw[ni].head(h)
                    d_qn = float(np.linalg.norm(dn_vec))
                    arg = d_qp - d_qn + cfg.margin
                    if arg > 0:
                        head_losses[h] += per_term * arg
                    if arg == 0 or d_qp == 0 or d_qn == 0:
                        at_kink = at_kink or arg >= 0
                    if arg <= 0 or weight == 0:
                        continue
                    c = weight * per_term
                    if d_qp > 0:
                        grads[t.anchor][h] += c * dp_vec / d_qp
                        grads[pi][h] -= c * dp_vec / d_qp
                    if d_qn > 0:
                        grads[t.anchor][h] -= c * dn_vec / d_qn
                        grads[ni][h] += c * dn_vec / d_qn

    out = {name: np.zeros_like(params[name]) for name in params.names()}
    w_v, w_s = params["w_v"][0], params["w_s"][0]
    d_v = params["proj"].shape[1]
    for i in used:
        f = fw[i]
        g_u = _norm_backward(grads[i][Head.F], f.fused, f.u_norm, normalize)
        out["w_v"][0] += g_u[:d_v] @ f.r
        out["w_s"][0] += g_u[d_v:] @ f.b
        g_r = grads[i][Head.R] + w_v * g_u[:d_v]
        g_b = grads[i][Head.B] + w_s * g_u[d_v:]
        g_fv = _norm_backward(g_r, f.r, f.r_norm, normalize)
        g_fs = _norm_backward(g_b, f.b, f.b_norm, normalize)
        out["proj"] += np.outer(f.g_v, g_fv)
        out["bias"] += g_fv
        g_gv = params["proj"] @ g_fv
        out["p_v"] += g_gv * gem_p_gradient(samples[i].visual, params["p_v"])
        out["p_s"] += g_fs * gem_p_gradient(samples[i].structural, params["p_s"])

    total = sum(cfg.head_weight(h) * head_losses[h] for h in Head)
    grad = ParamVector.from_arrays({name: out[name] for name in params.names()})
    return Gradient(values=grad, loss=total, head_losses=head_losses, at_kink=at_kink)


def batch_loss(samples, tuples, params: ParamVector, cfg: LossConfig | None = None,
               normalize: bool = True) -> float:
    """Mean multi-head loss computed directly from the descriptors (no gradient)."""
    cfg = cfg or LossConfig()
    cache = {}

    def desc(i):
        if i not in cache:
            cache[i] = describe(samples[i], params, normalize)
        return cache[i]

    total = 0.0
    for t in tuples:
        heads = {h: HeadBatch(anchor=desc(t.anchor)[h],
                              positives=np.stack([desc(i)[h] for i in t.positives]),
                              negatives=np.stack([desc(i)[h] for i in t.negatives]))
                 for h in Head}
        total += multi_head_loss(MiniBatch(heads), cfg)
    return total / len(tuples)


@dataclass
class SyntheticSpec:
    """Generator settings for the two-place toy problem.

    Each place has visual and structural templates whose channel means are
    drawn from a place-specific Gaussian (each place dominates its own subset
    of channels); samples add noise. Samples flagged as night have
    their visual map multiplied by ``corruption`` and receive extra noise.
    """

    n_places: int = 2
    samples_per_place: int = 8
    h: int = 3
    w: int = 3
    k_v: int = 4
    k_s: int = 4
    d_v: int = 4
    place_sigma: float = 0.5
    baseline_v: float = 6.0
    baseline_s: float = 0.2
    spatial_sigma: float = 0.1
    noise_sigma: float = 0.05
    corruption: float = 1.0
    night_fraction: float = 0.0
    n_pos: int = 1
    n_neg: int = 6


# overlapping places: every head keeps a nonzero loss, for gradient checks
GRADCHECK_SPEC = SyntheticSpec(n_places=3, samples_per_place=3, n_neg=3, place_sigma=0.2, baseline_v=3.0,
                               baseline_s=3.0, noise_sigma=0.3)


@dataclass
class SyntheticData:
    samples: list
    places: list
    night: list
    tuples: list


def _place_template(rng, shape, place, spec, baseline):
    # each place owns every n_places-th channel, so places differ in direction
    k = shape[2]
    owned = (np.arange(k) % spec.n_places) == (place % spec.n_places)
    mean = baseline + owned * (1.0 + spec.place_sigma * np.abs(rng.standard_normal(k)))
    return np.maximum(mean + spec.spatial_sigma * rng.standard_normal(shape), 0.0)


def make_synthetic(spec: SyntheticSpec, seed: int = 0) -> SyntheticData:
    rng = np.random.default_rng(seed)
    shape_v = (spec.h, spec.w, spec.k_v)
    shape_s = (spec.h, spec.w, spec.k_s)
    samples, places, night = [], [], []
    for place in range(spec.n_places):
        tmpl_v = _place_template(rng, shape_v, place, spec, spec.baseline_v)
        tmpl_s = _place_template(rng, shape_s, place, spec, spec.baseline_s)
        for _ in range(spec.samples_per_place):
            is_night = bool(rng.random() < spec.night_fraction)
            vis = tmpl_v + spec.noise_sigma * rng.standard_normal(shape_v)
            if is_night:
                vis = spec.corruption * vis + spec.noise_sigma * rng.standard_normal(shape_v)
            st = tmpl_s + spec.noise_sigma * rng.standard_normal(shape_s)
            samples.append(Sample(np.maximum(vis, 0.0), np.maximum(st, 0.0)))
            places.append(place)
            night.append(is_night)

    tuples = []
    idx = np.arange(len(samples))
    places_arr = np.array(places)
    for a in idx:
        same = [int(i) for i in idx[(places_arr == places_arr[a]) & (idx != a)]]
        other = [int(i) for i in idx[places_arr != places_arr[a]]]
        if len(same) < spec.n_pos or len(other) < spec.n_neg:
            raise InvalidInputError("synthetic spec yields too few positives or negatives per anchor")
        pos = sorted(rng.choice(same, size=spec.n_pos, replace=False).tolist())
        neg = sorted(rng.choice(other, size=spec.n_neg, replace=False).tolist())
        tuples.append(TrainTuple(int(a), pos, neg))
    return SyntheticData(samples, places, night, tuples)


@dataclass
class TrainResult:
    params: ParamVector
    trace: list = field(default_factory=list)  # rows of TRACE_COLUMNS
    miner_log: list = field(default_factory=list)  # rows of MINER_COLUMNS

    @property
    def losses(self) -> list:
        return [sum(row[1:4]) for row in self.trace]

    def trace_csv(self) -> str:
        return _csv(TRACE_COLUMNS, self.trace)

    def miner_csv(self) -> str:
        return _csv(MINER_COLUMNS, self.miner_log)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([row[0], *(repr(float(v)) for v in row[1:])])
    return buf.getvalue()


def _remine(data: SyntheticData, params, cfg, state, seed, step, normalize):
    descs = [describe(s, params, normalize)[Head.F] for s in data.samples]
    places = np.array(data.places)
    tuples = []
    for t in data.tuples:
        pool = np.flatnonzero(places != places[t.anchor])
        cands = [(int(i), float(np.linalg.norm(descs[t.anchor] - descs[i]))) for i in pool]
        negs = select_negatives(cands, cfg.n_neg, state, seed=seed * 1_000_003 + step * 1009 + t.anchor)
        tuples.append(TrainTuple(t.anchor, t.positives, sorted(negs)))
    return tuples


def toy_train(spec: SyntheticSpec | SyntheticData, steps: int, lr: float, seed: int = 0,
              cfg: LossConfig | None = None, normalize: bool = True,
              miner: HardMinerState | None = None, params: ParamVector | None = None) -> TrainResult:
    """Full-batch gradient descent on the mean multi-head loss.

    With ``miner`` set, negatives are re-mined from the cached fused
    descriptors before each step, and the miner state is updated with that
    step's mean loss (one step is one epoch here).
    """
    if steps < 1:
        raise InvalidInputError(f"steps must be >= 1, got {steps}")
    if lr < 0:
        raise InvalidInputError(f"lr must be >= 0, got {lr}")
    data = spec if isinstance(spec, SyntheticData) else make_synthetic(spec, seed)
    if cfg is None:
        n_pos = len(data.tuples[0].positives)
        n_neg = len(data.tuples[0].negatives)
        cfg = LossConfig(n_pos=n_pos, n_neg=n_neg)
    if params is None:
        k_v = data.samples[0].visual.shape[2]
        k_s = data.samples[0].structural.shape[2]
        d_v = spec.d_v if isinstance(spec, SyntheticSpec) else k_v
        params = init_model(k_v, k_s, d_v, seed)
    params = params.copy()
    result = TrainResult(params=params)
    tuples = data.tuples
    p_slices = [params.registry[n][0] for n in ("p_v", "p_s")]

    for step in range(steps):
        if miner is not None:
            tuples = _remine(data, params, cfg, miner, seed, step, normalize)
        g = analytic_gradients(data.samples, tuples, params, cfg, normalize)
        if not np.isfinite(g.loss) or g.loss > DIVERGENCE_LIMIT:
            raise TrainingDivergedError(f"loss {g.loss!r} at step {step}; lower the learning rate")
        result.trace.append((step, g.head_losses[Head.F], g.head_losses[Head.R], g.head_losses[Head.B],
                             float(params["w_v"][0]), float(params["w_s"][0])))
        if miner is not None:
            result.miner_log.append((step, g.head_losses[Head.F], g.head_losses[Head.R],
                                     g.head_losses[Head.B], miner.hard_ratio))
            miner = update_miner(miner, g.loss)
        params.data -= lr * g.values.data
        for sl in p_slices:
            np.maximum(params.data[sl], P_MIN, out=params.data[sl])
        logger.debug("step %d loss %.6f", step, g.loss)
    result.params = params
    return result
