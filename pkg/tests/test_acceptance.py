"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per
criterion is printed in the "acceptance criteria" summary section.
"""

import itertools
import math
import time
import warnings

import numpy as np

from oracles import (brute_force_recall, conv_ap_loop, gem_loop, matvec_loop, mixvpr_loop, netvlad_loop, spoc_loop,
                     transitive_closure_components)
from vprkit import aggregators as agg
from vprkit import io
from vprkit.dataset_graph import SceneGraph, SplitStats, balanced_split, connected_components
from vprkit.fusion import HardMinerState, LossConfig, select_negatives, update_miner
from vprkit.geometry import Condition, Difficulty, PairSet, pair_difficulty
from vprkit.gradcheck import check_gradients
from vprkit.pipeline import proxy_experiment
from vprkit.retrieval import DescriptorDB, recall_at_k
from vprkit.synth import CorpusSpec, generate_corpus
from vprkit.train import GRADCHECK_SPEC, SyntheticSpec, analytic_gradients, batch_loss, init_model, make_synthetic, toy_train


def max_rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))


def test_01_aggregator_oracles(criterion):
    rng = np.random.default_rng(2024)
    shape = (4, 4, 3)
    worst = {}
    agg_time = 0.0
    start = time.perf_counter()
    for _ in range(100):
        x = rng.uniform(0.0, 2.0, size=shape)
        nv = agg.NetVLADParams(rng.normal(size=(4, 3)), rng.normal(size=4), rng.uniform(0, 2, size=(4, 3)))
        p = rng.uniform(1.0, 6.0, size=3)
        cap = agg.ConvAPParams(rng.normal(size=(3, 5)), (3, 2), rng.normal(size=5))
        eig = agg.EigenPlacesParams(p, rng.normal(size=(3, 8)), rng.normal(size=8))
        mixers = [(rng.normal(scale=0.25, size=(16, 16)), rng.normal(scale=0.25, size=(16, 16))) for _ in range(2)]
        mix = agg.MixVPRParams(rng.normal(size=(3, 4)), rng.normal(size=(16, 2)),
                               [agg.MixerBlock(a, b) for a, b in mixers])
        t0 = time.perf_counter()
        got = {
            "spoc": agg.aggregate("spoc", x),
            "netvlad": agg.aggregate("netvlad", x, nv),
            "gem": agg.aggregate("gem", x, agg.GeMParams(p)),
            "convap": agg.aggregate("convap", x, cap),
            "eigenplaces": agg.aggregate("eigenplaces", x, eig),
            "mixvpr": agg.aggregate("mixvpr", x, mix),
        }
        agg_time += time.perf_counter() - t0
        ref = {
            "spoc": spoc_loop(x),
            "netvlad": netvlad_loop(x, nv.weights, nv.bias, nv.centers),
            "gem": gem_loop(x, p),
            "convap": conv_ap_loop(x, cap.proj, cap.grid, cap.bias),
            "eigenplaces": matvec_loop(gem_loop(x, p), eig.proj, eig.bias),
            "mixvpr": mixvpr_loop(x, mixers, mix.depth_proj, mix.row_proj),
        }
        for name in got:
            worst[name] = max(worst.get(name, 0.0), max_rel(got[name], ref[name]))
    total = time.perf_counter() - start
    err = max(worst.values())
    criterion(1, "six aggregators match naive-loop oracles on 100 random 4x4x3 maps",
              err < 1e-6 and agg_time < 5.0 and len(worst) == 6,
              f"max rel err {err:.2e}, aggregators {agg_time:.2f}s, with oracles {total:.2f}s")


def test_02_gem_limits(criterion):
    rng = np.random.default_rng(7)
    err_p1 = 0.0
    gap_p100 = 0.0
    for _ in range(200):
        x = rng.uniform(0.01, 1.0, size=(4, 4, 3))
        err_p1 = max(err_p1, float(np.max(np.abs(agg.gem(x, 1.0) - agg.spoc(x)))))
        # four locations per channel: the power mean at p = 100 sits within (1/4) ** 0.01 of the max
        y = rng.uniform(0.01, 1.0, size=(2, 2, 3))
        peak = y.max(axis=(0, 1))
        gap_p100 = max(gap_p100, float(np.max((peak - agg.gem(y, 100.0)) / peak)))
    criterion(2, "GeM p=1 equals SPoC; p=100 within 2% of the channel max",
              err_p1 <= 1e-9 and gap_p100 <= 0.02, f"p=1 abs err {err_p1:.1e}, p=100 worst gap {100 * gap_p100:.2f}%")


def test_03_difficulty_matrix(criterion):
    D, N, DR, NR = Condition.DAY, Condition.NIGHT, Condition.DAY_RAIN, Condition.NIGHT_RAIN
    E, SH, H = Difficulty.EASY, Difficulty.SEMI_HARD, Difficulty.HARD
    table = {
        (D, D): E, (D, N): H, (D, DR): SH, (D, NR): H,
        (N, D): H, (N, N): E, (N, DR): H, (N, NR): SH,
        (DR, D): SH, (DR, N): H, (DR, DR): E, (DR, NR): H,
        (NR, D): H, (NR, N): SH, (NR, DR): H, (NR, NR): E,
    }
    mismatches = [(q, p) for q, p in itertools.product(Condition, Condition) if pair_difficulty(q, p) is not table[(q, p)]]
    criterion(3, "difficulty of all 16 condition pairs", not mismatches and len(table) == 16,
              f"{16 - len(mismatches)}/16 match")


def test_04_gradients(criterion):
    worst = 0.0
    min_head = math.inf
    names = set()
    for seed in range(10):
        spec = GRADCHECK_SPEC
        data = make_synthetic(spec, seed)
        cfg = LossConfig(n_pos=spec.n_pos, n_neg=spec.n_neg)
        params = init_model(spec.k_v, spec.k_s, spec.d_v, seed)
        g = analytic_gradients(data.samples, data.tuples, params, cfg)
        rep = check_gradients(lambda th: batch_loss(data.samples, data.tuples, th, cfg), g.values, params)
        worst = max(worst, rep.max_rel_error)
        min_head = min(min_head, *g.head_losses.values())
        names |= set(rep.params)
    covered = {"p_v", "p_s", "w_v", "w_s", "proj"} <= names
    criterion(4, "analytic vs central-difference gradients over 10 seeds",
              worst < 1e-4 and covered and min_head > 0,
              f"worst rel err {worst:.2e}, smallest head loss {min_head:.3f}, params {sorted(names)}")


def test_05_recall_oracle(criterion):
    rng = np.random.default_rng(11)
    n_places, per_place, dim = 50, 4, 16
    centers = rng.normal(size=(n_places, dim))
    ids, rows, place = [], [], []
    for pl in range(n_places):
        for j in range(per_place):
            ids.append(f"s{pl:02d}-{j}")
            rows.append(centers[pl] + rng.normal(scale=0.9, size=dim))
            place.append(pl)
    mat = np.array(rows)
    db = DescriptorDB(ids, mat)
    labels = [Difficulty.EASY, Difficulty.SEMI_HARD, Difficulty.HARD]
    queries, sets = [], []
    for i, sid in enumerate(ids):
        pos = [o for o, pl in zip(ids, place) if pl == place[i] and o != sid]
        diff = labels[int(rng.integers(3))]
        queries.append((mat[i], PairSet(sid, pos, [], diff)))
        sets.append((sid, pos, diff.label))
    ks = [1, 5, 10]
    rep = recall_at_k(queries, db, ks)
    ref, counts = brute_force_recall(mat, sets, ids, mat, ks)
    same = all(rep.recall(s, k) == ref[(s, k)] for s in ("overall", "easy", "semi_hard", "hard") for k in ks)
    same = same and all(rep.counts[s] == counts[s] for s in counts)
    criterion(5, "recall_at_k equals brute-force full-sort recall on 200 descriptors", same,
              f"R@1={rep.recall('overall', 1):.3f}, subsets {dict(rep.counts)}")


def test_06_split_integrity(criterion):
    rng = np.random.default_rng(5)
    violations = 0
    closure_mismatch = 0
    for trial in range(50):
        n = int(rng.integers(5, 40))
        nodes = [f"sc{i:02d}" for i in range(n)]
        g = SceneGraph(nodes=set(nodes))
        density = rng.uniform(0.0, 0.15)
        edges = [(a, b) for a, b in itertools.combinations(nodes, 2) if rng.random() < density]
        for a, b in edges:
            g.add_edge(a, b, float(rng.uniform(0.05, 1.0)))
        comps = connected_components(g)
        got = {frozenset(c) for c in comps.components} | {frozenset([v]) for v in comps.isolated}
        closure_mismatch += got != transitive_closure_components(nodes, edges)
        stats = []
        for c in comps.components:
            s = SplitStats(scenes=len(c))
            s.conditions[Condition.NIGHT] = int(rng.integers(0, 30))
            s.conditions[Condition.NIGHT_RAIN] = int(rng.integers(0, 10))
            s.conditions[Condition.DAY] = int(rng.integers(1, 40))
            s.samples = sum(s.conditions.values())
            stats.append(s)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            split = balanced_split(comps.components, stats, float(rng.uniform(0.1, 0.5)), seed=trial)
        for c in comps.components:
            if not (c <= split.train_scenes or c <= split.test_scenes):
                violations += 1
        violations += bool(split.train_scenes & split.test_scenes)
    criterion(6, "50 random scene graphs: components intact and equal to transitive closure",
              violations == 0 and closure_mismatch == 0,
              f"{violations} split components, {closure_mismatch} closure mismatches")


def test_07_proxy_fusion_direction(criterion):
    start = time.perf_counter()
    rows = []
    for seed in range(5):
        corpus = generate_corpus(CorpusSpec(corruption=0.1), seed=seed)
        visual, fused = proxy_experiment(corpus, variant="convap", dim=640, seed=seed)
        rows.append((fused.counts["overall"], visual.recall("hard", 1), fused.recall("hard", 1),
                     visual.recall("overall", 1), fused.recall("overall", 1)))
    elapsed = time.perf_counter() - start
    hard_wins = sum(fh > vh for _, vh, fh, _, _ in rows)
    overall_ok = all(fo >= vo - 0.01 for _, _, _, vo, fo in rows)
    enough = all(n >= 200 for n, *_ in rows)
    detail = "; ".join(f"n={n} hard {100 * vh:.1f}->{100 * fh:.1f} all {100 * vo:.1f}->{100 * fo:.1f}"
                       for n, vh, fh, vo, fo in rows)
    criterion(7, "synthetic proxy: fusion lifts hard-subset R@1 without hurting overall R@1",
              hard_wins >= 4 and overall_ok and enough and elapsed < 60,
              f"hard wins {hard_wins}/5, {elapsed:.1f}s; {detail}")


def test_08_miner_sanity(criterion):
    rng = np.random.default_rng(8)
    out_of_bounds = 0
    for _ in range(100_000):
        s = HardMinerState(hard_ratio=float(rng.uniform(0.1, 0.9)), step_delta=float(rng.uniform(0.01, 0.5)),
                           tolerance=float(rng.choice([0.0, 1e-3, 0.1])))
        n = int(rng.integers(1, 16))
        scale = 10.0 ** rng.uniform(-3, 3)
        for loss in rng.exponential(scale, size=n):
            s = update_miner(s, float(loss))
            out_of_bounds += not (0.1 <= s.hard_ratio <= 0.9)
    wrong = 0
    for trial in range(2000):
        n_neg = int(rng.integers(1, 12))
        cands = [(f"c{i:03d}", float(d)) for i, d in enumerate(rng.random(n_neg + int(rng.integers(0, 30))))]
        got = select_negatives(cands, n_neg, HardMinerState(hard_ratio=1.0, r_max=1.0), seed=trial)
        wrong += set(got) != {c for c, _ in sorted(cands, key=lambda c: c[1])[:n_neg]}
    criterion(8, "hard ratio bounded over 1e5 fuzzed sequences; ratio 1 picks the closest",
              out_of_bounds == 0 and wrong == 0, f"{out_of_bounds} out-of-bounds updates, {wrong} wrong selections")


def test_09_toy_training(criterion):
    spec = SyntheticSpec()
    a = toy_train(spec, 200, 0.3, seed=0)
    b = toy_train(spec, 200, 0.3, seed=0)
    first, last = a.losses[0], a.losses[-1]
    identical = a.trace_csv() == b.trace_csv() and a.params.data.tobytes() == b.params.data.tobytes()
    criterion(9, "200 descent steps cut the loss below 10% and repeat bit-identically",
              first > 0 and last < 0.1 * first and identical,
              f"loss {first:.4f} -> {last:.4f}, identical traces {identical}")


def test_10_format_roundtrip(criterion):
    rng = np.random.default_rng(10)
    shapes = [(1, 1, 1), (1, 7, 3), (1, 1, 9), (5, 1, 2)]
    failures = 0
    for i in range(1000):
        shape = shapes[i] if i < len(shapes) else tuple(int(v) for v in rng.integers(1, 9, size=3))
        bits = rng.integers(0, 2**32, size=int(np.prod(shape)), dtype=np.uint64).astype(np.uint32)
        x = bits.view(np.float32).reshape(shape)
        x = np.where(np.isfinite(x), x, np.float32(0.0)).astype(np.float32)
        if i % 3 == 0:
            x.flat[0] = -0.0
        y = io.decode_fmap(io.encode_fmap(x))
        failures += y.shape != x.shape or y.tobytes() != x.tobytes()
        m = x.reshape(shape[0] * shape[1], shape[2])
        failures += io.decode_desc(io.encode_desc(m)).tobytes() != m.tobytes()
    criterion(10, "FMAP/DESC round trip is bit-exact on 1000 tensors", failures == 0, f"{failures} failures")
