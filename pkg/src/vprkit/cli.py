"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import aggregators as agg
from . import io
from .config import PipelineConfig
from .dataset_graph import balanced_split, build_graph, compute_stats, connected_components
from .errors import FormatError, InvalidInputError, TrainingDivergedError
from .fusion import l2_normalize
from .geometry import mine_pairs
from .gradcheck import check_gradients
from .pipeline import consecutive_frames, fused_descriptors, stream_descriptors, visual_params_for
from .retrieval import DescriptorDB, RecallReport, format_table, recall_at_k
from .synth import CorpusSpec, generate_corpus, write_corpus
from .train import GRADCHECK_SPEC, SyntheticSpec, analytic_gradients, batch_loss, init_model, make_synthetic, toy_train

log = logging.getLogger("vprkit")


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {
        "dist_threshold_m": getattr(args, "dist_threshold", None),
        "angle_threshold_deg": getattr(args, "angle_threshold_deg", None),
        "offset_m": getattr(args, "offset_m", None),
        "consec_window_us": getattr(args, "consec_window_us", None),
        "dim": getattr(args, "dim", None),
        "margin": getattr(args, "margin", None),
        "n_neg": getattr(args, "n_neg", None),
        "seed": getattr(args, "seed", None),
        "variant": getattr(args, "variant", None),
        "test_fraction": getattr(args, "test_fraction", None),
    }
    return cfg.replace(**overrides)


def cmd_mine(args) -> int:
    cfg = _config(args)
    samples = io.read_pose_log(args.poses)
    pairsets = mine_pairs(samples, cfg.dist_threshold_m, cfg.angle_threshold_rad, cfg.consec_window_us,
                          cfg.offset_m)
    io.write_pairsets(args.out, pairsets)
    scenes = {s.scene_id for s in samples}
    no_pos = sum(1 for ps in pairsets if not ps.has_positives)
    stats = {"all": compute_stats(scenes, samples, pairsets)}
    sys.stdout.write(io.format_stats_table(stats))
    print(f"queries without positives: {no_pos}")
    return 0


def cmd_split(args) -> int:
    cfg = _config(args)
    samples = io.read_pose_log(args.poses)
    pairsets = io.read_pairsets(args.pairsets)
    graph = build_graph(pairsets, samples)
    comps = connected_components(graph)
    comp_stats = [compute_stats(c, samples, pairsets) for c in comps.components]
    split = balanced_split(comps.components, comp_stats, cfg.test_fraction, cfg.seed)
    split.isolated_scenes = set(comps.isolated)
    stats = {
        "train": compute_stats(split.train_scenes, samples, pairsets),
        "test": compute_stats(split.test_scenes, samples, pairsets),
    }
    out = io.split_to_dict(split, stats)
    out["components"] = len(comps.components)
    out["seed"] = cfg.seed
    Path(args.out).write_text(json.dumps(out, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    sys.stdout.write(io.format_stats_table(stats))
    print(f"components: {len(comps.components)}  isolated scenes: {len(comps.isolated)}")
    return 0


def _read_manifest(path):
    base = Path(path).parent
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "sample_id" not in reader.fieldnames or "visual" not in reader.fieldnames:
            raise FormatError(f"{path}: manifest needs sample_id and visual columns")
        for row in reader:
            st = row.get("structural") or None
            rows.append((row["sample_id"], base / row["visual"], base / st if st else None))
    return rows


def cmd_aggregate(args) -> int:
    cfg = _config(args)
    if args.manifest:
        rows = _read_manifest(args.manifest)
    else:
        rows = [(Path(f).stem, Path(f), None) for f in args.fmaps]
    if not rows:
        raise InvalidInputError("no feature maps given")
    ids = [r[0] for r in rows]
    visual = [io.read_fmap(r[1]) for r in rows]
    fusing = cfg.fuse and not args.no_fuse and all(r[2] is not None for r in rows)
    structural = [io.read_fmap(r[2]) for r in rows] if fusing else None

    structural_p = 3.0
    if args.params:
        variant, params, sp = io.read_params(args.params)
        if sp is not None:
            structural_p = sp
    else:
        variant = agg.Variant.parse(cfg.variant)
        if all(r[2] is not None for r in rows):
            # same visual aggregator with or without fusion, so the two runs compare like for like
            k_s = structural[0].shape[2] if fusing else io.read_fmap(rows[0][2]).shape[2]
            params = visual_params_for(variant, visual[0].shape, cfg.dim - k_s, seed=cfg.seed)
        else:
            params = agg.init_params(variant, visual[0].shape, seed=cfg.seed)
        if args.save_params:
            io.write_params(args.save_params, variant, params, structural_p=np.full(
                structural[0].shape[2], structural_p) if fusing else None)

    if fusing:
        desc = fused_descriptors(visual, structural, variant, params, structural_p,
                                 cfg.fusion_weights(), cfg.normalize)
        if desc.shape[1] != cfg.dim:
            raise InvalidInputError(f"fused descriptor has {desc.shape[1]} dims, config expects {cfg.dim}")
    else:
        desc = stream_descriptors(visual, variant, params)
        if cfg.normalize:
            desc = l2_normalize(desc)
    io.write_desc(args.out, ids, desc)
    print(f"wrote {len(ids)} descriptors of dim {desc.shape[1]} to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    q_ids, q_mat = io.read_desc(args.query)
    db_ids, db_mat = io.read_desc(args.db)
    pairsets = {ps.query_id: ps for ps in io.read_pairsets(args.pairsets)}
    db = DescriptorDB(db_ids, db_mat)
    queries = [(q_mat[i], pairsets[qid]) for i, qid in enumerate(q_ids) if qid in pairsets]
    exclude = consecutive_frames(io.read_pose_log(args.poses), cfg.consec_window_us) if args.poses else None
    report = recall_at_k(queries, db, cfg.ks, exclude=exclude)
    rows = []
    if args.compare:
        prev = json.loads(Path(args.compare).read_text(encoding="utf-8"))
        rows.append((prev.get("method", "baseline"), _report_from_dict(prev)))
    rows.append((args.method, report))
    sys.stdout.write(format_table(rows, report.ks))
    if args.out:
        out = {"method": args.method, **report.to_dict()}
        Path(args.out).write_text(json.dumps(out, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def _report_from_dict(d) -> RecallReport:
    ks = tuple(d["ks"])
    rep = RecallReport(ks=ks, counts=dict(d["counts"]), excluded=d.get("excluded", 0))
    for subset, vals in d["recall"].items():
        for k in ks:
            v = vals[str(k)]
            rep.recalls[(subset, k)] = math.nan if v is None else float(v)
    return rep


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    worst = 0.0
    for seed in range(cfg.seed, cfg.seed + args.seeds):
        spec = GRADCHECK_SPEC
        data = make_synthetic(spec, seed)
        loss_cfg = dataclasses.replace(cfg.loss_config(), n_pos=1, n_neg=3)
        params = init_model(spec.k_v, spec.k_s, spec.d_v, seed)
        grad = analytic_gradients(data.samples, data.tuples, params, loss_cfg)
        report = check_gradients(lambda th: batch_loss(data.samples, data.tuples, th, loss_cfg),
                                 grad.values, params, h=args.step)
        worst = max(worst, report.max_rel_error)
        print(f"seed {seed}: loss={grad.loss:.6f} max_rel_err={report.max_rel_error:.3e}"
              + (" (hinge boundary hit)" if grad.at_kink else ""))
        if args.verbose:
            for line in report.lines():
                print("   " + line)
    ok = worst < args.tol
    print(f"{'PASS' if ok else 'FAIL'}: worst relative error {worst:.3e} (tolerance {args.tol:g})")
    return 0 if ok else 1


def cmd_train(args) -> int:
    cfg = _config(args)
    spec = SyntheticSpec(n_neg=cfg.n_neg, samples_per_place=max(8, cfg.n_neg + 2))
    loss_cfg = cfg.loss_config()
    miner = cfg.miner_state() if args.mine else None
    try:
        result = toy_train(spec, args.steps, args.lr, cfg.seed, cfg=loss_cfg, normalize=cfg.normalize, miner=miner)
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    trace = result.trace_csv()
    if args.trace:
        Path(args.trace).write_text(trace, encoding="utf-8")
    else:
        sys.stdout.write(trace)
    if args.miner_log and miner is not None:
        Path(args.miner_log).write_text(result.miner_csv(), encoding="utf-8")
    losses = result.losses
    print(f"initial loss {losses[0]:.6f} final loss {losses[-1]:.6f}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    cfg = _config(args)
    spec = CorpusSpec(corruption=args.corruption, n_segments=args.segments)
    corpus = generate_corpus(spec, cfg.seed)
    manifest = write_corpus(corpus, args.outdir)
    print(f"wrote {len(corpus.samples)} samples; manifest {manifest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vprkit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON pipeline configuration")
        p.add_argument("--seed", type=int)
        return p

    p = common(sub.add_parser("mine", help="mine positives/negatives from a pose log"))
    p.add_argument("poses")
    p.add_argument("--out", required=True)
    p.add_argument("--dist-threshold", type=float, help="metres (default 10.0)")
    p.add_argument("--angle-threshold-deg", type=float, help="degrees (default 45)")
    p.add_argument("--offset-m", type=float, help="image position offset (default 25)")
    p.add_argument("--consec-window-us", type=int)
    p.set_defaults(func=cmd_mine)

    p = common(sub.add_parser("split", help="component-level train/test split"))
    p.add_argument("poses")
    p.add_argument("pairsets")
    p.add_argument("--out", required=True)
    p.add_argument("--test-fraction", type=float)
    p.set_defaults(func=cmd_split)

    p = common(sub.add_parser("aggregate", help="feature maps to a DESC file"))
    p.add_argument("fmaps", nargs="*")
    p.add_argument("--manifest")
    p.add_argument("--variant", choices=[v.value for v in agg.Variant])
    p.add_argument("--params")
    p.add_argument("--save-params")
    p.add_argument("--no-fuse", action="store_true")
    p.add_argument("--dim", type=int, help="fused descriptor size (default 640)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = common(sub.add_parser("eval", help="Recall@K report"))
    p.add_argument("query")
    p.add_argument("db")
    p.add_argument("pairsets")
    p.add_argument("--poses", help="pose log; hides each query's consecutive frames")
    p.add_argument("--consec-window-us", type=int)
    p.add_argument("--method", default="method")
    p.add_argument("--compare", help="earlier report JSON; adds an Improvements row")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("gradcheck", help="analytic vs central-difference gradients"))
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--margin", type=float)
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("train", help="toy gradient-descent run on synthetic data"))
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.3)
    p.add_argument("--margin", type=float)
    p.add_argument("--n-neg", type=int)
    p.add_argument("--mine", action="store_true", help="adaptive hard-negative mining each step")
    p.add_argument("--trace")
    p.add_argument("--miner-log")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("synth", help="write a synthetic corpus"))
    p.add_argument("outdir")
    p.add_argument("--corruption", type=float, default=0.1)
    p.add_argument("--segments", type=int, default=20)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidInputError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
