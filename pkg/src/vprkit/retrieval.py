"""Exhaustive Euclidean retrieval and Recall@K stratified by difficulty."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .geometry import Difficulty

logger = logging.getLogger(__name__)

SUBSETS = ("overall", "easy", "semi_hard", "hard")
DEFAULT_KS = (1, 5, 10)


@dataclass
class DescriptorDB:
    ids: list
    matrix: np.ndarray

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        if len(self.ids) != self.matrix.shape[0]:
            raise InvalidInputError(f"{len(self.ids)} ids for {self.matrix.shape[0]} descriptor rows")
        if len(set(self.ids)) != len(self.ids):
            raise InvalidInputError("descriptor ids must be unique")
        if not np.all(np.isfinite(self.matrix)):
            raise InvalidInputError("descriptor database contains non-finite values")
        # rank of each row in ascending-id order, used to break distance ties
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        self._id_rank[np.argsort(np.array(self.ids, dtype=object), kind="stable")] = np.arange(len(self.ids))
        self._index = {sid: i for i, sid in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def index_of(self, sample_id) -> int | None:
        return self._index.get(sample_id)


def _distances(query, db: DescriptorDB) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    if len(db) == 0:
        raise InvalidInputError("descriptor database is empty")
    if q.ndim != 1 or q.shape[0] != db.dim:
        raise InvalidInputError(f"query dimension {q.shape} does not match database dimension {db.dim}")
    diff = db.matrix - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _ranked(dist, db: DescriptorDB, k, exclude_rows=()):
    dist = dist.copy()
    if len(exclude_rows):
        dist[list(exclude_rows)] = np.inf
    order = np.lexsort((db._id_rank, dist))
    order = order[np.isfinite(dist[order])]
    return order[:k]


def top_k(query, db: DescriptorDB, k: int, exclude=()) -> list:
    """The ``k`` nearest database entries as ``(id, distance)``, ties by id.

    Ids in ``exclude`` are skipped.
    """
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    dist = _distances(query, db)
    rows = [r for r in (db.index_of(e) for e in exclude) if r is not None]
    return [(db.ids[i], float(dist[i])) for i in _ranked(dist, db, k, rows)]


@dataclass
class RecallReport:
    ks: tuple
    recalls: dict = field(default_factory=dict)  # (subset, k) -> float, nan when subset empty
    counts: dict = field(default_factory=dict)  # subset -> number of evaluated queries
    excluded: int = 0

    def recall(self, subset: str, k: int) -> float:
        return self.recalls[(subset, k)]

    def row(self) -> dict:
        """Recall values in percent keyed like ``R@1``, ``R^E@1``, ``R^H@1``, ``R^SH@1``."""
        prefix = {"overall": "R", "easy": "R^E", "hard": "R^H", "semi_hard": "R^SH"}
        out = {}
        for subset in ("overall", "easy", "hard", "semi_hard"):
            for k in self.ks:
                out[f"{prefix[subset]}@{k}"] = 100.0 * self.recalls[(subset, k)]
        return out

    def improvement_over(self, baseline: "RecallReport") -> dict:
        mine, base = self.row(), baseline.row()
        return {key: mine[key] - base[key] for key in mine if key in base}

    def to_dict(self) -> dict:
        return {
            "ks": list(self.ks),
            "counts": dict(self.counts),
            "excluded": self.excluded,
            "recall": {s: {str(k): _json_float(self.recalls[(s, k)]) for k in self.ks} for s in SUBSETS},
        }


def _json_float(v):
    return None if math.isnan(v) else v


def _subset_of(difficulty) -> str:
    if difficulty is None:
        return "overall"
    return Difficulty(difficulty).label


def recall_at_k(queries, db: DescriptorDB, ks=DEFAULT_KS, exclude=None, exclude_self: bool = True,
                workers: int = 1) -> RecallReport:
    """Recall@K over ``queries`` (a sequence of ``(descriptor, PairSet)``).

    A query is recalled at K when one of its K nearest database entries is
    among its positives. ``exclude`` optionally maps query ids to further ids
    hidden from that query (its consecutive frames); the query's own id is
    hidden when ``exclude_self``. Queries without a positive in the database
    are dropped with a warning and counted in ``excluded``.
    """
    ks = tuple(sorted(set(int(k) for k in ks)))
    if not ks or ks[0] < 1:
        raise InvalidInputError(f"ks must be positive integers, got {ks}")
    queries = list(queries)
    exclude = exclude or {}
    k_max = ks[-1]

    def evaluate(item):
        desc, ps = item
        positives = {r for r in (db.index_of(p) for p in ps.positive_ids) if r is not None}
        if not positives:
            return None
        hidden = set(exclude.get(ps.query_id, ()))
        if exclude_self:
            hidden.add(ps.query_id)
        rows = [r for r in (db.index_of(e) for e in hidden) if r is not None]
        ranked = _ranked(_distances(desc, db), db, k_max, rows)
        first_hit = next((rank for rank, r in enumerate(ranked) if r in positives), None)
        return first_hit

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hits = list(pool.map(evaluate, queries))
    else:
        hits = [evaluate(q) for q in queries]

    tallies = {s: np.zeros(len(ks), dtype=np.int64) for s in SUBSETS}
    counts = {s: 0 for s in SUBSETS}
    excluded = 0
    for (_, ps), first_hit in zip(queries, hits):
        if first_hit is None and not any(db.index_of(p) is not None for p in ps.positive_ids):
            excluded += 1
            continue
        subsets = ["overall"]
        if ps.difficulty is not None:
            subsets.append(_subset_of(ps.difficulty))
        for s in subsets:
            counts[s] += 1
            if first_hit is not None:
                tallies[s] += np.array([first_hit < k for k in ks])
    if excluded:
        msg = f"recall_at_k: {excluded} queries have no positive in the database and were skipped"
        warnings.warn(msg, stacklevel=2)
        logger.warning(msg)

    report = RecallReport(ks=ks, counts=counts, excluded=excluded)
    for s in SUBSETS:
        for j, k in enumerate(ks):
            report.recalls[(s, k)] = tallies[s][j] / counts[s] if counts[s] else float("nan")
    return report


def format_table(rows, ks=DEFAULT_KS) -> str:
    """Plain-text table, one line per ``(method, RecallReport)``.

    When exactly two rows are given, an ``Improvements`` line with the
    second minus the first is appended.
    """
    rows = list(rows)
    keys = [f"{p}@{k}" for p in ("R", "R^E", "R^H", "R^SH") for k in ks]
    width = max([len("Improvements")] + [len(m) for m, _ in rows])
    lines = [" ".join([f"{'Method':<{width}}"] + [f"{k:>7}" for k in keys])]
    for method, rep in rows:
        vals = rep.row()
        lines.append(" ".join([f"{method:<{width}}"] + [_fmt(vals[k]) for k in keys]))
    if len(rows) == 2:
        delta = rows[1][1].improvement_over(rows[0][1])
        lines.append(" ".join([f"{'Improvements':<{width}}"] + [_fmt(delta[k], signed=True) for k in keys]))
    return "\n".join(lines) + "\n"


def _fmt(v, signed=False):
    if math.isnan(v):
        return f"{'-':>7}"
    return f"{v:>+7.2f}" if signed else f"{v:>7.2f}"
