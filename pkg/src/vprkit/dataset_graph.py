"""Scene-similarity graph, connected components and component-level splitting."""

from __future__ import annotations

import logging
import warnings
from collections import defaultdict, deque
from dataclasses import dataclass, field

from .errors import InvalidInputError
from .geometry import Condition, Difficulty, PairSet, SampleMeta

logger = logging.getLogger(__name__)

RARE_CONDITIONS = (Condition.NIGHT, Condition.NIGHT_RAIN)


@dataclass
class SceneGraph:
    """Undirected weighted graph; ``edges`` stores both orientations."""

    nodes: set = field(default_factory=set)
    edges: dict = field(default_factory=dict)

    def add_edge(self, a, b, weight: float) -> None:
        if a == b:
            raise InvalidInputError(f"self-edge on scene {a!r}")
        self.nodes.update((a, b))
        self.edges[(a, b)] = weight
        self.edges[(b, a)] = weight

    def weight(self, a, b) -> float:
        return self.edges.get((a, b), 0.0)

    def neighbors(self, a):
        return sorted(b for (x, b) in self.edges if x == a)

    def undirected_edges(self):
        """Each edge once, as ``(a, b, weight)`` with ``a < b``."""
        return sorted((a, b, w) for (a, b), w in self.edges.items() if a < b)


@dataclass
class Components:
    components: list  # sets of size >= 2, sorted by smallest scene id
    isolated: set


@dataclass
class SplitStats:
    conditions: dict = field(default_factory=lambda: {c: 0 for c in Condition})
    difficulties: dict = field(default_factory=lambda: {d: 0 for d in Difficulty})
    scenes: int = 0
    samples: int = 0

    def __add__(self, other: "SplitStats") -> "SplitStats":
        return SplitStats(
            conditions={c: self.conditions[c] + other.conditions[c] for c in Condition},
            difficulties={d: self.difficulties[d] + other.difficulties[d] for d in Difficulty},
            scenes=self.scenes + other.scenes,
            samples=self.samples + other.samples,
        )

    def as_row(self) -> dict:
        """Flat dict in table order: D, N, D&R, N&R, E, SH, H, scenes, samples."""
        row = {c.value: self.conditions[c] for c in Condition}
        row.update({d.label: self.difficulties[d] for d in Difficulty})
        row["scenes"] = self.scenes
        row["samples"] = self.samples
        return row


@dataclass
class SplitAssignment:
    train_scenes: set = field(default_factory=set)
    test_scenes: set = field(default_factory=set)
    isolated_scenes: set = field(default_factory=set)


def scene_similarity(scene_a, scene_b_ids) -> float:
    """Fraction of the queries in ``scene_a`` with a positive among ``scene_b_ids``."""
    scene_a = list(scene_a)
    if not scene_a:
        raise InvalidInputError("scene_similarity: scene has no queries")
    scene_b_ids = set(scene_b_ids)
    hits = sum(1 for ps in scene_a if scene_b_ids.intersection(ps.positive_ids))
    return hits / len(scene_a)


def build_graph(pairsets, meta) -> SceneGraph:
    """Scene graph weighted by the larger of the two directional similarities.

    Every scene in ``meta`` becomes a node; pairs with zero similarity get
    no edge.
    """
    scene_of = {m.sample_id: m.scene_id for m in meta}
    graph = SceneGraph(nodes=set(scene_of.values()))

    queries = defaultdict(int)
    hits = defaultdict(int)  # (scene_a, scene_b) -> queries in a with a positive in b
    for ps in pairsets:
        try:
            qa = scene_of[ps.query_id]
            pos_scenes = {scene_of[p] for p in ps.positive_ids}
        except KeyError as exc:
            raise InvalidInputError(f"sample id {exc.args[0]!r} not found in metadata") from None
        queries[qa] += 1
        for sb in pos_scenes:
            if sb != qa:
                hits[(qa, sb)] += 1

    for (a, b) in sorted(hits):
        if a > b and (b, a) in hits:
            continue
        sim_ab = hits.get((a, b), 0) / queries[a] if queries[a] else 0.0
        sim_ba = hits.get((b, a), 0) / queries[b] if queries[b] else 0.0
        w = max(sim_ab, sim_ba)
        if w > 0:
            graph.add_edge(a, b, w)
    return graph


def connected_components(graph: SceneGraph) -> Components:
    """Components with at least one edge, and the set of edgeless scenes."""
    adj = defaultdict(set)
    for (a, b), w in graph.edges.items():
        if w > 0:
            adj[a].add(b)
    seen = set()
    comps = []
    for start in sorted(graph.nodes):
        if start in seen or start not in adj:
            continue
        comp = {start}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for nb in adj[node]:
                if nb not in comp:
                    comp.add(nb)
                    queue.append(nb)
        seen |= comp
        comps.append(comp)
    isolated = {n for n in graph.nodes if n not in adj}
    return Components(components=comps, isolated=isolated)


def compute_stats(scene_ids, meta, pairsets=()) -> SplitStats:
    """Table-style counts for the samples belonging to ``scene_ids``.

    Difficulty counts cover queries with at least one positive.
    """
    scene_ids = set(scene_ids)
    stats = SplitStats(scenes=len(scene_ids))
    members = set()
    for m in meta:
        if m.scene_id in scene_ids:
            stats.conditions[m.condition] += 1
            stats.samples += 1
            members.add(m.sample_id)
    for ps in pairsets:
        if ps.query_id in members and ps.difficulty is not None:
            stats.difficulties[ps.difficulty] += 1
    return stats


def _balance_targets(stats_list):
    totals = {c: sum(s.conditions[c] for s in stats_list) for c in RARE_CONDITIONS}
    if any(totals.values()):
        keys = [c for c in RARE_CONDITIONS if totals[c] > 0]
        return keys, (lambda s, c: s.conditions[c]), totals
    # no rare-condition data at all: balance plain sample counts instead
    return ["samples"], (lambda s, c: s.samples), {"samples": sum(s.samples for s in stats_list)}


def balanced_split(components, stats_per_component, test_fraction: float, seed: int = 0) -> SplitAssignment:
    """Assign whole components to test until rare conditions reach their share.

    Greedy: at each step the component that most reduces the summed relative
    shortfall of Night and NightRain counts in test is moved there. Ties go
    to the smaller component (sample count), then the smallest scene id.
    The remaining components form the training set. ``seed`` is recorded for
    interface symmetry; the procedure itself has no random choices.
    """
    if not 0.0 < test_fraction < 1.0:
        raise InvalidInputError(f"test_fraction must be in (0, 1), got {test_fraction}")
    components = [set(c) for c in components]
    stats_list = list(stats_per_component)
    if len(stats_list) != len(components):
        raise InvalidInputError("one SplitStats per component required")

    keys, count, totals = _balance_targets(stats_list)
    target = {k: test_fraction * totals[k] for k in keys}

    def shortfall(test_counts):
        return sum(max(0.0, target[k] - test_counts[k]) / totals[k] for k in keys if totals[k])

    def overshoot(test_counts):
        return sum(max(0.0, test_counts[k] - target[k]) / totals[k] for k in keys if totals[k])

    test_idx: list[int] = []
    test_counts = {k: 0 for k in keys}
    remaining = list(range(len(components)))
    while remaining and len(remaining) > 1 and shortfall(test_counts) > 0:
        best = None
        for i in remaining:
            after = {k: test_counts[k] + count(stats_list[i], k) for k in keys}
            gain = shortfall(test_counts) - shortfall(after)
            if gain <= 0:
                continue
            key = (-(gain - overshoot(after)), stats_list[i].samples, min(components[i]))
            if best is None or key < best[0]:
                best = (key, i)
        if best is None:
            break
        i = best[1]
        test_idx.append(i)
        remaining.remove(i)
        for k in keys:
            test_counts[k] += count(stats_list[i], k)

    # a rare condition living entirely in test leaves none for training
    starved = [k for k in keys if totals[k] and test_counts[k] >= totals[k]]
    if len(components) <= 1 or shortfall(test_counts) > 1e-12 or starved:
        msg = (f"balanced_split: could not balance {', '.join(str(getattr(k, 'value', k)) for k in keys)} "
               f"at test share {test_fraction}; best-effort assignment used")
        warnings.warn(msg, stacklevel=2)
        logger.warning(msg)

    split = SplitAssignment()
    for i, comp in enumerate(components):
        (split.test_scenes if i in test_idx else split.train_scenes).update(comp)
    logger.debug("balanced_split seed=%d test components=%s", seed, sorted(test_idx))
    return split
