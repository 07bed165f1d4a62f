import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_positive_relations, four_sample_layout
from vprkit.errors import InvalidInputError
from vprkit.geometry import (Condition, Difficulty, SampleMeta, classify_difficulty, image_position,
                             mine_pairs, pair_difficulty, vector_angle, wrap_angle, yaw_from_quaternion)

D, N, DR, NR = Condition.DAY, Condition.NIGHT, Condition.DAY_RAIN, Condition.NIGHT_RAIN
finite = st.floats(-1e4, 1e4, allow_nan=False)


def meta(sid, scene="s", pos=(0.0, 0.0), yaw=0.0, cond=D, ts=0):
    return SampleMeta(sid, scene, pos, yaw, cond, ts)


class TestImagePosition:
    def test_straight_ahead(self):
        g = image_position(meta("a"), 25.0)
        np.testing.assert_allclose(g.img_pos, [25.0, 0.0])
        np.testing.assert_allclose(g.dir_vec, [25.0, 0.0])

    def test_axis_aligned(self):
        g = image_position(meta("a", pos=(3, 4), yaw=math.pi / 2))
        np.testing.assert_allclose(g.img_pos, [3.0, 29.0], atol=1e-12)

    def test_diagonal(self):
        # 1 + 25 / sqrt(2)
        g = image_position(meta("a", pos=(1, 1), yaw=math.pi / 4))
        np.testing.assert_allclose(g.img_pos, [18.67766952966369, 18.67766952966369], rtol=1e-14)

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidInputError):
            meta("a", yaw=float("nan"))
        with pytest.raises(InvalidInputError):
            meta("a", pos=(float("inf"), 0.0))

    def test_offset_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            image_position(meta("a"), 0.0)

    @given(x=finite, y=finite, yaw=st.floats(-math.pi, math.pi, exclude_max=True), off=st.floats(0.1, 100))
    def test_direction_length_equals_offset(self, x, y, yaw, off):
        g = image_position(meta("a", pos=(x, y), yaw=yaw), off)
        assert abs(np.linalg.norm(g.dir_vec) - off) < 1e-9 * max(1.0, off) + 1e-9 * max(abs(x), abs(y))

    @given(x=finite, y=finite, tx=finite, ty=finite, yaw=st.floats(-3.0, 3.0), rot=st.floats(-3.0, 3.0))
    def test_equivariance(self, x, y, tx, ty, yaw, rot):
        base = image_position(meta("a", pos=(x, y), yaw=yaw))
        moved = image_position(meta("a", pos=(x + tx, y + ty), yaw=yaw))
        np.testing.assert_allclose(moved.img_pos - base.img_pos, [tx, ty], atol=1e-7)
        turned = image_position(meta("a", pos=(x, y), yaw=yaw + rot))
        c, s = math.cos(rot), math.sin(rot)
        np.testing.assert_allclose(turned.dir_vec, [[c, -s], [s, c]] @ base.dir_vec, atol=1e-9)


def test_yaw_is_wrapped():
    assert meta("a", yaw=math.pi).yaw == -math.pi
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert yaw_from_quaternion(math.cos(0.3), 0, 0, math.sin(0.3)) == pytest.approx(0.6)


class TestVectorAngle:
    def test_orthogonal(self):
        assert vector_angle((1, 0), (0, 1)) == pytest.approx(math.pi / 2)

    def test_parallel(self):
        assert vector_angle((2, 0), (5, 0)) == 0.0

    def test_obtuse(self):
        assert vector_angle((1, 0), (-1, 1)) == pytest.approx(3 * math.pi / 4, abs=1e-15)

    def test_zero_vector(self):
        with pytest.raises(InvalidInputError):
            vector_angle((0, 0), (1, 0))

    @given(st.tuples(finite, finite), st.tuples(finite, finite), st.floats(0.01, 100), st.floats(0.01, 100))
    def test_scale_invariance_and_symmetry(self, u, v, a, b):
        if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
            return
        ang = vector_angle(u, v)
        assert 0.0 <= ang <= math.pi
        assert vector_angle(v, u) == pytest.approx(ang, abs=1e-12)
        assert vector_angle(np.multiply(a, u), np.multiply(b, v)) == pytest.approx(ang, abs=1e-6)


class TestDifficulty:
    TABLE = {
        D: {D: "easy", N: "hard", DR: "semi_hard", NR: "hard"},
        N: {D: "hard", N: "easy", DR: "hard", NR: "semi_hard"},
        DR: {D: "semi_hard", N: "hard", DR: "easy", NR: "hard"},
        NR: {D: "hard", N: "semi_hard", DR: "hard", NR: "easy"},
    }

    @pytest.mark.parametrize("q,p", list(itertools.product(Condition, Condition)))
    def test_matrix(self, q, p):
        assert pair_difficulty(q, p).label == self.TABLE[q][p]

    def test_all_night_positives_is_hard(self):
        assert classify_difficulty(meta("q", cond=D), [meta("a", cond=N), meta("b", cond=N)]) is Difficulty.HARD

    def test_night_rain_vs_night(self):
        assert classify_difficulty(meta("q", cond=NR), [meta("a", cond=N)]) is Difficulty.SEMI_HARD

    def test_min_rule(self):
        assert classify_difficulty(meta("q", cond=D), [meta("a", cond=N), meta("b", cond=D)]) is Difficulty.EASY

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            classify_difficulty(meta("q"), [])

    @given(st.sampled_from(list(Condition)), st.lists(st.sampled_from(list(Condition)), min_size=1, max_size=6))
    def test_shared_condition_is_easy(self, q, conds):
        got = classify_difficulty(meta("q", cond=q), [meta(str(i), cond=c) for i, c in enumerate(conds)])
        if q in conds:
            assert got is Difficulty.EASY
        assert got == min(pair_difficulty(q, c) for c in conds)


class TestMinePairs:
    def test_opposite_heading_not_positive(self):
        # cameras 50 m apart facing each other: same image position, angle pi
        a = meta("a", "s1", (0, 0), 0.0)
        b = meta("b", "s2", (50, 0), math.pi)
        out = mine_pairs([a, b], 10.0, math.pi / 4)
        assert all(not ps.positive_ids for ps in out)

    def test_same_scene_not_positive(self):
        a = meta("a", "s1", (0, 0), 0.0, ts=0)
        b = meta("b", "s1", (1, 0), 0.0, ts=10_000_000)
        out = mine_pairs([a, b])
        assert all(not ps.positive_ids for ps in out)
        # not consecutive (10 s apart), so they are negatives of each other
        assert out[0].negative_ids == ["b"]

    def test_consecutive_frames_excluded_from_negatives(self):
        a = meta("a", "s1", (0, 0), 0.0, ts=0)
        b = meta("b", "s1", (100, 0), 0.0, ts=500_000)
        assert mine_pairs([a, b])[0].negative_ids == []

    def test_four_sample_layout(self):
        samples = four_sample_layout()
        out = {ps.query_id: ps for ps in mine_pairs(samples)}
        relations = {(q, p) for q, ps in out.items() for p in ps.positive_ids}
        assert relations == brute_force_positive_relations(samples)
        assert relations == {("a1", "a2"), ("a2", "a1"), ("b1", "b2"), ("b2", "b1")}
        assert out["a1"].difficulty is Difficulty.HARD
        assert out["b1"].difficulty is Difficulty.SEMI_HARD

    def test_duplicate_ids(self):
        with pytest.raises(InvalidInputError):
            mine_pairs([meta("a"), meta("a", "s2")])

    def test_zero_positive_query_is_flagged(self):
        out = mine_pairs([meta("a", "s1"), meta("b", "s2", (500, 0))])
        assert out[0].difficulty is None and not out[0].has_positives

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.floats(0, 40), st.floats(0, 40),
                              st.floats(-math.pi, math.pi, exclude_max=True), st.sampled_from(list(Condition)),
                              st.integers(0, 5_000_000)), min_size=1, max_size=14))
    def test_properties(self, rows):
        samples = [meta(f"s{i:02d}", f"scene{sc}", (x, y), yaw, c, ts) for i, (sc, x, y, yaw, c, ts) in enumerate(rows)]
        out = mine_pairs(samples)
        by_id = {ps.query_id: ps for ps in out}
        scene = {s.sample_id: s.scene_id for s in samples}
        assert [ps.query_id for ps in out] == sorted(by_id)
        for ps in out:
            assert not set(ps.positive_ids) & set(ps.negative_ids)
            assert ps.query_id not in ps.positive_ids and ps.query_id not in ps.negative_ids
            assert all(scene[p] != scene[ps.query_id] for p in ps.positive_ids)
            assert ps.positive_ids == sorted(ps.positive_ids) and ps.negative_ids == sorted(ps.negative_ids)
            for p in ps.positive_ids:
                assert ps.query_id in by_id[p].positive_ids
        got = {(q, p) for q, ps in by_id.items() for p in ps.positive_ids}
        assert got == brute_force_positive_relations(samples)
