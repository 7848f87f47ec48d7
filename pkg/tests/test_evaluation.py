import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from styleda import evaluation as ev


def loop_cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (sum(x * x for x in a) ** 0.5 * sum(y * y for y in b) ** 0.5)


class TestFusion:
    def test_media_then_template(self):
        # media {2, 1} frames: mean(mean(0, 1), 2) = 1.25, not the flat mean 1
        fused = ev.fuse_template([[[0.0], [1.0]], [[2.0]]])
        assert fused[0] == pytest.approx(1.25)
        assert fused[0] != np.mean([0.0, 1.0, 2.0])

    def test_equal_frames_match_flat_mean(self):
        assert ev.fuse_template([[[3.0], [3.0]], [[3.0]]])[0] == 3.0

    def test_empty_template(self):
        with pytest.raises(ValueError):
            ev.fuse_template([[]])


class TestCosine:
    def test_loop_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=7), rng.normal(size=7)
        assert ev.cosine(a, b) == pytest.approx(loop_cosine(a, b), rel=1e-13)

    def test_matrix_matches_pairs(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
        m = ev.cosine_matrix(a, b)
        for i in range(4):
            for j in range(5):
                assert m[i, j] == pytest.approx(loop_cosine(a[i], b[j]), rel=1e-12)

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            ev.cosine([0.0, 0.0], [1.0, 0.0])


class TestTprAtFpr:
    def test_trivial_separation(self):
        (op,) = ev.tpr_at_fpr([0.9], [0.1], levels=[0.5])
        assert op.value == 1.0

    def test_exchangeable(self):
        rng = np.random.default_rng(2)
        ops = ev.tpr_at_fpr(rng.normal(size=20000), rng.normal(size=20000), levels=[0.01, 0.1])
        assert abs(ops[0].value - 0.01) < 0.005 and abs(ops[1].value - 0.1) < 0.01

    def test_unreachable_level_flagged(self):
        (op,) = ev.tpr_at_fpr([0.5, 0.7], np.linspace(0, 1, 50), levels=[1e-3])
        assert not op.reachable
        assert op.threshold == np.nextafter(1.0, 2.0) and op.value == 0.0

    @pytest.mark.parametrize("seed", range(10))
    def test_sweep_oracle(self, seed):
        rng = np.random.default_rng(seed)
        pos, neg = oracles.random_verification(rng)
        got = ev.tpr_at_fpr(pos, neg)
        for op, (t, v, r) in zip(got, oracles.tpr_at_fpr(pos, neg, ev.FPR_LEVELS)):
            assert (op.threshold, op.value, op.reachable) == (t, v, r)

    def test_bad_level(self):
        with pytest.raises(ValueError):
            ev.tpr_at_fpr([1.0], [0.0], levels=[0.0])


class TestKfold:
    def test_separable(self):
        scores = np.array([0.9, 0.8, 0.1, 0.2] * 5)
        labels = np.array([1, 1, 0, 0] * 5)
        mean, sd, accs = ev.kfold_verification(scores, labels, np.arange(20) % 5)
        assert mean == 1.0 and sd == 0.0 and len(accs) == 5

    def test_hand_case(self):
        scores = np.array([0.3, 0.6, 0.1, 0.5, 0.4, 0.2])
        labels = np.array([1, 0, 0, 1, 0, 1])
        folds = np.array([0, 0, 0, 1, 1, 1])
        # fold 0 tunes on (0.5 y, 0.4 n, 0.2 y): t = 0.2 and t = 0.5 both get 2/3, smaller wins;
        #   held out (0.3 y, 0.6 n, 0.1 n) at 0.2 -> 2/3
        # fold 1 tunes on (0.3 y, 0.6 n, 0.1 n): t = 0.3 gets 2/3 first;
        #   held out (0.5 y, 0.4 n, 0.2 y) at 0.3 -> 1/3
        mean, _, accs = ev.kfold_verification(scores, labels, folds)
        assert accs == pytest.approx([2 / 3, 1 / 3])
        assert mean == pytest.approx(0.5)

    def test_chance(self):
        rng = np.random.default_rng(3)
        mean, _, _ = ev.kfold_verification(rng.random(10000), rng.integers(0, 2, 10000), np.arange(10000) % 10)
        assert abs(mean - 0.5) < 0.05

    @pytest.mark.parametrize("seed", range(10))
    def test_sweep_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(10, 3000))
        scores = np.round(rng.normal(size=n), 2)
        labels = rng.integers(0, 2, n)
        folds = rng.integers(0, int(rng.integers(2, 11)), n)
        folds[:2] = [0, 1]
        mean, _, accs = ev.kfold_verification(scores, labels, folds)
        o_mean, o_accs = oracles.kfold(scores.tolist(), labels.tolist(), folds.tolist())
        assert accs == o_accs and mean == o_mean

    def test_single_fold(self):
        with pytest.raises(ValueError):
            ev.kfold_verification([0.1, 0.2], [0, 1], [0, 0])


class TestRankK:
    def test_exact_embedding_is_rank1(self):
        g = np.eye(3)
        assert ev.rank_k(g[[1]], ["b"], g, ["a", "b", "c"], ks=[1])[1] == 1.0

    def test_k_equals_gallery(self):
        rng = np.random.default_rng(4)
        g, p = rng.normal(size=(6, 3)), rng.normal(size=(9, 3))
        subj = [f"s{i}" for i in range(6)]
        assert ev.rank_k(p, [subj[i % 6] for i in range(9)], g, subj, ks=[6])[6] == 1.0

    def test_tie_keeps_gallery_order(self):
        g = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert ev.rank_k([[1.0, 0.0]], ["b"], g, ["a", "b"], ks=[1, 2]) == {1: 0.0, 2: 1.0}

    def test_missing_subject(self):
        with pytest.raises(ValueError):
            ev.rank_k(np.eye(2)[:1], ["z"], np.eye(2), ["a", "b"])

    @pytest.mark.parametrize("seed", range(10))
    def test_sort_oracle(self, seed):
        rng = np.random.default_rng(200 + seed)
        g, subj, k, k_subj, _ = oracles.random_identification(rng)
        ks = (1, 2, 5, 10)
        sim = ev.cosine_matrix(k, g).tolist()
        assert ev.rank_k(k, k_subj, g, subj, ks) == oracles.rank_k(sim, k_subj.tolist(), subj.tolist(), ks)


class TestTpirAtFpir:
    def test_perfect(self):
        g = np.eye(3)[:2]
        known = np.eye(3)[:2]
        unknown = np.eye(3)[2:]
        ops = ev.tpir_at_fpir(known, [0, 1], unknown, g, [0, 1], levels=[0.5, 0.9])
        assert [op.value for op in ops] == [1.0, 1.0]

    def test_threshold_above_known(self):
        g = np.array([[1.0, 0.0]])
        known = np.array([[1.0, 1.0]])  # cos 0.707
        unknown = np.array([[1.0, 0.0]])  # cos 1
        (op,) = ev.tpir_at_fpir(known, [0], unknown, g, [0], levels=[0.5])
        assert op.value == 0.0 and not op.reachable

    @pytest.mark.parametrize("seed", range(10))
    def test_sweep_oracle(self, seed):
        rng = np.random.default_rng(300 + seed)
        g, subj, k, k_subj, u = oracles.random_identification(rng)
        levels = (0.01, 0.05, 0.1, 0.5)
        got = ev.tpir_at_fpir(k, k_subj, u, g, subj, levels)
        want = oracles.tpir_at_fpir(
            ev.cosine_matrix(k, g).tolist(), k_subj.tolist(), ev.cosine_matrix(u, g).tolist(), subj.tolist(), levels
        )
        assert [(op.threshold, op.value, op.reachable) for op in got] == want


class TestProperties:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_tpr_monotone_in_level(self, seed):
        rng = np.random.default_rng(seed)
        ops = ev.tpr_at_fpr(rng.normal(1, 1, 300), rng.normal(0, 1, 20000))
        values = [op.value for op in ops]
        assert values == sorted(values)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_tpir_monotone_in_level(self, seed):
        rng = np.random.default_rng(seed)
        g, subj, k, k_subj, u = oracles.random_identification(rng)
        values = [op.value for op in ev.tpir_at_fpir(k, k_subj, u, g, subj, (1e-4, 1e-3, 1e-2, 1e-1))]
        assert values == sorted(values)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_rank_monotone_in_k(self, seed):
        rng = np.random.default_rng(seed)
        g, subj, k, k_subj, _ = oracles.random_identification(rng)
        r = ev.rank_k(k, k_subj, g, subj, ks=range(1, len(g) + 1))
        assert list(r.values()) == sorted(r.values())

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.125, 8.0), st.integers(0, 2**32 - 1))
    def test_scale_invariance(self, c, seed):
        # powers of two keep the unit vectors bit-identical; other scales within rounding
        c = 2.0 ** round(np.log2(c))
        rng = np.random.default_rng(seed)
        g, subj, k, k_subj, u = oracles.random_identification(rng)
        assert ev.rank_k(c * k, k_subj, c * g, subj) == ev.rank_k(k, k_subj, g, subj)
        a = ev.tpir_at_fpir(c * k, k_subj, c * u, c * g, subj)
        b = ev.tpir_at_fpir(k, k_subj, u, g, subj)
        assert [op.value for op in a] == [op.value for op in b]


class TestAuc:
    def test_perfect_and_reversed(self):
        assert ev.auc([2, 3], [0, 1]) == 1.0
        assert ev.auc([0, 1], [2, 3]) == 0.0

    def test_ties(self):
        assert ev.auc([1.0], [1.0]) == 0.5

    def test_pair_loop(self):
        rng = np.random.default_rng(5)
        pos, neg = np.round(rng.normal(size=40), 1), np.round(rng.normal(size=30), 1)
        want = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg) / (40 * 30)
        assert ev.auc(pos, neg) == pytest.approx(want, rel=1e-14)

    def test_empty(self):
        with pytest.raises(ValueError):
            ev.auc([], [1.0])
