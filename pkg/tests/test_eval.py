import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ctcad.evaluation import (
    BadK,
    ConfusionCounts,
    SingleClass,
    cross_validate,
    metrics_from_confusion,
    roc_auc,
    stratified_kfold,
)
from ctcad.svm import InfeasibleNu, NuSvmConfig


def labels_746():
    return np.array([1] * 349 + [-1] * 397)


class TestStratifiedKFold:
    def test_746_sample_partition_shape(self):
        y = labels_746()
        assignment = stratified_kfold(y, k=10, seed=0)
        sizes = sorted(
            (int(np.sum(assignment.fold_of == f)) for f in range(10)), reverse=True
        )
        assert sizes == [75] * 6 + [74] * 4
        for f in range(10):
            pos = int(np.sum(y[assignment.fold_of == f] == 1))
            assert pos in (34, 35)

    def test_leave_one_out_limit(self):
        y = np.array([1, 1, -1, -1])
        assignment = stratified_kfold(y, k=4, seed=1)
        assert all(int(np.sum(assignment.fold_of == f)) == 1 for f in range(4))

    def test_deterministic_per_seed(self):
        y = labels_746()
        a = stratified_kfold(y, k=10, seed=42)
        b = stratified_kfold(y, k=10, seed=42)
        assert np.array_equal(a.fold_of, b.fold_of)
        c = stratified_kfold(y, k=10, seed=43)
        assert not np.array_equal(a.fold_of, c.fold_of)

    def test_partition_property(self, rng):
        y = np.where(rng.random(53) > 0.4, 1, -1)
        y[:2] = [1, -1]
        assignment = stratified_kfold(y, k=5, seed=3)
        gathered = np.concatenate([assignment.test_indices(f) for f in range(5)])
        assert sorted(gathered.tolist()) == list(range(53))
        for f in range(5):
            test = set(assignment.test_indices(f).tolist())
            train = set(assignment.train_indices(f).tolist())
            assert not test & train
            assert len(test | train) == 53

    def test_per_class_counts_balanced(self, rng):
        y = np.array([1] * 17 + [-1] * 29)
        assignment = stratified_kfold(y, k=4, seed=9)
        for cls in (1, -1):
            counts = [
                int(np.sum(y[assignment.fold_of == f] == cls)) for f in range(4)
            ]
            assert max(counts) - min(counts) <= 1

    def test_bad_k(self):
        y = np.array([1, 1, -1, -1])
        with pytest.raises(BadK):
            stratified_kfold(y, k=1, seed=0)
        with pytest.raises(BadK):
            stratified_kfold(y, k=5, seed=0)


class TestMetrics:
    def test_worked_example(self):
        m = metrics_from_confusion(ConfusionCounts(tp=3, fp=1, tn=4, fn=2))
        assert m.accuracy == pytest.approx(0.7)
        assert m.precision == pytest.approx(0.75)
        assert m.recall == pytest.approx(0.6)
        assert m.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35)
        assert m.f1 == pytest.approx(0.6667, abs=5e-5)

    def test_perfect_classifier(self):
        m = metrics_from_confusion(ConfusionCounts(tp=5, fp=0, tn=7, fn=0))
        assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)

    def test_no_positives_recall_undefined(self):
        m = metrics_from_confusion(ConfusionCounts(tp=0, fp=2, tn=5, fn=0))
        assert m.recall is None
        assert m.f1 == 0.0

    def test_no_predicted_positives_precision_undefined(self):
        m = metrics_from_confusion(ConfusionCounts(tp=0, fp=0, tn=5, fn=3))
        assert m.precision is None
        assert m.f1 == 0.0

    @settings(max_examples=60, deadline=None)
    @given(
        tp=st.integers(0, 40), fp=st.integers(0, 40),
        tn=st.integers(0, 40), fn=st.integers(0, 40),
    )
    def test_f1_identity(self, tp, fp, tn, fn):
        if tp + fp + tn + fn == 0:
            return
        m = metrics_from_confusion(ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn))
        if 2 * tp + fp + fn > 0 and m.precision is not None and m.recall is not None:
            assert m.f1 == pytest.approx(2 * tp / (2 * tp + fp + fn), abs=1e-12)

    def test_confusion_transpose_under_relabeling(self, rng):
        pred = np.where(rng.random(40) > 0.5, 1, -1)
        truth = np.where(rng.random(40) > 0.5, 1, -1)
        c = ConfusionCounts.from_predictions(pred, truth)
        flipped = ConfusionCounts.from_predictions(-pred, -truth)
        assert (flipped.tp, flipped.tn, flipped.fp, flipped.fn) == (c.tn, c.tp, c.fn, c.fp)
        m_flipped = metrics_from_confusion(flipped)
        if c.tn + c.fn > 0:
            assert m_flipped.precision == pytest.approx(c.tn / (c.tn + c.fn))

    def test_missed_fraction_is_one_minus_recall(self):
        c = ConfusionCounts(tp=317, fp=40, tn=357, fn=32)  # ~9.2% positives missed
        m = metrics_from_confusion(c)
        assert c.fn / (c.tp + c.fn) == pytest.approx(1.0 - m.recall)


class TestRocAuc:
    def test_perfect_separation(self):
        scores = [0.9, 0.8, 0.7, 0.1]
        truths = [1, 1, -1, -1]
        _pts, auc = roc_auc(scores, truths)
        assert auc == 1.0

    def test_interleaved_scores(self):
        scores = [0.8, 0.4, 0.6, 0.2]
        truths = [1, 1, -1, -1]
        _pts, auc = roc_auc(scores, truths)
        assert auc == pytest.approx(0.75)
        assert auc == pytest.approx(oracles.pair_count_auc(scores, truths))

    def test_all_identical_scores(self):
        _pts, auc = roc_auc([0.5] * 8, [1, 1, 1, -1, -1, -1, 1, -1])
        assert auc == pytest.approx(0.5)

    def test_single_class_raises(self):
        with pytest.raises(SingleClass):
            roc_auc([0.1, 0.2], [1, 1])

    def test_curve_endpoints(self, rng):
        scores = rng.normal(0, 1, 30)
        truths = np.where(rng.random(30) > 0.5, 1, -1)
        truths[:2] = [1, -1]
        pts, _auc = roc_auc(scores, truths)
        assert np.array_equal(pts[0], [0.0, 0.0])
        assert np.array_equal(pts[-1], [1.0, 1.0])
        assert np.all(np.diff(pts[:, 0]) >= 0)
        assert np.all(np.diff(pts[:, 1]) >= 0)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(2, 50), ties=st.booleans())
    def test_trapezoid_equals_pair_count(self, seed, n, ties):
        r = np.random.default_rng(seed)
        scores = r.integers(0, 4, n) / 3.0 if ties else r.normal(0, 1, n)
        truths = np.where(r.random(n) > 0.5, 1, -1)
        truths[0] = 1
        truths[-1] = -1
        _pts, auc = roc_auc(scores, truths)
        assert auc == pytest.approx(oracles.pair_count_auc(scores, truths), abs=1e-12)

    def test_symmetry_under_relabeling(self, rng):
        scores = rng.normal(0, 1, 40)
        truths = np.where(rng.random(40) > 0.5, 1, -1)
        truths[:2] = [1, -1]
        _p, auc = roc_auc(scores, truths)
        _p2, auc_flipped = roc_auc(-scores, -truths)
        assert auc_flipped == pytest.approx(auc, abs=1e-12)


class TestCrossValidate:
    def test_separable_blobs_all_folds_perfect(self, rng):
        n = 100
        X = np.vstack([
            rng.normal(0, 1, (n, 4)) + 8.0,
            rng.normal(0, 1, (n, 4)) - 8.0,
        ])
        y = np.array([1] * n + [-1] * n)
        rep = cross_validate(X, y, NuSvmConfig(nu=0.4, gamma=0.05, max_iter=5000, tol=1e-5),
                             k=10, seed=0)
        for m in rep.folds:
            assert m.accuracy == 1.0
            assert m.auc == 1.0
        assert rep.mean.accuracy == 1.0
        assert rep.std.accuracy == 0.0

    def test_permutation_null_accuracy(self, rng):
        n = 200
        X = rng.normal(0, 1, (n, 3))
        accs = []
        for rep_i in range(20):
            y = np.array([1] * (n // 2) + [-1] * (n // 2))
            rng.shuffle(y)
            rep = cross_validate(
                X, y, NuSvmConfig(nu=0.5, gamma=0.5, max_iter=300, tol=1e-3),
                k=5, seed=rep_i,
            )
            accs.append(rep.mean.accuracy)
        assert abs(float(np.mean(accs)) - 0.5) <= 0.1

    def test_full_scale_report_structure(self, rng):
        y = labels_746()
        X = rng.normal(0, 1, (746, 8)) + 0.3 * y[:, None]
        rep = cross_validate(X, y, NuSvmConfig(nu=0.4, gamma=0.0098, max_iter=200), k=10, seed=1)
        assert len(rep.folds) == 10
        assert len(rep.curves) == 10
        assert rep.k == 10
        assert rep.std_kind == "sample"
        for name in ("accuracy", "recall", "precision", "f1", "auc"):
            mean = getattr(rep.mean, name)
            vals = [getattr(m, name) for m in rep.folds]
            assert min(vals) <= mean <= max(vals)
            assert getattr(rep.std, name) >= 0.0

    def test_mean_std_sample_convention(self):
        y = np.array([1] * 20 + [-1] * 20)
        X = np.vstack([np.random.default_rng(0).normal(0, 1, (20, 2)) + 5,
                       np.random.default_rng(1).normal(0, 1, (20, 2)) - 5])
        rep = cross_validate(X, y, NuSvmConfig(nu=0.4, gamma=0.1, max_iter=2000), k=4, seed=0)
        vals = [m.accuracy for m in rep.folds]
        assert rep.std.accuracy == pytest.approx(float(np.std(vals, ddof=1)), abs=1e-12)

    def test_infeasible_nu_names_fold(self):
        y = np.array([1] * 12 + [-1] * 24)
        X = np.random.default_rng(2).normal(0, 1, (36, 2))
        with pytest.raises(InfeasibleNu, match="fold 0"):
            cross_validate(X, y, NuSvmConfig(nu=0.8, gamma=1.0, max_iter=100), k=2, seed=0)

    def test_k_exceeding_class_count_rejected(self):
        y = np.array([1] * 5 + [-1] * 40)
        X = np.random.default_rng(3).normal(0, 1, (45, 2))
        with pytest.raises(BadK):
            cross_validate(X, y, NuSvmConfig(nu=0.2, gamma=1.0, max_iter=100), k=8, seed=0)
