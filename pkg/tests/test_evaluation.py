import json

import numpy as np
import pytest

from hostnet import FINE_LABELS, LABELS
from hostnet.errors import ConfigError, DimensionError, UndefinedMetricError
from hostnet.evaluation import (
    EvalReport,
    coarse_f1,
    confusion_matrix,
    evaluate,
    f1_per_class,
    pca_project,
    weighted_fine_f1,
)
from hostnet.model import LabelVector
from oracles import binary_counts, binary_f1


def random_labels(rng, n):
    out = []
    for _ in range(n):
        if rng.random() < 0.5:
            out.append(LabelVector())
        else:
            out.append(LabelVector(True, *(bool(v) for v in rng.integers(0, 2, size=4))))
    return out


def oracle_weighted_fine(preds, golds):
    num = den = 0.0
    for k, name in enumerate(LABELS):
        if name not in FINE_LABELS:
            continue
        p = [bool(v.to_array()[k]) for v in preds]
        g = [bool(v.to_array()[k]) for v in golds]
        _, _, f1, support = binary_f1(p, g)
        num += support * f1
        den += support
    return num / den


def oracle_coarse(preds, golds):
    p = [v.hostile for v in preds]
    g = [v.hostile for v in golds]
    _, _, f_pos, s_pos = binary_f1(p, g)
    _, _, f_neg, s_neg = binary_f1([not x for x in p], [not x for x in g])
    return (s_pos * f_pos + s_neg * f_neg) / (s_pos + s_neg)


class TestF1:
    def test_perfect(self, rng):
        golds = random_labels(rng, 30)
        for name, s in f1_per_class(golds, golds).items():
            if s.support:
                assert s.f1 == 1.0
        assert weighted_fine_f1(golds, golds) == 1.0
        assert coarse_f1(golds, golds) == 1.0

    def test_all_negative_predictions(self):
        golds = [LabelVector(True, True), LabelVector(True, False)]
        preds = [LabelVector(True), LabelVector(True)]
        assert f1_per_class(preds, golds)["fake"].f1 == 0.0

    def test_hand_case(self):
        # fake: TP on 0,1; FP on 2; FN on 3; TN on 4,5
        golds = [LabelVector(True, True), LabelVector(True, True), LabelVector(True),
                 LabelVector(True, True), LabelVector(), LabelVector()]
        preds = [LabelVector(True, True), LabelVector(True, True), LabelVector(True, True),
                 LabelVector(True), LabelVector(), LabelVector()]
        s = f1_per_class(preds, golds)["fake"]
        assert (s.precision, s.recall, s.support) == (2 / 3, 2 / 3, 3)
        assert s.f1 == pytest.approx(2 / 3, abs=1e-15)

    def test_weighted_by_support(self):
        # fake: support 3, all right; hate: support 1, missed
        golds = [LabelVector(True, True)] * 2 + [LabelVector(True, True, True)]
        preds = [LabelVector(True, True)] * 3
        assert weighted_fine_f1(preds, golds) == 0.75

    def test_undefined_without_fine_support(self):
        with pytest.raises(UndefinedMetricError):
            weighted_fine_f1([LabelVector(True)], [LabelVector(True)])

    def test_coarse_hand_value(self):
        golds = [LabelVector(True), LabelVector(True), LabelVector(), LabelVector()]
        preds = [LabelVector(True)] * 4
        # hostile: P=1/2 R=1 F1=2/3 (support 2); non-hostile: F1=0 (support 2)
        assert coarse_f1(preds, golds) == pytest.approx(1 / 3, abs=1e-15)

    def test_coarse_invariant_under_class_flip(self, rng):
        preds, golds = random_labels(rng, 25), random_labels(rng, 25)
        flip = lambda vs: [LabelVector(not v.hostile) for v in vs]
        assert coarse_f1(preds, golds) == pytest.approx(coarse_f1(flip(preds), flip(golds)), abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            f1_per_class([LabelVector()], [])

    def test_oracles(self, rng):
        for _ in range(20):
            n = int(rng.integers(5, 40))
            preds, golds = random_labels(rng, n), random_labels(rng, n)
            scores = f1_per_class(preds, golds)
            for k, name in enumerate(LABELS):
                want = binary_f1([bool(v.to_array()[k]) for v in preds], [bool(v.to_array()[k]) for v in golds])
                got = scores[name]
                assert abs(got.precision - want[0]) <= 1e-12
                assert abs(got.recall - want[1]) <= 1e-12
                assert abs(got.f1 - want[2]) <= 1e-12
                assert got.support == want[3]
            assert abs(weighted_fine_f1(preds, golds) - oracle_weighted_fine(preds, golds)) <= 1e-12
            assert abs(coarse_f1(preds, golds) - oracle_coarse(preds, golds)) <= 1e-12


class TestConfusion:
    def test_perfect(self, rng):
        golds = random_labels(rng, 12)
        for (tn, fp), (fn, tp) in confusion_matrix(golds, golds).counts.values():
            assert fp == fn == 0

    def test_single_wrong_head(self):
        counts = confusion_matrix([LabelVector(True, True)], [LabelVector(True)]).counts
        assert counts["fake"] == ((0, 1), (0, 0))
        assert counts["hostile"] == ((0, 0), (0, 1))

    def test_counting_oracle(self, rng):
        preds, golds = random_labels(rng, 10), random_labels(rng, 10)
        conf = confusion_matrix(preds, golds)
        for k, name in enumerate(LABELS):
            tp, fp, fn, tn = binary_counts([v.to_array()[k] for v in preds], [v.to_array()[k] for v in golds])
            assert conf.counts[name] == ((tn, fp), (fn, tp))
            assert tp + fp + fn + tn == 10
        assert len(conf.table().splitlines()) == 6


class TestReport:
    def test_json_round_trip(self, rng):
        preds, golds = random_labels(rng, 15), random_labels(rng, 15)
        report = evaluate(preds, golds)
        again = EvalReport.from_dict(json.loads(report.to_json()))
        assert again == report
        assert again.to_json() == report.to_json()

    def test_invariants(self, rng):
        report = evaluate(random_labels(rng, 30), random_labels(rng, 30))
        for s in report.per_class.values():
            assert 0 <= s.precision <= 1 and 0 <= s.recall <= 1 and 0 <= s.f1 <= 1
            hm = 2 * s.precision * s.recall / (s.precision + s.recall) if s.precision + s.recall else 0
            assert s.f1 == pytest.approx(hm, abs=1e-15)
        assert "weighted fine F1" in report.to_text()


class TestPca:
    def test_points_on_axis(self):
        x = np.array([[-2.0, 0.0], [0.5, 0.0], [3.0, 0.0], [1.0, 0.0]])
        proj = pca_project(x, 1)
        np.testing.assert_allclose(np.abs(proj.components[0]), [1.0, 0.0], atol=1e-12)
        assert proj.explained_ratio[0] == pytest.approx(1.0, abs=1e-12)

    def test_collinear_3d(self, rng):
        t = rng.normal(size=20)
        x = np.outer(t, [1.0, -2.0, 0.5]) + [3.0, 1.0, -1.0]
        proj = pca_project(x, 2)
        assert proj.explained_ratio[0] == pytest.approx(1.0, abs=1e-12)
        assert proj.explained_ratio[1] == pytest.approx(0.0, abs=1e-12)

    def test_full_reconstruction_and_oracle(self, rng):
        x = rng.normal(size=(50, 10)) * rng.uniform(0.5, 3.0, size=10)
        proj = pca_project(x, 10)
        assert np.max(np.abs(proj.reconstruct() - x)) <= 1e-9
        # independent route: singular values of the centered data
        s = np.linalg.svd(x - x.mean(axis=0), compute_uv=False)
        np.testing.assert_allclose(proj.explained_ratio, s**2 / np.sum(s**2), atol=1e-9)
        np.testing.assert_allclose(proj.components @ proj.components.T, np.eye(10), atol=1e-9)
        assert np.all(np.diff(proj.explained_ratio) <= 0)

    def test_sign_convention(self, rng):
        proj = pca_project(rng.normal(size=(30, 4)), 3)
        for comp in proj.components:
            assert comp[np.argmax(np.abs(comp))] > 0

    def test_row_permutation(self, rng):
        x = rng.normal(size=(25, 5))
        perm = rng.permutation(25)
        a, b = pca_project(x, 2), pca_project(x[perm], 2)
        for k in range(2):
            same = np.allclose(b.coordinates[:, k], a.coordinates[perm, k], atol=1e-9)
            flipped = np.allclose(b.coordinates[:, k], -a.coordinates[perm, k], atol=1e-9)
            assert same or flipped

    def test_bad_k(self, rng):
        with pytest.raises(ConfigError):
            pca_project(rng.normal(size=(3, 5)), 3)
        with pytest.raises(ConfigError):
            pca_project(rng.normal(size=(10, 2)), 0)
