from dataclasses import dataclass, field

import numpy as np
import pytest

from glyphspot.classifiers import KnnModel, Prediction, SvmModel
from glyphspot.encoder import train_encoder
from glyphspot.errors import ModelFeatureMismatch, UnlabeledData
from glyphspot.features import HogParams, hog, pca_fit
from glyphspot.pipeline import (
    CascadeModel,
    EncoderClassifier,
    FeatureClassifier,
    Metrics,
    SpotConfig,
    cascade_evaluate_oracle,
    cascade_predict,
    evaluate,
    spot,
    spotting_score,
    SpotReport,
)
from glyphspot.raster import GrayImage, SynthConfig, synth_page
from glyphspot.segmentation import Box, iou


@dataclass
class Stub:
    """Scripted classifier: answers from a queue or a fixed rule."""

    rule: object
    calls: int = 0

    def predict(self, x) -> Prediction:
        self.calls += 1
        out = self.rule(x) if callable(self.rule) else self.rule
        return out


class TestMetrics:
    def test_formula_arithmetic(self):
        m = Metrics(tp=2, fp=1, tn=6, fn=1)
        assert m.accuracy == 0.8
        assert m.precision == pytest.approx(2 / 3)
        assert m.recall == pytest.approx(2 / 3)
        assert m.f1 == pytest.approx(0.6667, abs=1e-4)

    def test_f1_zero_when_no_positives(self):
        m = Metrics(tp=0, fp=0, tn=5, fn=0)
        assert m.f1 == 0.0 and m.precision == 0.0

    def test_to_dict_counts(self):
        d = Metrics(1, 2, 3, 4).to_dict()
        assert d["confusion"] == {"tp": 1, "fp": 2, "tn": 3, "fn": 4}


class TestEvaluate:
    def test_perfect_predictions(self):
        clf = Stub(lambda x: Prediction(x, 1.0, float(x)))
        samples = [(0, 0), (1, 1), (1, 1), (0, 0)]
        m = evaluate(clf, samples)
        assert m.accuracy == 1.0 and m.f1 == 1.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        clf = Stub(lambda x: Prediction(int(x > 0.3), 0.9, x))
        samples = [(float(v), int(v > 0.5)) for v in rng.random(40)]
        a = evaluate(clf, samples)
        b = evaluate(clf, list(reversed(samples)))
        assert a.to_dict() == b.to_dict()

    def test_unlabeled_rejected(self):
        with pytest.raises(UnlabeledData):
            evaluate(Stub(Prediction(1, 1.0, 1.0)), [(0, None)])


class TestCascadePredict:
    def test_confident_first_short_circuits(self):
        second = Stub(Prediction(0, 1.0, 0.0))
        cascade = CascadeModel(Stub(Prediction(1, 1.0, 1.0)), second)
        for _ in range(5):
            assert cascade_predict(cascade, object()).label == 1
        assert second.calls == 0

    def test_threshold_half_equals_first_alone(self):
        rng = np.random.default_rng(1)
        preds = [Prediction(int(c > 0.75), float(c), c) for c in rng.uniform(0.5, 1.0, 50)]
        it = iter(list(preds))
        cascade = CascadeModel(Stub(lambda x: next(it)), Stub(Prediction(0, 1.0, 0.0)), threshold=0.5)
        outs = [cascade_predict(cascade, i) for i in range(50)]
        assert [p.label for p in outs] == [p.label for p in preds]
        assert not any(p.routed_to_second for p in outs)

    def test_routed_fraction_matches_low_confidence_fraction(self):
        rng = np.random.default_rng(2)
        confidences = rng.uniform(0.5, 1.0, 200)
        preds = iter([Prediction(1, float(c), c) for c in confidences])
        cascade = CascadeModel(Stub(lambda x: next(preds)), Stub(Prediction(0, 0.6, 0.0)), threshold=0.8)
        outs = [cascade_predict(cascade, i) for i in range(200)]
        routed = sum(p.routed_to_second for p in outs)
        assert routed == int((confidences < 0.8).sum())

    def test_oracle_mode_cannot_predict(self):
        cascade = CascadeModel(Stub(Prediction(1, 1.0, 1.0)), Stub(Prediction(0, 1.0, 0.0)), mode="oracle")
        with pytest.raises(ValueError):
            cascade_predict(cascade, 0)

    def test_identical_stages_rejected(self):
        stub = Stub(Prediction(1, 1.0, 1.0))
        with pytest.raises(ValueError):
            CascadeModel(stub, stub)

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            CascadeModel(Stub(None), Stub(None), threshold=0.3)


class TestCascadeOracle:
    def test_perfect_first_equals_first(self):
        first = Stub(lambda x: Prediction(x, 1.0, x))
        second = Stub(lambda x: Prediction(1 - x, 1.0, x))
        samples = [(i % 2, i % 2) for i in range(20)]
        m = cascade_evaluate_oracle(first, second, samples)
        assert m.accuracy == 1.0
        assert second.calls == 0

    def test_counting_arithmetic_85_percent(self):
        # first correct on 60 of 100; second fixes 25 of the 40 misses
        samples = [(i, 1) for i in range(100)]
        first = Stub(lambda i: Prediction(1 if i < 60 else 0, 1.0, 0.0))
        second = Stub(lambda i: Prediction(1 if i < 85 else 0, 1.0, 0.0))
        m = cascade_evaluate_oracle(first, second, samples)
        assert m.accuracy == pytest.approx(0.85)

    def test_combined_never_below_first(self):
        rng = np.random.default_rng(3)
        samples = [(i, int(v)) for i, v in enumerate(rng.integers(0, 2, 60))]
        first = Stub(lambda i: Prediction(int(rng.random() > 0.5), 1.0, 0.0))
        second = Stub(lambda i: Prediction(int(rng.random() > 0.5), 1.0, 0.0))
        # replay with frozen decisions for a fair comparison
        rng = np.random.default_rng(4)
        first_preds = {i: Prediction(int(rng.random() > 0.4), 1.0, 0.0) for i, _ in samples}
        second_preds = {i: Prediction(int(rng.random() > 0.6), 1.0, 0.0) for i, _ in samples}
        first = Stub(lambda i: first_preds[i])
        second = Stub(lambda i: second_preds[i])
        combined = cascade_evaluate_oracle(first, second, samples)
        alone = evaluate(Stub(lambda i: first_preds[i]), samples)
        assert combined.accuracy >= alone.accuracy


class TestSpot:
    def test_blank_page_empty_report(self):
        from glyphspot.errors import DegenerateImageWarning

        page = GrayImage(np.full((60, 80), 0.9))
        with pytest.warns(DegenerateImageWarning):
            report = spot(page, Stub(Prediction(1, 1.0, 1.0)), page_id="p0")
        assert report.accepted == [] and report.rejected == []

    def test_truth_stub_accepts_exactly_character_boxes(self):
        cfg = SynthConfig(width=320, height=200, glyphs=4, rejects=2, noise_sigma=0.0)
        page = synth_page(cfg, seed=17)
        chars = [b for b, l in zip(page.truth_boxes, page.truth_labels) if l == "character"]

        def truth_rule(kernel):
            hit = any(iou(kernel.source_box, c) >= 0.5 for c in chars)
            return Prediction(1 if hit else 0, 1.0, float(hit))

        report = spot(page.image, Stub(truth_rule), SpotConfig(gap_threshold=4, min_area=10))
        got = sorted(b.as_tuple() for b, _ in report.accepted)
        assert got == sorted(chars)

    def test_partition_total_and_disjoint(self):
        cfg = SynthConfig(width=320, height=200, glyphs=4, rejects=2, noise_sigma=0.05)
        page = synth_page(cfg, seed=19)
        rng = np.random.default_rng(5)
        clf = Stub(lambda k: Prediction(int(rng.random() > 0.5), 0.8, 0.5))
        report = spot(page.image, clf, SpotConfig(gap_threshold=4, min_area=10))
        all_boxes = [b for b, _ in report.accepted] + [b for b, _ in report.rejected]
        assert len(all_boxes) == len(set(b.as_tuple() for b in all_boxes))
        assert len(all_boxes) == len(page.truth_boxes)
        assert all(0.0 <= s <= 1.0 for _, s in report.accepted + report.rejected)

    def test_report_json_shape(self):
        report = SpotReport("p1", [(Box(1, 2, 3, 4), 0.9)], [], "m", {"gap_threshold": 4})
        d = report.to_dict()
        assert d["page"] == "p1"
        assert d["accepted"] == [{"box": [1, 2, 3, 4], "score": 0.9}]
        assert d["model"] == "m"


class TestSpottingScore:
    def test_hand_counts(self):
        truths = [([(0, 0, 10, 10), (20, 0, 10, 10), (40, 0, 10, 10)],
                   ["character", "character", "reject"])]
        reports = [SpotReport("p", [(Box(0, 0, 10, 10), 0.9), (Box(60, 0, 5, 5), 0.8)], [], "m", {})]
        score = spotting_score(reports, truths)
        assert (score.tp, score.fp, score.fn) == (1, 1, 1)
        assert score.precision == 0.5 and score.recall == 0.5 and score.f1 == 0.5


class TestClassifierWrappers:
    def test_feature_classifier_requires_pca(self):
        with pytest.raises(ModelFeatureMismatch):
            FeatureClassifier(KnnModel(np.zeros((3, 2)), np.array([0, 1, 0]), k=1), None)

    def test_knn_bundle_predicts_on_kernels(self):
        rng = np.random.default_rng(6)
        kernels = rng.uniform(0, 1, size=(12, 48, 32))
        feats = np.array([hog(k) for k in kernels])
        pca = pca_fit(feats, k=8)
        from glyphspot.features import pca_transform

        X = pca_transform(pca, feats)
        labels = np.array([0, 1] * 6)
        clf = FeatureClassifier(KnnModel(X, labels, k=1), pca)
        pred = clf.predict(kernels[3])
        assert pred.label == labels[3] and pred.confidence == 1.0

    def test_svm_bundle_kind(self):
        pca = pca_fit(np.random.default_rng(7).normal(size=(10, 540)), k=4)
        clf = FeatureClassifier(SvmModel(np.zeros(4), 0.0), pca)
        assert clf.kind == "svm"
        assert clf.predict(np.full((48, 32), 0.5)).label == 0

    def test_encoder_classifier_tie_goes_to_reject(self):
        X = np.concatenate([np.zeros((4, 1, 48, 32)), np.ones((4, 1, 48, 32))])
        y = np.array([1, 1, 1, 1, 0, 0, 0, 0])
        model = train_encoder(X, y, epochs=2, seed=0)
        clf = EncoderClassifier(model)
        pred = clf.predict(np.zeros((48, 32)))
        assert pred.label in (0, 1)
        assert 0.5 <= pred.confidence <= 1.0
        assert pred.char_probability == pytest.approx(pred.raw_score)
