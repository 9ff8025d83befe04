import json

import numpy as np
import pytest

from keaf.errors import DataError
from keaf.metrics import EvalReport, accumulate, finalize, format_table


def brute_force_scores(pairs, universe):
    """Confusion matrices built from scratch, one indicator per (pair, class)."""
    classes = sorted(universe)
    tp = np.zeros(len(classes))
    fp = np.zeros(len(classes))
    fn = np.zeros(len(classes))
    for pred, gold in pairs:
        for k, c in enumerate(classes):
            p, g = c in pred, c in gold
            tp[k] += p and g
            fp[k] += p and not g
            fn[k] += g and not p

    def div(a, b):
        return np.where(b > 0, a / np.where(b > 0, b, 1), 0.0)

    p = div(tp, tp + fp)
    r = div(tp, tp + fn)
    f = div(2 * p * r, p + r)
    TP, FP, FN = tp.sum(), fp.sum(), fn.sum()
    mp = TP / (TP + FP) if TP + FP else 0.0
    mr = TP / (TP + FN) if TP + FN else 0.0
    mf = 2 * mp * mr / (mp + mr) if mp + mr else 0.0
    return {"mac_p": p.mean(), "mac_r": r.mean(), "mac_f1": f.mean(), "mic_p": mp, "mic_r": mr, "mic_f1": mf}


def random_pairs(rng, n, universe):
    universe = sorted(universe)
    out = []
    for _ in range(n):
        pred = {c for c in universe if rng.random() < 0.35}
        gold = {c for c in universe if rng.random() < 0.35}
        out.append((pred, gold))
    return out


class TestExamples:
    def test_perfect(self):
        s = EvalReport().accumulate({"A", "B"}, {"A", "B"}, "AB").finalize()
        assert s["mic_f1"] == 1.0 and s["mac_f1"] == 1.0

    def test_half_recall(self):
        s = EvalReport().accumulate({"A"}, {"A", "B"}, "AB").finalize()
        assert s["mic_p"] == 1.0
        assert s["mic_r"] == 0.5
        assert s["mic_f1"] == pytest.approx(2 / 3, abs=1e-15)
        assert s["mac_r"] == 0.5

    def test_empty_prediction_zero_division(self):
        s = EvalReport().accumulate(set(), {"A"}, "AB").finalize()
        assert s["mic_p"] == 0.0
        assert s["mic_f1"] == 0.0
        assert s["mac_p"] == 0.0

    def test_label_outside_universe(self):
        with pytest.raises(DataError, match="outside the class universe"):
            EvalReport().accumulate({"Z"}, {"A"}, "AB")

    def test_nothing_accumulated(self):
        with pytest.raises(DataError):
            EvalReport().finalize()

    def test_functional_aliases(self):
        r = accumulate(EvalReport(), {"A"}, {"A"}, "A")
        assert finalize(r)["mic_f1"] == 1.0


class TestOracle:
    def test_matches_brute_force(self, rng):
        universe = {f"L{i}" for i in range(7)}
        pairs = random_pairs(rng, 300, universe)
        report = EvalReport()
        for pred, gold in pairs:
            report.accumulate(pred, gold, universe)
        got = report.finalize()
        want = brute_force_scores(pairs, universe)
        for key, value in want.items():
            assert abs(got[key] - value) <= 1e-12, key

    def test_scores_in_unit_interval_and_micro_harmonic(self, rng):
        report = EvalReport()
        for pred, gold in random_pairs(rng, 50, "ABCD"):
            report.accumulate(pred, gold, "ABCD")
        s = report.finalize()
        for key in ("mac_p", "mac_r", "mac_f1", "mic_p", "mic_r", "mic_f1"):
            assert 0.0 <= s[key] <= 1.0
        assert s["mic_f1"] == pytest.approx(2 * s["mic_p"] * s["mic_r"] / (s["mic_p"] + s["mic_r"]))

    def test_merge_equals_joint_accumulation(self, rng):
        pairs = random_pairs(rng, 40, "ABCDE")
        joint, a, b = EvalReport(), EvalReport(), EvalReport()
        for i, (pred, gold) in enumerate(pairs):
            joint.accumulate(pred, gold, "ABCDE")
            (a if i % 2 else b).accumulate(pred, gold, "ABCDE")
        assert a.merge(b) == joint

    def test_episode_universes_accumulate_per_class(self):
        report = EvalReport()
        report.accumulate({"A"}, {"A"}, "AB")
        report.accumulate({"C"}, {"D"}, "CD")
        s = report.finalize()
        assert s["classes"] == 4
        assert s["mac_f1"] == pytest.approx(0.25)


class TestFormatting:
    def test_table_and_json(self):
        s = EvalReport().accumulate({"A"}, {"A", "B"}, "AB").finalize()
        text = format_table([("full", s)])
        assert "Mic-F1" in text and "full" in text
        assert json.loads(json.dumps(s)) == s
