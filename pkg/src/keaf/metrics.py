"""Micro/macro precision, recall and F1 for multi-label episode predictions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import DataError


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return _ratio(2 * p * r, p + r)


@dataclass
class EvalReport:
    """Per-class TP/FP/FN counts; classes are keyed by label id."""

    tp: dict[str, int] = field(default_factory=dict)
    fp: dict[str, int] = field(default_factory=dict)
    fn: dict[str, int] = field(default_factory=dict)
    pairs: int = 0
    episodes: int = 0

    def accumulate(self, predicted: Iterable[str], gold: Iterable[str], universe: Iterable[str]) -> "EvalReport":
        universe = set(universe)
        predicted, gold = set(predicted), set(gold)
        stray = (predicted | gold) - universe
        if stray:
            raise DataError(f"labels outside the class universe: {sorted(stray)}")
        for lid in universe:
            self.tp.setdefault(lid, 0)
            self.fp.setdefault(lid, 0)
            self.fn.setdefault(lid, 0)
        for lid in predicted & gold:
            self.tp[lid] += 1
        for lid in predicted - gold:
            self.fp[lid] += 1
        for lid in gold - predicted:
            self.fn[lid] += 1
        self.pairs += 1
        return self

    def merge(self, other: "EvalReport") -> "EvalReport":
        out = EvalReport(dict(self.tp), dict(self.fp), dict(self.fn), self.pairs, self.episodes)
        for mine, theirs in ((out.tp, other.tp), (out.fp, other.fp), (out.fn, other.fn)):
            for lid, c in theirs.items():
                mine[lid] = mine.get(lid, 0) + c
        out.pairs += other.pairs
        out.episodes += other.episodes
        return out

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented
        return self.finalize() == other.finalize() and (
            self.tp, self.fp, self.fn, self.pairs, self.episodes
        ) == (other.tp, other.fp, other.fn, other.pairs, other.episodes)

    def finalize(self) -> dict[str, Any]:
        if self.pairs == 0:
            raise DataError("no predictions accumulated")
        classes = sorted(self.tp)
        TP = sum(self.tp.values())
        FP = sum(self.fp.values())
        FN = sum(self.fn.values())
        mic_p = _ratio(TP, TP + FP)
        mic_r = _ratio(TP, TP + FN)
        ps, rs, fs = [], [], []
        for lid in classes:
            p = _ratio(self.tp[lid], self.tp[lid] + self.fp[lid])
            r = _ratio(self.tp[lid], self.tp[lid] + self.fn[lid])
            ps.append(p)
            rs.append(r)
            fs.append(_f1(p, r))
        n = len(classes)
        return {
            "mac_p": sum(ps) / n,
            "mac_r": sum(rs) / n,
            "mac_f1": sum(fs) / n,
            "mic_p": mic_p,
            "mic_r": mic_r,
            "mic_f1": _f1(mic_p, mic_r),
            "classes": n,
            "pairs": self.pairs,
            "episodes": self.episodes,
        }


def accumulate(report: EvalReport, predicted, gold, universe) -> EvalReport:
    return report.accumulate(predicted, gold, universe)


def finalize(report: EvalReport) -> dict[str, Any]:
    return report.finalize()


SCORE_COLUMNS = ("mac_p", "mac_r", "mac_f1", "mic_p", "mic_r", "mic_f1")
COLUMN_TITLES = ("Mac-P", "Mac-R", "Mac-F1", "Mic-P", "Mic-R", "Mic-F1")


def format_table(rows: list[tuple[str, dict[str, Any]]]) -> str:
    """Percent-scaled table with the Mac-P ... Mic-F1 column order."""
    width = max([len("Model")] + [len(name) for name, _ in rows])
    lines = [f"{'Model':<{width}}  " + "  ".join(f"{t:>7}" for t in COLUMN_TITLES)]
    for name, scores in rows:
        lines.append(
            f"{name:<{width}}  " + "  ".join(f"{100 * scores[c]:7.2f}" for c in SCORE_COLUMNS)
        )
    return "\n".join(lines)
