"""One-token generation timing over a fixed seeded prompt set."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import Model, model_forward
from .plan import SkipPlan

HEADER_NOTE = "times cover forward passes only (no tokenization or host-side overhead)"


def generate_sequences(seed: int, count: int, length: int, vocab_size: int) -> list[list[int]]:
    """``count`` uniform random token sequences of ``length`` ids; identical for identical arguments."""
    if count < 0 or length < 1 or vocab_size < 1:
        raise ValueError("need count >= 0, length >= 1, vocab_size >= 1")
    rng = np.random.default_rng(seed)
    return rng.integers(0, vocab_size, size=(count, length)).tolist()


def predict_next(model: Model, tokens: Sequence[int], plan: SkipPlan | None = None) -> int:
    """Greedy single-token prediction."""
    return int(np.argmax(model_forward(tokens, model, plan)[-1]))


def improvement_pct(t_variant: float, t_baseline: float) -> float:
    if t_baseline <= 0:
        raise ValueError("baseline time must be positive")
    return 100.0 * (t_baseline - t_variant) / t_baseline


@dataclass
class TimingReport:
    label: str
    seq_len: int
    count: int
    total_seconds: float
    predictions: list[int] = field(default_factory=list, repr=False)
    improvement: float | None = None

    @property
    def mean_seconds(self) -> float:
        return self.total_seconds / self.count

    def against(self, baseline: "TimingReport") -> "TimingReport":
        self.improvement = improvement_pct(self.mean_seconds, baseline.mean_seconds)
        return self

    def to_dict(self, include_times: bool = True) -> dict:
        out = {"label": self.label, "seq_len": self.seq_len, "count": self.count, "predictions": self.predictions}
        if include_times:
            out.update(
                total_seconds=self.total_seconds,
                mean_seconds=self.mean_seconds,
                mean_seconds_x100=100 * self.mean_seconds,
                improvement_pct=self.improvement,
            )
        return out


def time_one_token(
    model: Model,
    sequences: Sequence[Sequence[int]],
    plan: SkipPlan | None = None,
    label: str = "",
    warmup: bool = True,
) -> TimingReport:
    """Predict one token per sequence inside a single timed interval.

    The first sequence is run once untimed to warm caches; the timed interval
    then spans the first through last sequence and is averaged over the count.
    """
    if not sequences:
        raise ValueError("no sequences to time")
    if warmup:
        predict_next(model, sequences[0], plan)
    preds = []
    start = time.perf_counter()
    for seq in sequences:
        preds.append(predict_next(model, seq, plan))
    total = time.perf_counter() - start
    return TimingReport(label, len(sequences[0]), len(sequences), total, preds)


def timing_table(rows: dict[str, dict[str, TimingReport | None]], columns: Sequence[str]) -> str:
    """Rows = variants, column groups = skip modes, each with Time(s) x 10^2 and (%)."""
    header = ["Model"]
    for c in columns:
        header += [f"{c} Time(s)x10^2", f"{c} (%)"]
    lines = [f"# {HEADER_NOTE}", "| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for label, cells in rows.items():
        out = [label]
        for c in columns:
            r = cells.get(c)
            if r is None:
                out += ["-", "-"]
            else:
                out += [f"{100 * r.mean_seconds:.4f}", f"{r.improvement or 0:.2f}"]
        lines.append("| " + " | ".join(out) + " |")
    return "\n".join(lines) + "\n"
