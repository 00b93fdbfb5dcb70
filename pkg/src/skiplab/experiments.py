"""Experiment drivers shared by the CLI and scripts: tracing, sweeps, first-vs-last."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from .bench import TimingReport, generate_sequences, time_one_token
from .checkpoint import decode_checkpoint
from .evaluation import EvalItem, EvalReport, evaluate, load_tasks
from .model import Model, model_forward
from .plan import SkipPlan, SkipSpec, SkipTarget, all_active, first_skip_plan, plan_from_spec, resolve_skip_count, tail_skip_plan
from .trace import LayerTrace
from .trainer import batch_loss

KEEP_FRACTIONS = (0.66, 0.75, 0.90, 1.0)
MODES = (SkipTarget.FULL, SkipTarget.ATTENTION, SkipTarget.FFWD)


def toy_model() -> Model:
    return decode_checkpoint(resources.files("skiplab.data").joinpath("toy_model.skpf").read_bytes())


def toy_tasks_path():
    return resources.files("skiplab.data").joinpath("toy_tasks.jsonl")


def toy_corpus() -> bytes:
    return resources.files("skiplab.data").joinpath("toy_corpus.txt").read_bytes()


def corpus_windows(corpus: bytes, length: int, count: int | None = None) -> np.ndarray:
    """Consecutive non-overlapping windows of ``length`` tokens."""
    data = np.frombuffer(corpus, dtype=np.uint8).astype(np.int64)
    n = data.size // length
    if count is not None:
        n = min(n, count)
    if n == 0:
        raise ValueError(f"corpus shorter than one {length}-token window")
    return data[: n * length].reshape(n, length)


def trace_corpus(model: Model, windows: np.ndarray, plan: SkipPlan | None = None) -> LayerTrace:
    trace = LayerTrace(model.config.n_layers)
    for w in windows:
        model_forward(w, model, plan, trace)
    return trace


def variant_label(prefix: str, keep_fraction: float) -> str:
    return f"{prefix}-{SkipSpec(keep_fraction=keep_fraction).label}"


@dataclass
class SweepResult:
    eval_reports: dict[tuple[str, bool], EvalReport]
    timings: dict[tuple[str, bool], dict[str, TimingReport]]
    baseline: TimingReport
    tasks: list[str]

    def to_dict(self, include_times: bool = True) -> dict:
        out = {"tasks": self.tasks, "grid": []}
        for (mode, keep_last), report in self.eval_reports.items():
            rows = []
            for label in report.rows:
                t = self.timings[(mode, keep_last)][label]
                row = {"model": label, "scores": {k: round(v, 1) for k, v in report.percent(label).items()}}
                row["timing"] = t.to_dict(include_times)
                rows.append(row)
            out["grid"].append({"mode": mode, "keep_last": keep_last, "rows": rows})
        return out

    def to_markdown(self) -> str:
        parts = []
        for (mode, keep_last), report in self.eval_reports.items():
            title = f"## skip {mode} sublayers" if mode != "full" else "## skip full layers"
            parts.append(f"{title}, {'last layer kept' if keep_last else 'no last layer'}\n")
            header = ["Model"] + self.tasks + ["Average", "Time(s)x10^2", "(%)"]
            lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
            for label in report.rows:
                p = report.percent(label)
                t = self.timings[(mode, keep_last)][label]
                cells = [label] + [f"{p[c]:.1f}" for c in self.tasks + ["Average"]]
                cells += [f"{100 * t.mean_seconds:.4f}", f"{t.improvement or 0:.2f}"]
                lines.append("| " + " | ".join(cells) + " |")
            parts.append("\n".join(lines) + "\n")
        return "\n".join(parts)


def sweep(
    model: Model,
    items: Sequence[EvalItem],
    prefix: str = "toy",
    count: int = 50,
    seq_len: int = 50,
    seed: int = 0,
    workers: int = 1,
    fractions: Sequence[float] = KEEP_FRACTIONS,
    modes: Sequence[SkipTarget] = MODES,
) -> SweepResult:
    """Evaluate and time every (mode, keep-last, keep-fraction) cell of the grid."""
    n = model.config.n_layers
    seqs = generate_sequences(seed, count, seq_len, model.config.vocab_size)
    tasks = list(dict.fromkeys(it.task for it in items))
    full_scores = evaluate(model, items, all_active(n), workers)
    baseline = time_one_token(model, seqs, all_active(n), variant_label(prefix, 1.0))
    baseline.improvement = 0.0
    reports, timings = {}, {}
    for mode in modes:
        for keep_last in (False, True):
            report = EvalReport(tasks)
            cells: dict[str, TimingReport] = {}
            for f in sorted(fractions):
                label = variant_label(prefix, f)
                if f == 1.0:
                    report.add(label, full_scores)
                    cells[label] = baseline
                    continue
                spec = SkipSpec(mode=mode, keep_fraction=f, keep_last=keep_last)
                plan = plan_from_spec(n, spec)
                report.add(label, evaluate(model, items, plan, workers))
                cells[label] = time_one_token(model, seqs, plan, label).against(baseline)
            reports[(mode.value, keep_last)] = report
            timings[(mode.value, keep_last)] = cells
    return SweepResult(reports, timings, baseline, tasks)


@dataclass(frozen=True)
class FirstVsLast:
    k: int
    loss_full: float
    loss_first: float
    loss_last: float

    @property
    def last_is_better(self) -> bool:
        return self.loss_first >= self.loss_last


def first_vs_last(model: Model, windows: np.ndarray, keep_fraction: float = 0.90) -> FirstVsLast:
    """Training-stream loss with the first vs the last ``1 - keep_fraction`` of layers skipped."""
    n = model.config.n_layers
    k = resolve_skip_count(n, keep_fraction)
    return FirstVsLast(
        k,
        batch_loss(model, windows, all_active(n)),
        batch_loss(model, windows, first_skip_plan(n, k, "full")),
        batch_loss(model, windows, tail_skip_plan(n, k, "full")),
    )


def load_items(paths) -> list[EvalItem]:
    items: list[EvalItem] = []
    for p in paths:
        items += load_tasks(p)
    return items

