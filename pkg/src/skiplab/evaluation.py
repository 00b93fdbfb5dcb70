"""Multiple-choice log-likelihood scoring: accuracy, normalized accuracy, mc2, averages."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import SEP, Model, encode, model_forward
from .plan import SkipPlan
from .tensor import log_softmax_rows


@dataclass(frozen=True)
class EvalItem:
    context: bytes
    choices: tuple[bytes, ...]
    gold: tuple[int, ...]
    kind: str = "mc1"  # mc1: single gold answer; mc2: true/false partition
    false_set: tuple[int, ...] = ()
    fewshot: tuple[tuple[bytes, bytes], ...] = ()
    task: str = "task"

    def __post_init__(self):
        n = len(self.choices)
        if n < 1:
            raise ValueError("an item needs at least one choice")
        if any(not 0 <= g < n for g in self.gold + self.false_set):
            raise ValueError("gold index out of range")
        if self.kind == "mc1":
            if len(self.gold) != 1:
                raise ValueError("mc1 items have exactly one gold choice")
        elif self.kind == "mc2":
            if set(self.gold) & set(self.false_set) or len(set(self.gold) | set(self.false_set)) != n:
                raise ValueError("mc2 true/false sets must partition the choices")
        else:
            raise ValueError(f"unknown item kind {self.kind!r}")

    @classmethod
    def from_record(cls, rec: dict) -> "EvalItem":
        kind = rec.get("type", "mc1")
        if kind == "mc2":
            gold = tuple(rec["true_set"])
            false_set = tuple(rec["false_set"])
        else:
            g = rec["gold"]
            gold = (g,) if isinstance(g, int) else tuple(g)
            false_set = ()
        k = int(rec.get("num_fewshot", 0))
        shots = tuple((encode(c), encode(a)) for c, a in rec.get("fewshot", [])[:k])
        return cls(
            context=bytes(encode(rec["context"])),
            choices=tuple(bytes(encode(c)) for c in rec["choices"]),
            gold=gold,
            kind=kind,
            false_set=false_set,
            fewshot=tuple((bytes(c), bytes(a)) for c, a in shots),
            task=rec.get("task", "task"),
        )


def load_tasks(path) -> list[EvalItem]:
    items = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            items.append(EvalItem.from_record(json.loads(line)))
        except (KeyError, ValueError, TypeError) as e:
            raise ValueError(f"{path}:{lineno}: {e}") from None
    return items


def prompt_tokens(context: bytes, fewshot: Sequence[tuple[bytes, bytes]] = ()) -> list[int]:
    """Separator, then few-shot pairs each closed by a separator, then the context.

    The leading separator gives the first continuation token a conditioning
    position even for an empty context, and keeps log-likelihoods additive
    over any split of the continuation.
    """
    tokens = [SEP]
    for ctx, ans in fewshot:
        tokens += encode(ctx) + encode(ans) + [SEP]
    return tokens + encode(context)


def sequence_loglikelihood(
    model: Model,
    context: bytes,
    continuation: bytes,
    plan: SkipPlan | None = None,
    fewshot: Sequence[tuple[bytes, bytes]] = (),
) -> tuple[float, int]:
    """Total log-probability of ``continuation`` given the prompt, and its token count."""
    prefix = prompt_tokens(context, fewshot)
    cont = encode(continuation)
    if not cont:
        raise ValueError("continuation is empty")
    if len(prefix) + len(cont) > model.config.max_seq_len:
        raise ValueError(
            f"prompt + continuation is {len(prefix) + len(cont)} tokens, max_seq_len is {model.config.max_seq_len}"
        )
    tokens = prefix + cont[:-1]
    logits = model_forward(tokens, model, plan)
    rows = logits[len(prefix) - 1:]
    logp = log_softmax_rows(rows.astype(np.float64))
    return float(logp[np.arange(len(cont)), cont].sum()), len(cont)


def mc2_score(raw: Sequence[float], true_set: Iterable[int], false_set: Iterable[int]) -> float:
    """Probability mass on the true answers, normalised over true + false answers."""
    true_set, false_set = list(true_set), list(false_set)
    if not true_set or not false_set:
        raise ValueError("mc2 needs non-empty true and false sets")
    raw = np.asarray(raw, dtype=np.float64)
    every = np.concatenate([raw[true_set], raw[false_set]])
    top = every.max()
    t = np.exp(raw[true_set] - top).sum()
    f = np.exp(raw[false_set] - top).sum()
    return float(t / (t + f))


@dataclass(frozen=True)
class ItemScore:
    raw: tuple[float, ...]
    normalized: tuple[float, ...]
    lengths: tuple[int, ...]
    pred_raw: int
    pred_norm: int
    correct: bool
    correct_norm: bool
    mc2: float | None = None


def score_item(model: Model, item: EvalItem, plan: SkipPlan | None = None) -> ItemScore:
    raw, lengths = [], []
    for choice in item.choices:
        ll, n = sequence_loglikelihood(model, item.context, choice, plan, item.fewshot)
        raw.append(ll)
        lengths.append(n)
    norm = [ll / n for ll, n in zip(raw, lengths)]
    # np.argmax returns the first maximum: ties go to the lowest index
    pred_raw = int(np.argmax(raw))
    pred_norm = int(np.argmax(norm))
    mc2 = mc2_score(raw, item.gold, item.false_set) if item.kind == "mc2" else None
    return ItemScore(
        tuple(raw), tuple(norm), tuple(lengths), pred_raw, pred_norm,
        pred_raw in item.gold, pred_norm in item.gold, mc2,
    )


@dataclass(frozen=True)
class TaskScore:
    task: str
    kind: str
    n_items: int
    acc: float
    acc_norm: float
    mc2: float | None

    @property
    def score(self) -> float:
        """Headline metric in [0, 1]: mc2 for truthfulness-style tasks, else normalized accuracy."""
        return self.mc2 if self.kind == "mc2" else self.acc_norm


def score_items(model: Model, items: Sequence[EvalItem], plan: SkipPlan | None = None, workers: int = 1) -> list[ItemScore]:
    if workers <= 1:
        return [score_item(model, it, plan) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda it: score_item(model, it, plan), items))


def evaluate(model: Model, items: Sequence[EvalItem], plan: SkipPlan | None = None, workers: int = 1) -> dict[str, TaskScore]:
    """Per-task metrics; tasks appear in first-seen order."""
    scores = score_items(model, items, plan, workers)
    grouped: dict[str, list[tuple[EvalItem, ItemScore]]] = {}
    for it, sc in zip(items, scores):
        grouped.setdefault(it.task, []).append((it, sc))
    out = {}
    for task, pairs in grouped.items():
        kinds = {it.kind for it, _ in pairs}
        if len(kinds) != 1:
            raise ValueError(f"task {task} mixes item kinds {sorted(kinds)}")
        kind = kinds.pop()
        out[task] = TaskScore(
            task=task,
            kind=kind,
            n_items=len(pairs),
            acc=float(np.mean([sc.correct for _, sc in pairs])),
            acc_norm=float(np.mean([sc.correct_norm for _, sc in pairs])),
            mc2=float(np.mean([sc.mc2 for _, sc in pairs])) if kind == "mc2" else None,
        )
    return out


def aggregate(scores: Mapping[str, float], include: Iterable[str] | None = None) -> float:
    """Arithmetic mean of the included task scores."""
    names = list(scores) if include is None else [t for t in include]
    if not names:
        raise ValueError("no tasks included in the average")
    return float(sum(scores[t] for t in names) / len(names))


@dataclass
class EvalReport:
    """Rows are model variants, columns are tasks plus the average (percent, one decimal)."""

    tasks: list[str]
    rows: dict[str, dict[str, TaskScore]] = field(default_factory=dict)
    excluded: list[str] = field(default_factory=list)

    def add(self, label: str, scores: dict[str, TaskScore]) -> None:
        self.rows[label] = scores

    def percent(self, label: str) -> dict[str, float]:
        row = {t: 100 * self.rows[label][t].score for t in self.tasks}
        row["Average"] = aggregate(row, self.tasks)
        return row

    def to_dict(self) -> dict:
        return {
            "tasks": self.tasks,
            "excluded": self.excluded,
            "rows": {
                label: {
                    "scores": {t: round(v, 1) for t, v in self.percent(label).items()},
                    "detail": {t: vars(s) for t, s in scores.items()},
                }
                for label, scores in self.rows.items()
            },
        }

    def to_table(self) -> str:
        header = ["Model"] + self.tasks + ["Average"]
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        for label in self.rows:
            p = self.percent(label)
            lines.append("| " + " | ".join([label] + [f"{p[c]:.1f}" for c in self.tasks + ["Average"]]) + " |")
        if self.excluded:
            lines.append(f"\nExcluded from the average: {', '.join(self.excluded)}")
        return "\n".join(lines) + "\n"
