"""Turn skip specifications (fraction, mode, keep-last, ranked traces) into per-layer plans."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping

from .model import LayerSkipMode


class SkipTarget(enum.Enum):
    FULL = "full"
    ATTENTION = "attn"
    FFWD = "ffwd"

    @property
    def layer_mode(self) -> LayerSkipMode:
        return {
            SkipTarget.FULL: LayerSkipMode.SKIP_FULL,
            SkipTarget.ATTENTION: LayerSkipMode.SKIP_ATTENTION,
            SkipTarget.FFWD: LayerSkipMode.SKIP_FFWD,
        }[self]

    @classmethod
    def parse(cls, value: "str | SkipTarget") -> "SkipTarget":
        if isinstance(value, SkipTarget):
            return value
        aliases = {"full": cls.FULL, "attn": cls.ATTENTION, "attention": cls.ATTENTION, "ffwd": cls.FFWD}
        try:
            return aliases[value.lower()]
        except KeyError:
            raise ValueError(f"unknown skip mode {value!r}") from None


@dataclass(frozen=True)
class SkipSpec:
    mode: SkipTarget = SkipTarget.FULL
    keep_fraction: float = 1.0
    keep_last: bool = False
    explicit_layers: tuple[int, ...] | None = None
    selection: str = "tail"  # tail | first | similarity | explicit

    def __post_init__(self):
        if not 0 < self.keep_fraction <= 1:
            raise ValueError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")
        if self.explicit_layers is not None and len(set(self.explicit_layers)) != len(self.explicit_layers):
            raise ValueError("explicit layer indices must be distinct")

    @property
    def label(self) -> str:
        pct = int(Decimal(str(self.keep_fraction * 100)).quantize(Decimal(1), ROUND_HALF_UP))
        return f"{pct}%"


@dataclass(frozen=True)
class SkipPlan:
    n_layers: int
    modes: tuple[LayerSkipMode, ...]
    spec: SkipSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.modes) != self.n_layers:
            raise ValueError(f"plan has {len(self.modes)} modes for {self.n_layers} layers")

    @property
    def skipped(self) -> tuple[int, ...]:
        return tuple(i for i, m in enumerate(self.modes) if m != LayerSkipMode.ACTIVE)

    @property
    def n_active(self) -> int:
        return self.n_layers - len(self.skipped)

    def to_text(self) -> str:
        lines = [f"# skip plan: {self.n_layers} layers, {len(self.skipped)} skipped"]
        lines += [f"{i}\t{m.name}" for i, m in enumerate(self.modes)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SkipPlan":
        modes = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            idx, name = line.split()
            if int(idx) != len(modes):
                raise ValueError(f"plan lines out of order at layer {idx}")
            modes.append(LayerSkipMode[name])
        return cls(len(modes), tuple(modes))


def all_active(n_layers: int) -> SkipPlan:
    return SkipPlan(n_layers, (LayerSkipMode.ACTIVE,) * n_layers, SkipSpec())


def plan_from_indices(n_layers: int, skipped: Iterable[int], mode, spec: SkipSpec | None = None) -> SkipPlan:
    mode = SkipTarget.parse(mode)
    skip = set(skipped)
    if any(not 0 <= i < n_layers for i in skip):
        raise ValueError(f"layer index out of range [0, {n_layers})")
    modes = tuple(mode.layer_mode if i in skip else LayerSkipMode.ACTIVE for i in range(n_layers))
    if spec is None:
        spec = SkipSpec(mode=mode, explicit_layers=tuple(sorted(skip)), selection="explicit")
    return SkipPlan(n_layers, modes, spec)


def resolve_skip_count(n_layers: int, keep_fraction: float) -> int:
    """Layers to skip: ``n - round_half_up(keep_fraction * n)``.

    The fraction is taken at its decimal spelling, so 0.66 means exactly 66/100.
    """
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    kept = (Decimal(str(keep_fraction)) * n_layers).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    return n_layers - int(kept)


def _check_k(n_layers: int, k: int) -> None:
    if not 0 <= k < n_layers:
        raise ValueError(f"skip count {k} must satisfy 0 <= k < {n_layers}")


def tail_skip_plan(n_layers: int, k: int, mode="full", keep_last: bool = False, spec: SkipSpec | None = None) -> SkipPlan:
    """Skip the last ``k`` layers, or with ``keep_last`` the ``k`` layers just before the final one."""
    _check_k(n_layers, k)
    if keep_last and k == n_layers - 1:
        raise ValueError("keep_last with k = n_layers - 1 leaves no window to shift")
    end = n_layers - 1 if keep_last else n_layers
    mode = SkipTarget.parse(mode)
    spec = spec or SkipSpec(mode=mode, keep_last=keep_last, selection="tail")
    return plan_from_indices(n_layers, range(end - k, end), mode, spec)


def first_skip_plan(n_layers: int, k: int, mode="full", spec: SkipSpec | None = None) -> SkipPlan:
    _check_k(n_layers, k)
    mode = SkipTarget.parse(mode)
    spec = spec or SkipSpec(mode=mode, selection="first")
    return plan_from_indices(n_layers, range(k), mode, spec)


def similarity_rank_plan(
    means: Mapping[int, float],
    k: int,
    mode="full",
    n_layers: int | None = None,
) -> SkipPlan:
    """Skip the ``k`` layers whose input/output cosine similarity is highest.

    ``means`` maps layer index to mean similarity. Ties go to the lower index.
    Layers below the lowest traced index (a profile that starts at layer 1)
    are left active and never ranked; any other gap is an error.
    """
    if not means:
        raise ValueError("empty trace")
    first = min(means)
    if n_layers is None:
        n_layers = max(means) + 1
    missing = [i for i in range(first, n_layers) if i not in means]
    if missing:
        raise ValueError(f"trace does not cover layers {missing}")
    _check_k(n_layers, k)
    ranked = sorted(means, key=lambda i: (-means[i], i))
    mode = SkipTarget.parse(mode)
    spec = SkipSpec(mode=mode, selection="similarity")
    return plan_from_indices(n_layers, ranked[:k], mode, spec)


def plan_from_spec(n_layers: int, spec: SkipSpec, means: Mapping[int, float] | None = None) -> SkipPlan:
    if spec.explicit_layers is not None:
        return plan_from_indices(n_layers, spec.explicit_layers, spec.mode, spec)
    k = resolve_skip_count(n_layers, spec.keep_fraction)
    if spec.selection == "first":
        return first_skip_plan(n_layers, k, spec.mode, spec)
    if spec.selection == "similarity":
        if means is None:
            raise ValueError("similarity selection needs a trace")
        return similarity_rank_plan(means, k, spec.mode, n_layers)
    return tail_skip_plan(n_layers, k, spec.mode, spec.keep_last, spec)
