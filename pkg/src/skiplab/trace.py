"""Cosine-similarity layer traces and the VC-dimension sample-size calculator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np


class UndefinedSimilarityError(ValueError):
    """Cosine similarity requested for a zero vector."""


def cosine_similarity(v, w) -> float:
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != w.shape:
        raise ValueError(f"length mismatch: {v.shape} vs {w.shape}")
    nv, nw = np.linalg.norm(v), np.linalg.norm(w)
    if nv == 0 or nw == 0:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    return float(np.clip(v @ w / (nv * nw), -1.0, 1.0))


def rowwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero row")
    return np.clip(np.einsum("ij,ij->i", a, b) / (na * nb), -1.0, 1.0)


class LayerTrace:
    """Running per-layer mean of input/output cosine similarity.

    ``first_layer`` offsets the layer ids, for profiles that start at layer 1.
    """

    def __init__(self, n_layers: int, first_layer: int = 0):
        self.n_layers = n_layers
        self.first_layer = first_layer
        self.sums = np.zeros(n_layers, dtype=np.float64)
        self.counts = np.zeros(n_layers, dtype=np.int64)

    def _slot(self, layer: int) -> int:
        slot = layer - self.first_layer
        if not 0 <= slot < self.n_layers:
            raise IndexError(f"layer {layer} outside traced range")
        return slot

    def observe(self, layer: int, score: float, count: int = 1) -> None:
        """Add ``count`` observations whose mean is ``score``."""
        slot = self._slot(layer)
        self.sums[slot] += score * count
        self.counts[slot] += count

    def record(self, layer: int, x_in: np.ndarray, x_out: np.ndarray) -> float:
        """Average the per-position cosine between input and output rows, then accumulate it."""
        if x_in.shape != x_out.shape:
            raise ValueError(f"shape mismatch: {x_in.shape} vs {x_out.shape}")
        score = float(rowwise_cosine(x_in, x_out).mean())
        self.observe(layer, score)
        return score

    def merge(self, other: "LayerTrace") -> "LayerTrace":
        if (other.n_layers, other.first_layer) != (self.n_layers, self.first_layer):
            raise ValueError("cannot merge traces over different layer ranges")
        out = LayerTrace(self.n_layers, self.first_layer)
        out.sums = self.sums + other.sums
        out.counts = self.counts + other.counts
        return out

    @property
    def layers(self) -> range:
        return range(self.first_layer, self.first_layer + self.n_layers)

    def means(self) -> dict[int, float]:
        return {
            layer: float(self.sums[i] / self.counts[i])
            for i, layer in enumerate(self.layers)
            if self.counts[i] > 0
        }

    def to_rows(self) -> list[tuple[int, float, int]]:
        m = self.means()
        return [(layer, m.get(layer, float("nan")), int(self.counts[i])) for i, layer in enumerate(self.layers)]

    def write_table(self, path) -> None:
        lines = ["layer\tmean\tcount"]
        lines += [f"{layer}\t{mean!r}\t{count}" for layer, mean, count in self.to_rows()]
        Path(path).write_text("\n".join(lines) + "\n")

    def write_json(self, path) -> None:
        rows = [{"layer": layer, "mean": mean, "count": count} for layer, mean, count in self.to_rows()]
        Path(path).write_text(json.dumps({"layers": rows}, indent=2) + "\n")

    @classmethod
    def from_rows(cls, rows) -> "LayerTrace":
        rows = sorted(rows)
        first = rows[0][0]
        trace = cls(len(rows), first)
        for expected, (layer, mean, count) in enumerate(rows, start=first):
            if layer != expected:
                raise ValueError(f"trace rows are not contiguous at layer {layer}")
            if count > 0:
                trace.observe(layer, mean, count)
        return trace

    @classmethod
    def read_table(cls, path) -> "LayerTrace":
        return cls._parse_table(Path(path).read_text())

    @classmethod
    def _parse_table(cls, text: str) -> "LayerTrace":
        rows = []
        for line in text.splitlines()[1:]:
            if line.strip():
                layer, mean, count = line.split("\t")
                rows.append((int(layer), float(mean), int(count)))
        return cls.from_rows(rows)

    @classmethod
    def read_json(cls, path) -> "LayerTrace":
        data = json.loads(Path(path).read_text())
        return cls.from_rows([(r["layer"], r["mean"], r["count"]) for r in data["layers"]])

    @classmethod
    def read(cls, path) -> "LayerTrace":
        return cls.read_json(path) if str(path).endswith(".json") else cls.read_table(path)


@dataclass(frozen=True)
class TraceSummary:
    means: dict[int, float]
    argmin: int
    minimum: float
    argmax: int
    ranking: tuple[int, ...]  # most to least similar


def summarize(trace: LayerTrace) -> TraceSummary:
    unobserved = [layer for i, layer in enumerate(trace.layers) if trace.counts[i] == 0]
    if unobserved:
        raise ValueError(f"layers never observed: {unobserved}")
    means = trace.means()
    argmin = min(means, key=lambda i: (means[i], i))
    ranking = tuple(sorted(means, key=lambda i: (-means[i], i)))
    return TraceSummary(means, argmin, means[argmin], ranking[0], ranking)


def appendix_profile(name: str) -> LayerTrace:
    """Load a shipped cosine profile: ``"llama2-7b"`` or ``"llama2-13b"``."""
    files = {"llama2-7b": "appendix_a_llama2_7b.tsv", "llama2-13b": "appendix_b_llama2_13b.tsv"}
    text = resources.files("skiplab.data").joinpath(files[name]).read_text()
    return LayerTrace._parse_table(text)


def vc_lower_bound(n_params: int, n_layers: int) -> int:
    """``floor(W/2) * floor(L/2)`` for a threshold network with W weights and L layers."""
    if n_params < 0 or n_layers < 2:
        raise ValueError("need W >= 0 and L >= 2")
    return (n_params // 2) * (n_layers // 2)


def sample_size_lower_bound(d: int, epsilon: float) -> int:
    """``ceil(d / (320 eps^2))`` in exact arithmetic, eps read at its decimal spelling."""
    if d < 0 or not 0 < epsilon < 1:
        raise ValueError("need d >= 0 and 0 < epsilon < 1")
    eps = Fraction(repr(float(epsilon)))
    return math.ceil(Fraction(d) / (320 * eps * eps))


@dataclass(frozen=True)
class ComplexityBound:
    W: int
    L: int
    d_lb: int
    epsilon: float
    m_lb: int


def complexity_bound(n_params: int, n_layers: int, epsilon: float) -> ComplexityBound:
    d = vc_lower_bound(n_params, n_layers)
    return ComplexityBound(n_params, n_layers, d, epsilon, sample_size_lower_bound(d, epsilon))
