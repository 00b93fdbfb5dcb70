"""Central finite-difference check of the trainer's analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from skiplab.checkpoint import generate_random_model
from skiplab.model import Model, ModelConfig
from skiplab.trainer import backward, batch_loss, relu_pattern

MICRO = ModelConfig(vocab_size=11, d_model=8, n_layers=2, n_heads=2, d_ff=16, max_seq_len=6)


@dataclass
class GradCheck:
    checked: int = 0
    kinks: int = 0
    worst_rel: float = 0.0  # over coordinates whose gradient is not near zero
    worst_abs: float = 0.0
    failures: list = field(default_factory=list)


def micro_setup(seed=0, placement="post", batch=2):
    cfg = ModelConfig(**{**vars(MICRO), "norm_placement": placement})
    model = generate_random_model(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    # widen the init so every tensor gets a visible gradient
    named = {k: (v * 10 if v.ndim == 2 else v + rng.normal(0, 0.1, v.shape)).astype(np.float64)
             for k, v in model.named_tensors().items()}
    model = Model.from_named(cfg, named)
    tokens = rng.integers(0, cfg.vocab_size, size=(batch, cfg.max_seq_len + 1))
    return model, tokens


def finite_difference_check(model, batch, plan=None, coords=220, seed=0, h=1e-3, rtol=1e-4, atol=1e-6) -> GradCheck:
    """Compare analytic gradients with (L(x+h) - L(x-h)) / 2h on random coordinates.

    Coordinates where the ReLU sign pattern differs between x+h and x-h sit on a
    kink of the loss and are redrawn rather than counted.
    """
    _, grads = backward(model, batch, plan)
    named = model.named_tensors()
    names = sorted(named)
    rng = np.random.default_rng(seed)
    out = GradCheck()
    while out.checked < coords:
        name = names[rng.integers(len(names))]
        idx = tuple(int(rng.integers(s)) for s in named[name].shape)
        base = named[name][idx]
        probes = []
        for delta in (h, -h):
            t = named[name].copy()
            t[idx] = base + delta
            m = model.replace_tensors(**{name: t})
            probes.append((batch_loss(m, batch, plan), relu_pattern(m, batch, plan)))
        if not np.array_equal(probes[0][1], probes[1][1]):
            out.kinks += 1
            continue
        numeric = (probes[0][0] - probes[1][0]) / (2 * h)
        analytic = float(grads[name][idx])
        err = abs(numeric - analytic)
        rel = err / max(abs(numeric), abs(analytic), 1e-30)
        out.checked += 1
        if err > atol and rel > rtol:
            out.failures.append((name, idx, analytic, numeric))
        out.worst_abs = max(out.worst_abs, err)
        if max(abs(numeric), abs(analytic)) > atol:
            out.worst_rel = max(out.worst_rel, rel)
    return out
