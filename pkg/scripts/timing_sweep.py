"""One-token timing across keep-fractions and skip modes on a compute-heavy random model.

    python scripts/timing_sweep.py [--count 200] [--seq-len 50] [--reps 3] [--keep-last] [--out timing.md]

Rows are the 100/90/75/66% variants, column groups the three skip modes, in
the layout of the published timing tables.
"""

import argparse
import statistics
from pathlib import Path

from skiplab.bench import HEADER_NOTE, TimingReport, generate_sequences, time_one_token, timing_table
from skiplab.checkpoint import generate_random_model
from skiplab.experiments import KEEP_FRACTIONS, MODES
from skiplab.model import ModelConfig
from skiplab.plan import SkipSpec, plan_from_spec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d-model", type=int, default=256)
    ap.add_argument("--layers", type=int, default=16)
    ap.add_argument("--count", type=int, default=200)
    ap.add_argument("--seq-len", type=int, default=50, choices=[50, 100])
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--keep-last", action="store_true")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    cfg = ModelConfig(258, args.d_model, args.layers, 8, 4 * args.d_model, 128)
    model = generate_random_model(cfg, args.seed)
    seqs = generate_sequences(args.seed, args.count, args.seq_len, cfg.vocab_size)

    plans = {(f, m): plan_from_spec(cfg.n_layers, SkipSpec(m, f, args.keep_last and f < 1))
             for f in KEEP_FRACTIONS for m in MODES}
    samples = {key: [] for key in plans}
    for rep in range(args.reps):
        for key, plan in plans.items():
            if key[0] == 1.0 and key[1] is not MODES[0]:
                continue  # the unskipped model is the same for every mode
            samples[key].append(time_one_token(model, seqs, plan).total_seconds)
        print(f"rep {rep + 1}/{args.reps} done")

    base_total = statistics.median(samples[(1.0, MODES[0])])
    base = TimingReport("100%", args.seq_len, args.count, base_total, improvement=0.0)
    rows = {}
    for f in sorted(KEEP_FRACTIONS, key=lambda f: (f != 1.0, f)):
        label = SkipSpec(keep_fraction=f).label
        if f == 1.0:
            rows[label] = {"full": base}
            continue
        rows[label] = {
            m.value: TimingReport(label, args.seq_len, args.count, statistics.median(samples[(f, m)])).against(base)
            for m in MODES
        }
    table = timing_table(rows, [m.value for m in MODES])
    print(table)
    if args.out:
        args.out.write_text(table)
        print(f"wrote {args.out} ({HEADER_NOTE})")


if __name__ == "__main__":
    main()
