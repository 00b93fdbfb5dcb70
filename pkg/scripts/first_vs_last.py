"""Compare skipping the first versus the last layers of a trained model.

    python scripts/first_vs_last.py [--model ckpt.skpf] [--keep-fraction 0.9]

Without --model the shipped toy checkpoint and corpus are used. Reports the
training-stream loss and the task scores for both variants.
"""

import argparse

from skiplab.checkpoint import load
from skiplab.evaluation import EvalReport, evaluate
from skiplab.experiments import corpus_windows, first_vs_last, load_items, toy_corpus, toy_model, toy_tasks_path
from skiplab.plan import first_skip_plan, resolve_skip_count, tail_skip_plan


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model")
    ap.add_argument("--corpus")
    ap.add_argument("--tasks", nargs="+")
    ap.add_argument("--keep-fraction", type=float, default=0.9)
    ap.add_argument("--context", type=int, default=48)
    ap.add_argument("--windows", type=int, default=64)
    args = ap.parse_args()

    model = load(args.model) if args.model else toy_model()
    corpus = open(args.corpus, "rb").read() if args.corpus else toy_corpus()
    windows = corpus_windows(corpus, args.context + 1, args.windows)
    res = first_vs_last(model, windows, args.keep_fraction)
    n = model.config.n_layers
    print(f"{n} layers, skipping k={res.k}")
    print(f"loss: full {res.loss_full:.4f}  first skipped {res.loss_first:.4f}  last skipped {res.loss_last:.4f}")
    print("skipping the last layers is " + ("better" if res.last_is_better else "worse"))

    items = load_items(args.tasks or [toy_tasks_path()])
    tasks = list(dict.fromkeys(it.task for it in items))
    report = EvalReport(tasks)
    pct = int(round(args.keep_fraction * 100))
    k = resolve_skip_count(n, args.keep_fraction)
    report.add(f"{pct}-Last", evaluate(model, items, tail_skip_plan(n, k)))
    report.add(f"{pct}-First", evaluate(model, items, first_skip_plan(n, k)))
    print(report.to_table())


if __name__ == "__main__":
    main()
