"""Per-layer input/output cosine similarity of a model over a corpus, plus the shipped reference profiles.

    python scripts/trace_profile.py [--model ckpt.skpf] [--reference llama2-7b]
"""

import argparse

from skiplab.checkpoint import load
from skiplab.experiments import corpus_windows, toy_corpus, toy_model, trace_corpus
from skiplab.trace import appendix_profile, summarize


def show(title, summary):
    print(title)
    for layer, m in summary.means.items():
        bar = "#" * int(round(max(0.0, m) * 40))
        print(f"  layer {layer:3d}  {m:8.5f}  {bar}")
    top = ", ".join(str(i) for i in summary.ranking[:3])
    print(f"  lowest: layer {summary.argmin} ({summary.minimum:.3f}); most similar: {top}\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model")
    ap.add_argument("--context", type=int, default=48)
    ap.add_argument("--windows", type=int, default=64)
    ap.add_argument("--reference", choices=["llama2-7b", "llama2-13b", "none"], default="llama2-7b")
    args = ap.parse_args()

    model = load(args.model) if args.model else toy_model()
    trace = trace_corpus(model, corpus_windows(toy_corpus(), args.context, args.windows))
    show("model", summarize(trace))
    if args.reference != "none":
        show(f"reference profile {args.reference}", summarize(appendix_profile(args.reference)))


if __name__ == "__main__":
    main()
