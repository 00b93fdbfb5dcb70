"""Build the shipped toy fixture: corpus, trained 8-layer checkpoint, task files.

    python scripts/make_toy_fixture.py [--steps 1500]
"""

import argparse
import json
import random
from pathlib import Path

from skiplab.checkpoint import generate_random_model, save
from skiplab.model import ModelConfig
from skiplab.trainer import TrainConfig, train

DATA = Path(__file__).resolve().parents[1] / "src" / "skiplab" / "data"

FACTS = {
    "the sky": "blue",
    "the grass": "green",
    "the sun": "hot",
    "the snow": "cold",
    "the night": "dark",
    "the sea": "deep",
    "the rock": "hard",
    "the milk": "white",
}
ACTIONS = [
    ("the cat", "sat on the mat"),
    ("the dog", "ran in the park"),
    ("the bird", "sang in the tree"),
    ("the fish", "swam in the lake"),
    ("the fox", "hid in the den"),
    ("the cow", "ate the hay"),
    ("the bee", "flew to the rose"),
    ("the frog", "hopped on a log"),
]


def sentences():
    out = [f"{s} is {a}." for s, a in FACTS.items()]
    out += [f"{s} is very {a}." for s, a in FACTS.items()]
    out += [f"{s} {v}." for s, v in ACTIONS]
    return out


def build_corpus(rng, n=600):
    pool = sentences()
    return " ".join(rng.choice(pool) for _ in range(n)) + "\n"


def build_tasks(rng):
    recs = []
    subjects = [s for s, _ in ACTIONS]
    endings = [v for _, v in ACTIONS]
    for i, (subj, verb) in enumerate(ACTIONS):
        wrong = rng.sample([e for e in endings if e != verb], 3)
        choices = wrong + [verb]
        rng.shuffle(choices)
        recs.append({"task": "cloze", "type": "mc1", "context": f" {subj}",
                     "choices": [f" {c}." for c in choices], "gold": choices.index(verb)})
        others = rng.sample([s for s in subjects if s != subj], 3)
        cands = [subj] + others
        rng.shuffle(cands)
        recs.append({"task": "ending", "type": "mc1", "context": " the",
                     "choices": [f"{c[3:]} {verb}." for c in cands], "gold": cands.index(subj)})
    attrs = list(FACTS.values())
    for subj, attr in FACTS.items():
        wrong = rng.sample([a for a in attrs if a != attr], 2)
        choices = [f" {attr}.", f" very {attr}."] + [f" {w}." for w in wrong]
        recs.append({"task": "truth", "type": "mc2", "context": f" {subj} is",
                     "choices": choices, "true_set": [0, 1], "false_set": [2, 3]})
    return recs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=1500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    corpus = build_corpus(rng)
    (DATA / "toy_corpus.txt").write_text(corpus)
    with open(DATA / "toy_tasks.jsonl", "w") as f:
        for rec in build_tasks(rng):
            f.write(json.dumps(rec) + "\n")
    cfg = ModelConfig(d_model=32, n_layers=8, n_heads=4, d_ff=64, max_seq_len=128)
    model = generate_random_model(cfg, args.seed)
    result = train(model, corpus.encode(), TrainConfig(learning_rate=3e-3, steps=args.steps,
                                                        batch_size=8, context_length=48, seed=args.seed))
    save(result.model, DATA / "toy_model.skpf")
    print(f"loss {result.losses[0][1]:.3f} -> {result.losses[-1][1]:.3f}")


if __name__ == "__main__":
    main()
