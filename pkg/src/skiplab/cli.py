"""Command-line entry point: ``skiplab <subcommand> ...``.

Exit codes: 0 ok, 1 usage error, 2 runtime error. Files written by a failing
run are removed, and every successful run leaves a ``*.manifest.json`` beside
its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import bench, checkpoint, evaluation, experiments, plan as plans, trace as traces
from .model import ModelConfig
from .trainer import TrainConfig, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    subcommand: str
    argv: list[str]
    config: dict
    seeds: dict = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    skip_spec: dict | None = None


class _Run:
    """Tracks emitted files so a failure can clean them up."""

    def __init__(self, manifest: RunManifest):
        self.manifest = manifest

    def write_text(self, path, text: str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.manifest.outputs.append(str(path))
        path.write_text(text)
        return path

    def write_json(self, path, obj) -> Path:
        return self.write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def record(self, path) -> Path:
        self.manifest.outputs.append(str(path))
        return Path(path)

    def cleanup(self):
        for p in self.manifest.outputs:
            Path(p).unlink(missing_ok=True)


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".md", ".tsv", ".txt", ".skpf") else p


def _layer_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer list {text!r}") from None


def _add_plan_args(p):
    g = p.add_argument_group("skip plan")
    g.add_argument("--mode", choices=["full", "attn", "ffwd"], default="full")
    g.add_argument("--keep-fraction", type=float, default=None)
    g.add_argument("--keep-last", action="store_true")
    g.add_argument("--first", action="store_true", help="skip the first layers instead of the last")
    g.add_argument("--from-trace", metavar="FILE", help="skip the layers with the highest traced similarity")
    g.add_argument("--layers", type=_layer_list, metavar="LIST", help="explicit comma-separated layers to skip")
    g.add_argument("--plan-file", metavar="FILE", help="load a saved plan")


def _resolve_plan(args, n_layers: int) -> plans.SkipPlan:
    if args.first and args.keep_last:
        raise UsageError("--first cannot be combined with --keep-last")
    selectors = [bool(args.first), args.from_trace is not None, args.layers is not None, args.plan_file is not None]
    if sum(selectors) > 1:
        raise UsageError("choose at most one of --first, --from-trace, --layers, --plan-file")
    if (args.layers is not None or args.plan_file) and (args.keep_fraction is not None or args.keep_last):
        raise UsageError("--layers/--plan-file cannot be combined with --keep-fraction/--keep-last")
    if args.from_trace and args.keep_last:
        raise UsageError("--from-trace cannot be combined with --keep-last")
    if args.plan_file:
        plan = plans.SkipPlan.from_text(Path(args.plan_file).read_text())
        if plan.n_layers != n_layers:
            raise UsageError(f"plan file covers {plan.n_layers} layers, model has {n_layers}")
        return plan
    mode = plans.SkipTarget.parse(args.mode)
    if args.layers is not None:
        return plans.plan_from_indices(n_layers, args.layers, mode)
    frac = 1.0 if args.keep_fraction is None else args.keep_fraction
    selection = "first" if args.first else "similarity" if args.from_trace else "tail"
    try:
        spec = plans.SkipSpec(mode=mode, keep_fraction=frac, keep_last=args.keep_last, selection=selection)
    except ValueError as e:
        raise UsageError(str(e)) from None
    means = None
    if args.from_trace:
        means = traces.summarize(traces.LayerTrace.read(args.from_trace)).means
    return plans.plan_from_spec(n_layers, spec, means)


def _spec_dict(plan: plans.SkipPlan) -> dict:
    spec = plan.spec
    out = {"skipped": list(plan.skipped), "modes": [m.name for m in plan.modes]}
    if spec is not None:
        out.update(mode=spec.mode.value, keep_fraction=spec.keep_fraction, keep_last=spec.keep_last,
                   selection=spec.selection)
    return out


def _model_arg(p, required=False):
    p.add_argument("--model", required=required, help="checkpoint path (default: shipped toy model)")


def _load_model(args):
    return checkpoint.load(args.model) if args.model else experiments.toy_model()


# -- subcommands -------------------------------------------------------------

def cmd_gen(args, run: _Run):
    cfg = ModelConfig(args.vocab_size, args.d_model, args.layers, args.heads, args.d_ff,
                      args.max_seq_len, args.norm, args.eps)
    model = checkpoint.generate_random_model(cfg, args.seed)
    run.record(args.out)
    checkpoint.save(model, args.out)
    run.manifest.seeds["model"] = args.seed
    print(f"wrote {args.out}: {cfg.n_layers} layers, {model.parameter_count()} parameters")


def cmd_train(args, run: _Run):
    model = checkpoint.load(args.model)
    corpus = Path(args.corpus).read_bytes()
    plan = _resolve_plan(args, model.config.n_layers)
    cfg = TrainConfig(args.lr, args.steps, args.batch_size, args.context, args.seed, args.optimizer)
    result = train(model, corpus, cfg, plan)
    out = args.out or args.model
    run.record(out)
    checkpoint.save(result.model, out)
    result.write_curve(run.record(args.curve or f"{_stem(out)}.loss.tsv"))
    run.manifest.seeds["train"] = args.seed
    run.manifest.inputs += [args.model, args.corpus]
    run.manifest.skip_spec = _spec_dict(plan)
    if result.losses:
        print(f"loss {result.losses[0][1]:.4f} -> {result.losses[-1][1]:.4f} over {cfg.steps} steps")


def cmd_plan(args, run: _Run):
    if args.layers_total is None and not args.model:
        raise UsageError("plan needs --layers-total or --model")
    n = args.layers_total if args.layers_total is not None else checkpoint.load(args.model).config.n_layers
    plan = _resolve_plan(args, n)
    text = plan.to_text()
    sys.stdout.write(text)
    print(f"skipped: {sorted(plan.skipped)}")
    run.manifest.skip_spec = _spec_dict(plan)
    if args.out:
        run.write_text(args.out, text)


def cmd_trace(args, run: _Run):
    model = _load_model(args)
    corpus = Path(args.corpus).read_bytes() if args.corpus else experiments.toy_corpus()
    plan = _resolve_plan(args, model.config.n_layers)
    windows = experiments.corpus_windows(corpus, args.context, args.windows)
    trace = experiments.trace_corpus(model, windows, plan)
    summary = traces.summarize(trace)
    stem = _stem(args.out)
    trace.write_table(run.record(f"{stem}.tsv"))
    run.write_json(f"{stem}.json", {
        "layers": [{"layer": layer, "mean": m, "count": c} for layer, m, c in trace.to_rows()],
        "argmin": summary.argmin, "minimum": summary.minimum, "ranking": list(summary.ranking),
    })
    run.manifest.skip_spec = _spec_dict(plan)
    for layer, m in summary.means.items():
        print(f"layer {layer} cos_similarity: {m:.6f}")
    print(f"lowest: layer {summary.argmin} ({summary.minimum:.3f}); highest: layer {summary.argmax}")


def cmd_eval(args, run: _Run):
    model = _load_model(args)
    paths = args.tasks or [str(experiments.toy_tasks_path())]
    items = experiments.load_items(paths)
    plan = _resolve_plan(args, model.config.n_layers)
    scores = evaluation.evaluate(model, items, plan, args.workers)
    report = evaluation.EvalReport([t for t in scores if t not in args.exclude], excluded=list(args.exclude))
    report.add(args.label, scores)
    stem = _stem(args.out)
    run.write_text(f"{stem}.md", report.to_table())
    run.write_json(f"{stem}.json", report.to_dict())
    run.manifest.inputs += paths
    run.manifest.skip_spec = _spec_dict(plan)
    sys.stdout.write(report.to_table())


def cmd_bench(args, run: _Run):
    model = _load_model(args)
    plan = _resolve_plan(args, model.config.n_layers)
    seqs = bench.generate_sequences(args.seed, args.count, args.seq_len, model.config.vocab_size)
    base = bench.time_one_token(model, seqs, plans.all_active(model.config.n_layers), "baseline")
    base.improvement = 0.0
    variant = bench.time_one_token(model, seqs, plan, args.label).against(base)
    table = bench.timing_table({"baseline": {args.mode: base}, args.label: {args.mode: variant}}, [args.mode])
    stem = _stem(args.out)
    run.write_text(f"{stem}.md", table)
    run.write_json(f"{stem}.json", {"note": bench.HEADER_NOTE, "baseline": base.to_dict(), "variant": variant.to_dict()})
    run.manifest.seeds["sequences"] = args.seed
    run.manifest.skip_spec = _spec_dict(plan)
    sys.stdout.write(table)


def cmd_diagnose(args, run: _Run):
    try:
        b = traces.complexity_bound(args.W, args.L, args.eps)
    except ValueError as e:
        raise UsageError(str(e)) from None
    print(f"VC dimension lower bound d = {b.d_lb:,}")
    print(f"sample size lower bound m = {b.m_lb:,}  (epsilon = {b.epsilon})")
    if args.out:
        run.write_json(args.out, asdict(b))


def cmd_sweep(args, run: _Run):
    model = _load_model(args)
    paths = args.tasks or [str(experiments.toy_tasks_path())]
    items = experiments.load_items(paths)
    result = experiments.sweep(model, items, args.prefix, args.count, args.seq_len, args.seed, args.workers)
    out = Path(args.out_dir)
    run.write_text(out / "sweep.md", f"# {bench.HEADER_NOTE}\n\n" + result.to_markdown())
    run.write_json(out / "sweep.json", result.to_dict())
    run.manifest.inputs += paths
    run.manifest.seeds["sequences"] = args.seed
    sys.stdout.write(result.to_markdown())


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="skiplab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a seeded random checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-size", type=int, default=258)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-ff", type=int, default=64)
    p.add_argument("--max-seq-len", type=int, default=128)
    p.add_argument("--norm", choices=["post", "pre"], default="post")
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a checkpoint on a byte corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="output checkpoint (default: overwrite --model)")
    p.add_argument("--curve", help="loss curve path (default: <out>.loss.tsv)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--context", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    _add_plan_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("plan", help="resolve and print a skip plan")
    p.add_argument("--layers-total", type=int)
    _model_arg(p)
    p.add_argument("--out")
    _add_plan_args(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("trace", help="record per-layer cosine similarity over a corpus")
    _model_arg(p)
    p.add_argument("--corpus", help="byte corpus (default: shipped toy corpus)")
    p.add_argument("--context", type=int, default=48)
    p.add_argument("--windows", type=int, default=64)
    p.add_argument("--out", required=True)
    _add_plan_args(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("eval", help="score multiple-choice task files under a plan")
    _model_arg(p)
    p.add_argument("--tasks", nargs="+", help="task files (default: shipped toy tasks)")
    p.add_argument("--out", required=True)
    p.add_argument("--label", default="model")
    p.add_argument("--exclude", nargs="*", default=[])
    p.add_argument("--workers", type=int, default=1)
    _add_plan_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="one-token timing against the unskipped model")
    _model_arg(p)
    p.add_argument("--seq-len", type=int, choices=[50, 100], default=50)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--label", default="variant")
    p.add_argument("--workers", type=int, default=1, help="accepted and ignored: timing is single-worker")
    _add_plan_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("diagnose", help="VC-dimension and sample-size lower bounds")
    p.add_argument("--W", type=int, required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="eval + bench over keep-fractions x modes x keep-last")
    _model_arg(p)
    p.add_argument("--tasks", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefix", default="toy")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seq-len", type=int, choices=[50, 100], default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return ap


def _manifest_path(args, manifest: RunManifest) -> Path | None:
    if args.command == "sweep":
        return Path(args.out_dir) / "manifest.json"
    if not manifest.outputs:
        return None
    return Path(f"{_stem(manifest.outputs[0])}.manifest.json")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = RunManifest(args.command, argv, config)
    run = _Run(manifest)
    try:
        args.func(args, run)
        path = _manifest_path(args, manifest)
        if path is not None:
            manifest.outputs.append(str(path))
            path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
    except (UsageError, FileNotFoundError) as e:
        run.cleanup()
        print(f"skiplab {args.command}: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        run.cleanup()
        print(f"skiplab {args.command}: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
