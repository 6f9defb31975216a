"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 missing or mismatched
inputs, 4 numeric failure.  Outputs go to ``--out-dir``, or by default to
``$EBATS_RUN_DIR/<command>`` (``./runs/<command>`` when unset).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import presets
from .config import ConfigError, adapt_config, load_config
from .corpus import CorpusSpec, OracleParams, build_oracle, load_table, save_table, table_path
from .errors import GenerationFailure, InputMismatch, InvalidArgument, NumericFailure
from .harness import Variant, default_grid, run_ablation, run_stream
from .losses import LOSS_VARIANTS
from .model import describe, load_weights, save_weights
from .reporting import write_run, write_table
from .stats import characterize_conditions, extract_stats, inspect_stats, load_stats, save_stats

log = logging.getLogger("promptshift")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4
RUN_DIR_ENV = "EBATS_RUN_DIR"
SHIFT_COLUMNS = ("condition", "mean_shift", "covariance_shift", "ratio")


def run_dir(args, command: str) -> Path:
    if getattr(args, "out_dir", None):
        out = Path(args.out_dir)
    else:
        out = Path(os.environ.get(RUN_DIR_ENV, "runs")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(path, what: str) -> Path:
    if not path:
        raise InputMismatch(f"no {what} given (flag or [inputs] table)")
    path = Path(path)
    if not path.exists():
        raise InputMismatch(f"{what} file not found: {path}")
    return path


def _load_model(path):
    try:
        return load_weights(_need(path, "model"))
    except InvalidArgument as exc:
        raise InputMismatch(str(exc)) from exc


def _load_stats(path, weights):
    try:
        return load_stats(_need(path, "stats"), weights)
    except InvalidArgument as exc:
        raise InputMismatch(str(exc)) from exc


def _load_corpus(path):
    try:
        utts, _ = corpus_mod.load_corpus(_need(path, "corpus"))
    except (InvalidArgument, KeyError) as exc:
        raise InputMismatch(f"unreadable corpus: {exc}") from exc
    return utts


def _oracle(model_path):
    weights = _load_model(model_path)
    try:
        table = load_table(_need(table_path(model_path), "prototype table"), weights)
    except InvalidArgument as exc:
        raise InputMismatch(str(exc)) from exc
    return weights, table


def _spec_from_toml(path: Path) -> CorpusSpec:
    from .config import tomllib

    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        return CorpusSpec.from_dict(raw.get("corpus", raw))
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ------------------------------------------------------------------ commands


def cmd_build_model(args) -> int:
    params = OracleParams(cnn_activation=args.activation)
    weights, table = build_oracle(args.seed, params=params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(weights, out)
    save_table(table, table_path(out), weights.digest())
    print(f"model {weights.digest()} -> {out}")
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    if args.preset and args.spec:
        raise ConfigError("give either --preset or --spec, not both")
    if args.spec:
        spec = _spec_from_toml(_need(args.spec, "corpus spec"))
    else:
        spec = presets.get_preset(args.preset or "source")
    data = spec.to_dict()
    if args.seed is not None:
        data["seed"] = args.seed
    if args.num_utterances is not None:
        if spec.condition["type"] == "mixed":
            raise ConfigError("--num-utterances does not apply to mixed streams; edit segment counts")
        data["num_utterances"] = args.num_utterances
    spec = CorpusSpec.from_dict(data)
    weights, table = _oracle(args.model)
    utts = corpus_mod.generate(spec, (weights, table))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_corpus(utts, out, {"spec": spec.to_dict(), "model_hash": weights.digest()})
    print(f"{len(utts)} utterances -> {out}")
    return EXIT_OK


def cmd_extract_stats(args) -> int:
    weights = _load_model(args.model)
    stats = extract_stats(weights, _load_corpus(args.corpus))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_stats(stats, out)
    print(f"stats ({stats.num_values()} values) -> {out}")
    return EXIT_OK


def _adapt_inputs(args):
    raw = load_config(args.config)
    inputs = raw.get("inputs", {})
    overrides = {
        "population_size": args.population_size,
        "max_iterations": args.max_iterations,
        "sigma0": args.sigma0,
        "seed": args.seed,
        "ema_mode": args.ema,
        "gamma": args.gamma,
        "parallel_eval_width": args.parallel_eval_width,
    }
    config = adapt_config(raw, overrides)
    weights = _load_model(args.model or inputs.get("model"))
    stats = _load_stats(args.stats or inputs.get("stats"), weights)
    stream = _load_corpus(args.corpus or inputs.get("corpus"))
    if args.limit is not None:
        stream = stream[: args.limit]
    return config, weights, stats, stream


def cmd_adapt(args) -> int:
    config, weights, stats, stream = _adapt_inputs(args)
    out = run_dir(args, "adapt")
    result = run_stream(
        config, weights, stats, stream,
        checkpoint=out / "checkpoint.json", resume=args.resume, stop_after=args.stop_after,
        progress=lambda r: log.info("%s wer %s -> %s (%d it)", r["id"], r["source_wer"], r["adapted_wer"], r["iterations"]),
    )
    write_run(out, result, plot=not args.no_plot)
    agg = result.aggregates
    print(f"source WER {agg['source_wer']:.4f}  adapted WER {agg['adapted_wer']:.4f}  "
          f"({agg['utterances']} utterances) -> {out}")
    return EXIT_OK


def _parse_variants(text: str | None) -> list[Variant]:
    if not text:
        return default_grid()
    out = []
    for item in text.split(","):
        loss, _, mode = item.strip().partition("/")
        if loss not in LOSS_VARIANTS or mode not in ("t_ema", "reset", "continuous"):
            raise ConfigError(f"bad variant {item!r}; expected LOSS/MODE with LOSS in {sorted(LOSS_VARIANTS)}")
        out.append(Variant(loss, mode))
    return out


def cmd_ablate(args) -> int:
    config, weights, stats, stream = _adapt_inputs(args)
    grid = _parse_variants(args.variants)
    out = run_dir(args, "ablate")
    rows = run_ablation(config, weights, stats, stream, grid,
                        progress=lambda r: log.info("%s adapted WER %.4f", r["variant"], r["adapted_wer"]))
    cols = ("variant", "loss", "ema_mode", "source_wer", "adapted_wer", "blank_fraction", "mean_iterations")
    write_table(out / "ablation.csv", rows, cols)
    if not args.no_plot:
        from .plotting import plot_ablation

        plot_ablation(rows, out / "ablation.png")
    for r in rows:
        print(f"{r['variant']:<20} WER {r['adapted_wer']:.4f}  blank {r['blank_fraction']:.3f}")
    return EXIT_OK


def _parse_targets(items) -> dict[str, Path]:
    out = {}
    for item in items or []:
        label, sep, path = item.partition("=")
        if not sep:
            raise ConfigError(f"--target expects LABEL=PATH, got {item!r}")
        out[label] = Path(path)
    return out


def cmd_shift_report(args) -> int:
    if args.jitter < 0:
        raise ConfigError("--jitter must be >= 0")
    targets = {label: _load_corpus(p) for label, p in _parse_targets(args.target).items()}
    regenerate = args.presets or not targets or not args.source
    if regenerate:
        weights, table = _oracle(args.model)
    else:
        weights = _load_model(args.model)
    if args.source:
        source = _load_corpus(args.source)
    else:
        source = corpus_mod.generate(presets.source(args.num_utterances), (weights, table))
    if args.presets or not targets:
        for name, spec in presets.presets().items():
            if name in ("source", "mixed"):
                continue
            # fresh utterances, so the clean row measures sampling noise only
            data = {**spec.to_dict(), "num_utterances": args.num_utterances, "seed": 100 + spec.seed}
            targets.setdefault(name, corpus_mod.generate(CorpusSpec.from_dict(data), (weights, table)))
    rows = characterize_conditions(weights, source, targets, layer=args.layer, jitter=args.jitter)
    out = run_dir(args, "shift-report")
    write_table(out / "shift_report.csv", rows, SHIFT_COLUMNS)
    if not args.no_plot:
        from .plotting import plot_shift

        plot_shift(rows, out / "shift_report.png")
    for r in rows:
        ratio = "n/a" if r["ratio"] is None else f"{r['ratio']:.3g}"
        print(f"{r['condition']:<20} mean {r['mean_shift']:.4g}  cov {r['covariance_shift']:.4g}  ratio {ratio}")
    return EXIT_OK


def cmd_report(args) -> int:
    """Adapt the graded noise ladder and plot WER against sigma."""
    raw = load_config(args.config)
    config = adapt_config(raw, {"seed": args.seed, "ema_mode": args.ema})
    weights, table = _oracle(args.model)
    stats = _load_stats(args.stats, weights)
    out = run_dir(args, "report")
    rows = []
    for k, spec in enumerate(presets.noise_ladder(step=args.step, num_utterances=args.num_utterances)):
        stream = corpus_mod.generate(spec, (weights, table))
        result = run_stream(config, weights, stats, stream)
        write_run(out / f"level_{k}", result, plot=False)
        rows.append({"level": k, "sigma": spec.condition["sigma"], **{
            key: result.aggregates[key] for key in ("source_wer", "adapted_wer", "blank_fraction", "mean_iterations")
        }})
        print(f"sigma {rows[-1]['sigma']:.3f}  source {rows[-1]['source_wer']:.4f}  adapted {rows[-1]['adapted_wer']:.4f}")
    write_table(out / "ladder.csv", rows, ("level", "sigma", "source_wer", "adapted_wer", "blank_fraction", "mean_iterations"))
    from .plotting import plot_ladder

    plot_ladder(rows, out / "ladder.png")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = _need(args.path, args.what)
    if args.what == "model":
        _print_json(describe(path))
    elif args.what == "stats":
        try:
            stats = load_stats(path)
        except InvalidArgument as exc:
            raise InputMismatch(str(exc)) from exc
        tokens = None
        if args.model:
            weights = _load_model(args.model)
            stats.check_model(weights)
            tokens = weights.vocab.tokens
        _print_json(inspect_stats(stats, tokens))
    else:
        utts = _load_corpus(path)
        _print_json(corpus_mod.corpus_summary(utts))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _adapt_flags(p) -> None:
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--model")
    p.add_argument("--stats")
    p.add_argument("--corpus", help="target stream")
    p.add_argument("--out-dir")
    p.add_argument("--ema", choices=("t_ema", "reset", "continuous"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--population-size", type=int)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--sigma0", type=float)
    p.add_argument("--parallel-eval-width", type=int)
    p.add_argument("--limit", type=int, help="adapt only the first N utterances")
    p.add_argument("--no-plot", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptshift", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-model", help="construct the oracle model and its prototype table")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--activation", choices=("gelu", "identity"), default="gelu")
    p.set_defaults(func=cmd_build_model)

    p = sub.add_parser("gen-corpus", help="generate a corpus from a preset or a TOML spec")
    p.add_argument("--model", required=True)
    p.add_argument("--preset", choices=sorted(presets.presets()))
    p.add_argument("--spec", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--num-utterances", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("extract-stats", help="source statistics from a clean corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_stats)

    p = sub.add_parser("adapt", help="adapt a target stream")
    _adapt_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")
    p.add_argument("--stop-after", type=int, help="stop after N utterances (checkpoint kept)")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("ablate", help="loss and smoothing ablation table")
    _adapt_flags(p)
    p.add_argument("--variants", help="comma list of LOSS/MODE, e.g. full/t_ema,ent/t_ema")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("shift-report", help="mean/covariance shift table")
    p.add_argument("--model", required=True)
    p.add_argument("--source", help="source corpus (default: regenerated source preset)")
    p.add_argument("--target", action="append", metavar="LABEL=PATH")
    p.add_argument("--presets", action="store_true", help="add every shipped condition preset")
    p.add_argument("--num-utterances", type=int, default=200)
    p.add_argument("--layer", type=int, default=0, help="0 is the encoder output")
    p.add_argument("--jitter", type=float, default=1e-6)
    p.add_argument("--out-dir")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_shift_report)

    p = sub.add_parser("report", help="graded-noise ladder: CSV plus WER-vs-sigma figure")
    p.add_argument("--config", type=Path)
    p.add_argument("--model", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--step", type=float, default=presets.NOISE_STEP)
    p.add_argument("--num-utterances", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.add_argument("--ema", choices=("t_ema", "reset", "continuous"))
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("inspect", help="describe a model, stats file or corpus")
    p.add_argument("what", choices=("model", "stats", "corpus"))
    p.add_argument("path")
    p.add_argument("--model", help="model to resolve token names (stats only)")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericFailure, GenerationFailure) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidArgument as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
