"""Command-line interface: train, evaluate, explain, and synth subcommands.

Options come from CLI flags, an optional flat `key = value` config file, and
built-in defaults, in that precedence order. Unknown config keys are
rejected. Exit codes: 0 success, 2 usage/config error, 3 data or checkpoint
error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from contextnet import checkpoint as ckpt
from contextnet import data as dt
from contextnet import interpret as itp
from contextnet import synth as sy
from contextnet.metrics import auc, logloss, rela_imp
from contextnet.model import ModelConfig, init_params, predict_scores
from contextnet.training import TrainConfig, TrainingDiverged, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    """Bad option value, unknown config key, or missing input path."""


def _parse_config_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


# (name, type, default, help) per subcommand; None default means required
# unless the type is optional by construction
_COMMON_MODEL_OPTS = [
    ("embed_dim", int, 10, "embedding size per field"),
    ("agg_width", int, 20, "aggregation layer width"),
    ("blocks", int, 3, "number of refinement blocks (0 = logistic regression)"),
    ("variant", str, "sffn", "block variant: pffn | sffn"),
    ("sharing", str, "none", "cross-block sharing: none | agg | agg-proj"),
    ("ablate", str, "", "comma list from {tce,ffn,ln,rc} to remove"),
    ("l2", float, 0.0, "l2 penalty coefficient"),
]
_TRAIN_OPTS = [
    ("data", str, None, "training data file (tsv)"),
    ("schema", str, None, "schema file (name<TAB>kind per line)"),
    ("out", str, None, "output directory"),
    ("seed", int, 0, "seed for split/init/shuffle"),
    ("min_count", int, 1, "minimum token count for the vocabulary"),
    *_COMMON_MODEL_OPTS,
    ("batch_size", int, 1024, "mini-batch size"),
    ("lr", float, 1e-4, "Adam learning rate"),
    ("epochs", int, 20, "maximum training epochs"),
    ("patience", int, 2, "non-improving evaluations tolerated before stopping"),
    ("eval_every", int, 1, "evaluate every n-th epoch"),
]
_EVAL_OPTS = [
    ("checkpoint", str, None, "checkpoint file"),
    ("vocab", str, None, "vocabulary file"),
    ("schema", str, None, "schema file"),
    ("data", str, None, "data file"),
    ("split", str, "all", "which 8:1:1 part to score: train | val | test | all"),
    ("seed", int, None, "split seed (default: the checkpoint's training seed)"),
    ("base_auc", float, None, "baseline AUC for relative improvement"),
]
_EXPLAIN_OPTS = [
    ("checkpoint", str, None, "checkpoint file"),
    ("vocab", str, None, "vocabulary file"),
    ("schema", str, None, "schema file"),
    ("data", str, None, "data file"),
    ("instance", int, None, "explain the n-th record (0-based)"),
    ("corpus", str, None, "corpus importance mode: sum | norm"),
    ("alpha", float, 10.0, "frequency damping for norm mode"),
    ("top", int, 20, "rows to print in corpus mode (0 = all)"),
    ("out", str, None, "also write the report to this file"),
]
_SYNTH_OPTS = [
    ("out", str, None, "output directory"),
    ("fields", int, 6, "number of categorical fields"),
    ("cardinalities", str, "50", "tokens per field (single value or comma list)"),
    ("rows", int, 200_000, "instances to generate"),
    ("scale", float, 0.25, "interaction strength (0 = pure noise labels)"),
    ("latent_dim", int, 4, "latent vector size per token"),
    ("token_skew", float, 0.0, "rank-frequency skew exponent (0 = uniform)"),
    ("seed", int, 0, "generator seed"),
]
_OPTS = {
    "train": _TRAIN_OPTS,
    "evaluate": _EVAL_OPTS,
    "explain": _EXPLAIN_OPTS,
    "synth": _SYNTH_OPTS,
}
_REQUIRED = {
    "train": ("data", "schema", "out"),
    "evaluate": ("checkpoint", "vocab", "schema", "data"),
    "explain": ("checkpoint", "vocab", "schema", "data"),
    "synth": ("out",),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contextnet",
        description="Train, evaluate, and explain contextual-embedding CTR models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, opts in _OPTS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", type=str, default=None, help="flat key=value file")
        for name, typ, default, help_text in opts:
            flag = "--" + name.replace("_", "-")
            p.add_argument(flag, type=typ, default=None, help=help_text)
    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge CLI flags over config-file values over defaults."""
    opts_spec = _OPTS[args.command]
    known = {name for name, _, _, _ in opts_spec}
    file_values = {}
    if args.config is not None:
        raw = _parse_config_file(args.config)
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} for {args.command}")
            file_values[key] = value
    merged = {}
    for name, typ, default, _ in opts_spec:
        flag_value = getattr(args, name)
        if flag_value is not None:
            merged[name] = flag_value
        elif name in file_values:
            try:
                merged[name] = typ(file_values[name])
            except ValueError:
                raise ConfigError(
                    f"config key {name!r}: cannot parse {file_values[name]!r} as {typ.__name__}"
                ) from None
        else:
            merged[name] = default
    for name in _REQUIRED[args.command]:
        if merged[name] is None:
            raise ConfigError(f"missing required option --{name.replace('_', '-')}")
    return merged


def _require_file(path: str, what: str) -> None:
    if not os.path.exists(path):
        raise ConfigError(f"{what} not found: {path}")


def _model_config(opts: dict, n_fields: int) -> ModelConfig:
    ablate = {a.strip() for a in opts["ablate"].split(",") if a.strip()}
    unknown = ablate - {"tce", "ffn", "ln", "rc"}
    if unknown:
        raise ConfigError(f"unknown ablation flags: {sorted(unknown)}")
    try:
        return ModelConfig(
            n_fields=n_fields,
            embed_dim=opts["embed_dim"],
            agg_width=opts["agg_width"],
            n_blocks=opts["blocks"],
            variant=opts["variant"],
            sharing=opts["sharing"],
            no_tce="tce" in ablate,
            no_ffn="ffn" in ablate,
            no_ln="ln" in ablate,
            no_rc="rc" in ablate,
            l2=opts["l2"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(opts: dict) -> int:
    _require_file(opts["data"], "data file")
    _require_file(opts["schema"], "schema file")
    schema = dt.load_schema(opts["schema"])
    records = dt.load_records(opts["data"], schema)
    train_recs, val_recs, test_recs = dt.split_dataset(records, opts["seed"])
    vocab = dt.build_vocabulary(train_recs, schema, opts["min_count"])
    cards = dt.cardinalities(schema, vocab)
    train_set = dt.encode_dataset(train_recs, schema, vocab)
    val_set = dt.encode_dataset(val_recs, schema, vocab)
    test_set = dt.encode_dataset(test_recs, schema, vocab)

    config = _model_config(opts, len(schema))
    params = init_params(
        config, cards, opts["seed"], pos_rate=float(train_set.labels.mean())
    )
    tconf = TrainConfig(
        batch_size=opts["batch_size"],
        lr=opts["lr"],
        max_epochs=opts["epochs"],
        patience=opts["patience"],
        seed=opts["seed"],
        eval_every=opts["eval_every"],
    )
    best, history = train(config, params, train_set, val_set, tconf)

    test_scores = predict_scores(test_set, best, config)
    test_auc = auc(test_scores, test_set.labels)
    test_ll = logloss(test_scores, test_set.labels)

    out_dir = opts["out"]
    os.makedirs(out_dir, exist_ok=True)
    ckpt.save_checkpoint(
        os.path.join(out_dir, "checkpoint.bin"),
        best,
        config,
        cards,
        [(f.name, f.kind) for f in schema],
        opts["seed"],
    )
    dt.save_vocabulary(vocab, os.path.join(out_dir, "vocab.txt"))
    with open(os.path.join(out_dir, "history.tsv"), "w", encoding="utf-8") as fh:
        fh.write(history.to_tsv())
    with open(os.path.join(out_dir, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"test_auc\t{test_auc:.10f}\n")
        fh.write(f"test_logloss\t{test_ll:.10f}\n")
    print(f"trained {len(history.epochs)} epochs; best val AUC {history.best_val_auc:.6f} at epoch {history.best_epoch}")
    print(f"test_auc\t{test_auc:.10f}")
    print(f"test_logloss\t{test_ll:.10f}")
    print(f"outputs in {out_dir}")
    return EXIT_OK


def _load_model_inputs(opts: dict):
    for key, what in (
        ("checkpoint", "checkpoint file"),
        ("vocab", "vocabulary file"),
        ("schema", "schema file"),
        ("data", "data file"),
    ):
        _require_file(opts[key], what)
    params, config, header = ckpt.load_checkpoint(opts["checkpoint"])
    schema = dt.load_schema(opts["schema"])
    vocab = dt.load_vocabulary(opts["vocab"])
    if len(schema) != config.n_fields:
        raise ckpt.CheckpointError(
            f"schema has {len(schema)} fields but checkpoint was trained with {config.n_fields}"
        )
    cards = dt.cardinalities(schema, vocab)
    if cards != header["cardinalities"]:
        raise ckpt.CheckpointError(
            f"vocabulary cardinalities {cards} do not match checkpoint {header['cardinalities']}"
        )
    records = dt.load_records(opts["data"], schema)
    return params, config, header, schema, vocab, records


def cmd_evaluate(opts: dict) -> int:
    params, config, header, schema, vocab, records = _load_model_inputs(opts)
    split = opts["split"]
    if split not in ("train", "val", "test", "all"):
        raise ConfigError(f"unknown split {split!r}")
    if split != "all":
        seed = opts["seed"] if opts["seed"] is not None else header["seed"]
        parts = dict(zip(("train", "val", "test"), dt.split_dataset(records, seed)))
        records = parts[split]
    dataset = dt.encode_dataset(records, schema, vocab)
    scores = predict_scores(dataset, params, config)
    split_auc = auc(scores, dataset.labels)
    split_ll = logloss(scores, dataset.labels)
    print(f"auc\t{split_auc:.10f}")
    print(f"logloss\t{split_ll:.10f}")
    if opts["base_auc"] is not None:
        improvement = rela_imp(split_auc, opts["base_auc"])
        print(f"relaimp\t{improvement * 100:+.2f}%")
    return EXIT_OK


def cmd_explain(opts: dict) -> int:
    params, config, header, schema, vocab, records = _load_model_inputs(opts)
    if (opts["instance"] is None) == (opts["corpus"] is None):
        raise ConfigError("pass exactly one of --instance or --corpus")
    field_names = [f.name for f in schema]
    lines = []
    if opts["instance"] is not None:
        n = opts["instance"]
        if not 0 <= n < len(records):
            raise dt.DataError(f"instance {n} out of range (0..{len(records) - 1})")
        inst = dt.encode_instance(records[n], schema, vocab)
        report = itp.instance_feature_weights(params, config, inst, field_names)
        lines.append(f"instance\t{n}")
        lines.append(f"score\t{report.score:.10f}")
        lines.append(f"logit\t{report.logit:.10f}")
        lines.append(f"intercept\t{report.intercept:.10f}")
        lines.append("field\ttoken\tweight")
        order = np.argsort(-np.abs(report.weights))
        for i in order:
            token = vocab.token_of(schema[i].name, int(inst.indices[i]))
            lines.append(f"{schema[i].name}\t{token}\t{report.weights[i]:+.10f}")
        matrices = itp.block_dot_products(params, config, inst)
        for level, mat in enumerate(matrices):
            lines.append(f"block-correlations\tlevel\t{level}")
            for row in mat:
                lines.append("\t".join(f"{v:+.6f}" for v in row))
    else:
        mode = opts["corpus"]
        if mode not in (itp.IMPORTANCE_SUM, itp.IMPORTANCE_NORM):
            raise ConfigError(f"unknown corpus mode {mode!r}")
        dataset = dt.encode_dataset(records, schema, vocab)
        rows = itp.corpus_feature_importance(
            params, config, dataset, schema, vocab, mode=mode, alpha=opts["alpha"]
        )
        top = opts["top"]
        if top > 0:
            rows = rows[:top]
        lines.append("field\ttoken\tcount\tscore")
        for r in rows:
            lines.append(f"{r.field}\t{r.token}\t{r.count}\t{r.score:.10f}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if opts["out"] is not None:
        with open(opts["out"], "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_synth(opts: dict) -> int:
    try:
        cards = tuple(int(c) for c in opts["cardinalities"].split(",") if c.strip())
    except ValueError:
        raise ConfigError(
            f"cannot parse cardinalities {opts['cardinalities']!r}"
        ) from None
    spec = sy.SynthSpec(
        n_fields=opts["fields"],
        cardinalities=cards,
        rows=opts["rows"],
        scale=opts["scale"],
        latent_dim=opts["latent_dim"],
        token_skew=opts["token_skew"],
        seed=opts["seed"],
    )
    try:
        data = sy.generate(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    paths = sy.write_dataset(data, opts["out"])
    print(f"rows\t{spec.rows}")
    print(f"positive_rate\t{data.labels.mean():.6f}")
    print(f"bayes_auc\t{data.bayes_auc:.10f}")
    print(f"outputs in {opts['out']}")
    return EXIT_OK


_HANDLERS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        return _HANDLERS[args.command](opts)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (dt.DataError, ckpt.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
