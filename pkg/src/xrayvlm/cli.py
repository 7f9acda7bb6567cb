"""Command-line entry point: ``python -m xrayvlm <command> ...``."""

import argparse
import configparser
import dataclasses
import json
import logging
import sys
from pathlib import Path

import torch

from . import corpus, metrics, training
from .decoders import DecoderConfig, GenerationConfig
from .encoders import EncoderConfig
from .model import PAIR_NAMES, default_decoder_config, default_encoder_config
from .tokenizer import decode

log = logging.getLogger("xrayvlm")

SECTION_EXPERIMENT = "experiment"


class CommandError(Exception):
    """A runtime failure reported as a one-line diagnostic with exit code 1."""


# ---------------------------------------------------------------- config file

def _ints(value):
    parts = [int(v) for v in str(value).replace(" ", "").split(",") if v]
    return parts[0] if len(parts) == 1 else tuple(parts)


def _bool(value):
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def run_config_from_mapping(section, overrides=None):
    """Build a RunConfig from ``key=value`` pairs (a config section or plain dict)."""
    s = dict(section)
    s.update({k: v for k, v in (overrides or {}).items() if v is not None})
    enc_kind, dec_kind = s.get("encoder", "vit"), s.get("decoder", "gpt2")
    if (enc_kind, dec_kind) not in PAIR_NAMES:
        raise CommandError(f"unsupported pairing {enc_kind}-{dec_kind}")
    max_len = int(s.get("max_len", 60))

    enc = dataclasses.asdict(default_encoder_config(enc_kind))
    for key, field, conv in (("image_size", "image_size", int), ("patch_size", "patch_size", int),
                             ("in_chans", "in_chans", int), ("embed_dim", "embed_dim", int),
                             ("encoder_depth", "depth", _ints), ("encoder_heads", "num_heads", _ints),
                             ("window_size", "window_size", int), ("mlp_ratio", "mlp_ratio", float),
                             ("relative_position_bias", "relative_position_bias", _bool)):
        if key in s:
            enc[field] = conv(s[key])
    if enc_kind == "swin" and isinstance(enc["depth"], int):
        enc["depth"] = (enc["depth"],)
    dec = dataclasses.asdict(default_decoder_config(dec_kind, max_len=max_len))
    for key, field, conv in (("model_dim", "model_dim", int), ("decoder_depth", "depth", int),
                             ("decoder_heads", "num_heads", int), ("mlp_ratio", "mlp_ratio", float)):
        if key in s:
            dec[field] = conv(s[key])

    kwargs = dict(encoder_kind=enc_kind, decoder_kind=dec_kind,
                  encoder=EncoderConfig(**enc), decoder=DecoderConfig(**dec), max_len=max_len)
    for key, conv in (("epochs", int), ("batch_size", int), ("learning_rate", float),
                      ("weight_decay", float), ("seed", int), ("min_freq", int),
                      ("grad_clip", float), ("beta1", float), ("beta2", float), ("eps", float)):
        if key in s:
            kwargs[key] = conv(s[key])
    if "freeze_encoder" in s:
        kwargs["freeze_encoder"] = _bool(s["freeze_encoder"])
    if "name" in s:
        kwargs["name"] = s["name"]
    return training.RunConfig(**kwargs)


def read_experiment(path, overrides=None):
    """Parse an experiment file into ``(settings, [(section_name, RunConfig), ...])``."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise CommandError(f"cannot read config {path}: {exc}") from exc
    settings = dict(cp[SECTION_EXPERIMENT]) if cp.has_section(SECTION_EXPERIMENT) else {}
    runs = []
    for name in cp.sections():
        if name == SECTION_EXPERIMENT:
            continue
        section = dict(cp[name])
        if "seed" in settings and "seed" not in section:
            section["seed"] = settings["seed"]
        try:
            runs.append((name, run_config_from_mapping(section, overrides)))
        except ValueError as exc:
            raise CommandError(f"{path} [{name}]: {exc}") from exc
    if not runs:
        raise CommandError(f"{path}: no run sections")
    if len(runs) > len(PAIR_NAMES):
        raise CommandError(f"{path}: at most {len(PAIR_NAMES)} runs are supported")
    return settings, runs


# ---------------------------------------------------------------- helpers

def _out_dir(args, settings=None):
    out = args.out or (settings or {}).get("out")
    if not out:
        raise CommandError("--out is required")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, settings=None):
    data = args.data or (settings or {}).get("data")
    if not data:
        raise CommandError("--data is required")
    mf = getattr(args, "manifest", None) or (settings or {}).get("manifest") or Path(data) / "manifest.tsv"
    return corpus.load_manifest(data, mf)


def read_tsv(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh.read().splitlines(), start=1):
            if not line.strip() or (lineno == 1 and line == "study_id\ttext"):
                continue
            sid, sep, text = line.partition("\t")
            if not sep:
                raise CommandError(f"{path}:{lineno}: expected study_id<TAB>text")
            out[sid] = text
    return out


def write_tsv(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, text in rows.items():
            fh.write(f"{sid}\t{text}\n")


def _overrides(args):
    return {"epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr,
            "weight_decay": args.weight_decay, "seed": args.seed, "max_len": args.max_len}


def predict(model, vocab, manifest, split, gen):
    model.eval()
    preds, refs = {}, {}
    for ex in training.make_examples(manifest, split, vocab, model.encoder.config, gen.max_len):
        seq = model.generate(ex.image, gen)
        preds[ex.study_id] = decode(seq.ids, vocab)
        refs[ex.study_id] = ex.text
    return preds, refs


def _gen_config(settings, max_len):
    strategy = settings.get("strategy", "greedy")
    return GenerationConfig(strategy=strategy,
                            beam_width=int(settings.get("beam_width", 1 if strategy == "greedy" else 3)),
                            max_len=max_len, fixed_length=_bool(settings.get("fixed_length", "true")))


# ---------------------------------------------------------------- commands

def cmd_ingest(args):
    manifest = _manifest(args)
    report = corpus.validate_manifest(manifest)
    summary = {
        "total": report.total,
        "split_counts": report.split_counts,
        "split_percent": report.split_percent,
        "ratio_ok": report.ratio_ok,
        "missing_files": report.missing_files,
        "empty_reports": report.empty_reports,
        "empty_splits": report.empty_splits,
    }
    counts = ", ".join(f"{k}={v}" for k, v in report.split_counts.items())
    print(f"{report.total} records ({counts}); ratio {'ok' if report.ratio_ok else 'off 70:20:10'}; "
          f"{len(report.missing_files)} missing images; {len(report.empty_reports)} empty reports")
    if args.out:
        (_out_dir(args) / "validation.json").write_text(json.dumps(summary, indent=2) + "\n")
    return 0


def cmd_stats(args):
    manifest = _manifest(args)
    splits = [args.split] if args.split else list(corpus.SPLITS)
    try:
        rows = [(s, corpus.report_length_stats(manifest, s, ddof=args.ddof)) for s in splits]
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    print(corpus.stats_to_text(rows))
    if args.out:
        out = _out_dir(args)
        (out / "report_length_stats.csv").write_text(corpus.stats_to_csv(rows))
        (out / "report_length_stats.txt").write_text(corpus.stats_to_text(rows) + "\n")
    return 0


def cmd_wordcloud(args):
    manifest = _manifest(args)
    out = _out_dir(args)
    split = args.split or "all"
    for removed, tag in ((False, "before_stopwords"), (True, "after_stopwords")):
        table = corpus.word_frequencies(manifest, split, remove_stopwords=removed)
        (out / f"word_frequencies_{tag}.csv").write_text(corpus.frequencies_to_csv(table))
        top = ", ".join(f"{w}:{c}" for w, c in table.most_common(8))
        print(f"{tag}: {len(table.entries)} distinct words, {table.total()} tokens; top {top}")
        if args.render:
            try:
                from wordcloud import WordCloud
            except ImportError as exc:
                raise CommandError("--render needs the optional 'wordcloud' package") from exc
            WordCloud(width=800, height=400, background_color="white", random_state=0) \
                .generate_from_frequencies(table.entries).to_file(str(out / f"wordcloud_{tag}.png"))
    return 0


def _write_run_artifacts(result, out, title):
    out.mkdir(parents=True, exist_ok=True)
    csv_text = training.export_loss_curves(result)
    (out / "loss_curves.csv").write_text(csv_text)
    training.plot_loss_curves(csv_text, out / "loss_curves.png", f"Training vs Validation Loss of {title} Model")
    result.vocab.save(out / "vocab.txt")


def _fit(run, manifest, out):
    torch.manual_seed(run.seed)
    try:
        return training.fit(run, manifest, out)
    except (ValueError, OSError, FloatingPointError) as exc:
        raise CommandError(f"{run.name}: {exc}") from exc


def cmd_train(args):
    settings = {}
    if args.config:
        settings, runs = read_experiment(args.config, _overrides(args))
        run = runs[0][1]
    else:
        run = run_config_from_mapping({"encoder": args.encoder, "decoder": args.decoder}, _overrides(args))
    manifest = _manifest(args, settings)
    out = _out_dir(args, settings)
    result = _fit(run, manifest, out)
    _write_run_artifacts(result, out, run.name)
    print(training.export_loss_curves(result), end="")
    print(f"best epoch {result.best_epoch}: {result.best_checkpoint}")
    return 0


def cmd_generate(args):
    if not args.checkpoint:
        raise CommandError("--checkpoint is required")
    model, vocab, run, _, _ = training.load_checkpoint(args.checkpoint)
    manifest = _manifest(args)
    out = _out_dir(args)
    max_len = args.max_len or run.max_len
    gen = GenerationConfig(strategy="beam" if args.beam > 1 else "greedy", beam_width=args.beam,
                           max_len=max_len, fixed_length=not args.no_fixed_length)
    preds, refs = predict(model, vocab, manifest, args.split or "test", gen)
    write_tsv(preds, out / "predictions.tsv")
    write_tsv(refs, out / "references.tsv")
    print(f"wrote {len(preds)} predictions to {out / 'predictions.tsv'}")
    return 0


def cmd_evaluate(args):
    if not (args.pred and args.ref):
        raise CommandError("--pred and --ref are required")
    try:
        row = metrics.evaluate_corpus(read_tsv(args.pred), read_tsv(args.ref))
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    rows = {args.name: row}
    print(metrics.metric_report_text(rows), end="")
    if args.out:
        out = _out_dir(args)
        (out / "metric_report.csv").write_text(metrics.metric_report_csv(rows))
        (out / "metric_report.txt").write_text(metrics.metric_report_text(rows))
    return 0


def cmd_compare(args):
    path = args.config or args.spec
    if not path:
        raise CommandError("--config is required")
    settings, runs = read_experiment(path, _overrides(args))
    manifest = _manifest(args, settings)
    out = _out_dir(args, settings)
    rows = {}
    for slug, run in runs:
        log.info("training %s", run.name)
        result = _fit(run, manifest, out / slug)
        _write_run_artifacts(result, out / slug, run.name)
        preds, refs = predict(result.model, result.vocab, manifest, "test", _gen_config(settings, run.max_len))
        write_tsv(preds, out / slug / "predictions.tsv")
        write_tsv(refs, out / "references.tsv")
        rows[run.name] = metrics.evaluate_corpus(preds, refs)
    (out / "metric_report.csv").write_text(metrics.metric_report_csv(rows))
    text = metrics.metric_report_text(rows)
    (out / "metric_report.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_plot_loss(args):
    if not args.curves:
        raise CommandError("--curves is required")
    out = _out_dir(args)
    png = out / (Path(args.curves).stem + ".png")
    training.plot_loss_curves(Path(args.curves).read_text(), png, args.title)
    print(f"wrote {png}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "wordcloud": cmd_wordcloud,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "plot-loss": cmd_plot_loss,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", help="dataset root containing manifest.tsv")
    common.add_argument("--manifest", help="manifest file (default: <data>/manifest.tsv)")
    common.add_argument("--out", help="directory for every artifact the command writes")
    common.add_argument("--seed", type=int)
    common.add_argument("--config", help="experiment file (key=value sections, one per run)")
    common.add_argument("--split", choices=[*corpus.SPLITS, "all"])
    common.add_argument("--checkpoint")
    common.add_argument("--pred")
    common.add_argument("--ref")
    common.add_argument("--max-len", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--weight-decay", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="xrayvlm", description="Chest X-ray report generation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="load and validate a manifest")
    p = sub.add_parser("stats", parents=[common], help="report-length statistics per split")
    p.add_argument("--ddof", type=int, default=1, help="1 = sample std (default), 0 = population std")
    p = sub.add_parser("wordcloud", parents=[common], help="word frequencies before/after stopword removal")
    p.add_argument("--render", action="store_true", help="also render PNG word clouds")
    p = sub.add_parser("train", parents=[common], help="train one encoder-decoder pairing")
    p.add_argument("--encoder", choices=["vit", "swin"], default="vit")
    p.add_argument("--decoder", choices=["gpt2", "bart"], default="gpt2")
    p = sub.add_parser("generate", parents=[common], help="generate reports from a checkpoint")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--no-fixed-length", action="store_true", help="stop at the first EOS")
    p = sub.add_parser("evaluate", parents=[common], help="score predictions against references")
    p.add_argument("--name", default="model")
    p = sub.add_parser("compare", parents=[common], help="train, generate and score every configured run")
    p.add_argument("--spec", help="alias of --config")
    p = sub.add_parser("plot-loss", parents=[common], help="plot a loss-curve CSV")
    p.add_argument("--curves", help="CSV with epoch,train_loss,val_loss")
    p.add_argument("--title")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CommandError, corpus.ManifestError, corpus.IntegrityError, OSError, ValueError) as exc:
        print(f"xrayvlm {args.command}: error: {exc}", file=sys.stderr)
        return 1


run_command = main
