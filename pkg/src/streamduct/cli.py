"""Command line: streamduct {gen-data,train,decode,eval,quantize,selftest}."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .decoder import read_hypotheses, write_hypotheses
from .experiments import decode_examples
from .metrics import UndefinedMetric, evaluate, format_table
from .model_zoo import CheckpointFormatError, CheckpointIntegrityError, load_checkpoint, quantize_encoder, \
    save_checkpoint
from .numerics import InvalidArgument
from .synthdata import LANGUAGES, DatasetParseError, Task, generate, read_dataset, write_dataset
from .train import TrainingDiverged, train

log = logging.getLogger("streamduct")


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.data_seed if args.seed is None else args.seed
    examples = generate(Task(cfg.task()), args.lang, args.count, seed)
    write_dataset(examples, args.out)
    print(f"wrote {len(examples)} {args.lang} examples to {args.out}")
    return 0


def _dataset_lang(examples, path) -> str:
    langs = {ex.lang for ex in examples}
    if len(langs) != 1:
        raise InvalidArgument(f"{path}: expected one language per dataset, found {sorted(langs)}")
    return langs.pop()


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    datasets = {}
    for path in args.data.split(","):
        examples = read_dataset(path)
        lang = _dataset_lang(examples, path)
        if lang in datasets:
            raise InvalidArgument(f"two datasets for {lang}")
        datasets[lang] = examples
    langs = ",".join(datasets)
    if cfg.languages != langs:
        log.info("branches follow --data order: %s", langs)
        cfg = cfg.replace(languages=langs)
    try:
        model, tlog = train(cfg, datasets, init_encoder=args.init_encoder, checkpoint_path=args.out,
                            log_every=args.log_every)
    except TrainingDiverged as e:
        print(f"error: {e}; last good weights in {e.checkpoint}", file=sys.stderr)
        return 1
    log_path = Path(f"{args.out}.log.tsv")
    log_path.write_text(tlog.to_tsv(), encoding="utf-8")
    final = {lang: tlog.losses(lang)[-1] for lang in cfg.language_list if tlog.losses(lang)}
    print(f"trained {cfg.steps} steps in {tlog.wall_clock:.1f}s; final loss "
          + " ".join(f"{k}={v:.4f}" for k, v in final.items()))
    print(f"checkpoint {args.out}, log {log_path}")
    return 0


def cmd_decode(args) -> int:
    model = load_checkpoint(args.ckpt)
    examples = read_dataset(args.data)
    lang = args.lang or _dataset_lang(examples, args.data)
    hyps = decode_examples(model, Task(model.cfg.task()), examples, lang)
    write_hypotheses(hyps, args.out)
    truncated = sum(h.truncated for h in hyps)
    print(f"decoded {len(hyps)} lines ({truncated} truncated) to {args.out}")
    return 0


def _split_label(spec: str) -> tuple[str | None, str]:
    label, sep, path = spec.partition("=")
    return (label, path) if sep else (None, spec)


def cmd_eval(args) -> int:
    refs = read_dataset(args.ref)
    lang = _dataset_lang(refs, args.ref)
    targets = [ex.target for ex in refs]
    rows, by_system = [], {}
    for spec in args.hyp:
        label, path = _split_label(spec)
        hyps = read_hypotheses(path, frame_ms=args.frame_ms)
        if len(hyps) != len(refs):
            raise InvalidArgument(f"{path}: {len(hyps)} hypotheses for {len(refs)} references")
        rows.append(evaluate(hyps, targets, lang, label))
        by_system[label or Path(path).stem] = hyps
    table = format_table(rows)
    print(table, end="")
    if args.figures:
        from .plotting import plot_comparison, plot_paths
        out = Path(args.figures)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.tsv").write_text(
            "\n".join("\t".join(line.split()) for line in table.splitlines()) + "\n", encoding="utf-8")
        figs = [plot_paths(by_system, out / "paths.png"), plot_comparison(rows, out / "comparison.png")]
        print("figures: " + " ".join(str(f) for f in figs))
    return 0


def cmd_quantize(args) -> int:
    model = load_checkpoint(args.ckpt)
    qmodel, report = quantize_encoder(model)
    save_checkpoint(qmodel, args.out)
    print("tensor\tscale\tzero_point\tmax_error\tbound_ok")
    for name, r in report.items():
        print(f"{name}\t{r['scale']:.6g}\t{r['zero_point']}\t{r['max_error']:.3g}\t{r['bound_ok']}")
    ok = all(r["bound_ok"] for r in report.values())
    print(f"quantized {len(report)} encoder tensors to {args.out}; bound {'holds' if ok else 'VIOLATED'}")
    return 0 if ok else 1


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    return 0 if run_selftest() else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamduct", description="Streaming transducer translation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic parallel dataset")
    g.add_argument("--config")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--lang", choices=LANGUAGES, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, help="data seed (default: data_seed from the config)")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a bilingual or multilingual model")
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="dataset path, or comma list with one per branch")
    t.add_argument("--out", required=True)
    t.add_argument("--init-encoder", help="checkpoint whose encoder initializes this run")
    t.add_argument("--log-every", type=int, default=100)
    t.set_defaults(fn=cmd_train)

    d = sub.add_parser("decode", help="greedy streaming decode of a dataset")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--lang", help="branch to decode with (default: the dataset language)")
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_decode)

    e = sub.add_parser("eval", help="quality and latency table")
    e.add_argument("--hyp", action="append", required=True, metavar="[LABEL=]PATH",
                   help="hypothesis file; repeat to compare systems")
    e.add_argument("--ref", required=True)
    e.add_argument("--frame-ms", type=float, default=40.0, help="duration of one encoder frame")
    e.add_argument("--figures", metavar="DIR", help="also write metrics.tsv and figures here")
    e.set_defaults(fn=cmd_eval)

    q = sub.add_parser("quantize", help="uint8 quantization of the encoder")
    q.add_argument("--ckpt", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_quantize)

    s = sub.add_parser("selftest", help="run the built-in oracle, gradient and mask checks")
    s.set_defaults(fn=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, DatasetParseError, CheckpointFormatError, CheckpointIntegrityError,
            InvalidArgument, UndefinedMetric, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
