"""Command-line entry point.

Verbs: pretrain, distill, finetune, eval, gradcheck, compare, export.
Exit codes: 0 success, 1 I/O or other runtime error, 2 config error,
3 checkpoint format/schema error, 4 numerical-check failure.
"""
import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import __version__
from . import checkpoint as ckpt_io
from . import gradcheck as gc
from . import tensor as T
from . import trainer
from .config import load_config
from .errors import ConfigError, FormatError, MomaError, SchemaError
from .metrics import evaluate, read_report
from .synthdata import generate, task_spec_from_config

log = logging.getLogger("momakd")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3, 4

REPORT_COLUMNS = ("method", "pretrained", "n", "acc", "f1", "kappa_w", "silhouette")


def header_lines(cfg):
    return [f"momakd {__version__}"] + cfg.to_text().rstrip("\n").splitlines()


def _write_header(fh, cfg):
    for line in header_lines(cfg):
        fh.write(f"# {line}\n" if line else "#\n")


def write_report(path, cfg, report, **meta):
    report.extra = {k: v for k, v in meta.items()}
    with open(path, "w", encoding="utf-8") as fh:
        _write_header(fh, cfg)
        fh.write("\n".join(report.as_lines()) + "\n")


def write_loss_csv(path, cfg, breakdowns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write_header(fh, cfg)
        w = csv.writer(fh)
        w.writerow(["step", "ce", "nce", "kl", "gamma", "total"])
        for i, b in enumerate(breakdowns):
            w.writerow([i, repr(b.ce), repr(b.nce), repr(b.kl), b.gamma, repr(b.total)])


def write_embeddings(path, cfg, model_tag, split, embeddings, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write_header(fh, cfg)
        w = csv.writer(fh)
        w.writerow(["model", "split", "label"] + [f"dim{i}" for i in range(embeddings.shape[1])])
        for e, y in zip(embeddings, labels):
            w.writerow([model_tag, split, int(y)] + [repr(float(v)) for v in e])


def _config(args):
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        changes["out_dir"] = args.out
    if getattr(args, "gamma", None) not in (None, "auto"):
        changes.update(gamma_auto=False, gamma=int(args.gamma))
    if getattr(args, "save_queue", False):
        changes["save_queue"] = True
    return cfg.with_(**changes) if changes else cfg


def _outdir(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def cmd_pretrain(args):
    cfg = _config(args)
    out = _outdir(cfg)
    run, ck = trainer.pretrain_teacher(cfg)
    ckpt_io.save(os.path.join(out, "teacher.ckpt"), ck)
    write_loss_csv(os.path.join(out, "losses.csv"), cfg, run.log)
    report = trainer.evaluate_stack(run.student, run.source.test)
    write_report(os.path.join(out, "metrics.txt"), cfg, report, tag="TC", kind="pretrain",
                 pretrained="none", seed=cfg.seed, domain="source", split="test")
    print(f"teacher source-test accuracy {report.accuracy:.4f} -> {out}")
    return EXIT_OK


def cmd_distill(args):
    cfg = _config(args)
    teacher_ck = ckpt_io.load(args.teacher)
    out = _outdir(cfg)
    run = trainer.new_distill_run(cfg, teacher_ck)
    trainer.fit(run)
    trainer.save_checkpoint(run, os.path.join(out, "student.ckpt"))
    write_loss_csv(os.path.join(out, "losses.csv"), cfg, run.log)
    report = trainer.evaluate_stack(run.student, run.target.test)
    write_report(os.path.join(out, "metrics.txt"), cfg, report, tag="MoMA", kind="distill",
                 pretrained=cfg.student_init, gamma=run.gamma, seed=cfg.seed, domain="target",
                 split="test")
    print(f"MoMA target-test accuracy {report.accuracy:.4f} (gamma={run.gamma}) -> {out}")
    return EXIT_OK


def cmd_finetune(args):
    cfg = _config(args)
    teacher_ck = ckpt_io.load(args.init) if args.init else None
    out = _outdir(cfg)
    run = trainer.new_finetune_run(cfg, teacher_ck)
    trainer.fit(run)
    trainer.save_checkpoint(run, os.path.join(out, "finetune.ckpt"))
    write_loss_csv(os.path.join(out, "losses.csv"), cfg, run.log)
    report = trainer.evaluate_stack(run.student, run.target.test)
    write_report(os.path.join(out, "metrics.txt"), cfg, report, tag=run.tag, kind="finetune",
                 pretrained="teacher" if teacher_ck else "none", seed=cfg.seed, domain="target",
                 split="test")
    print(f"{run.tag} target-test accuracy {report.accuracy:.4f} -> {out}")
    return EXIT_OK


def cmd_eval(args):
    ck = ckpt_io.load(args.checkpoint)
    model, kind = trainer.inference_from_checkpoint(ck)
    cfg = model.cfg
    source, target = generate(task_spec_from_config(cfg))
    domain = args.domain or ("source" if kind == "pretrain" else "target")
    dataset = (source if domain == "source" else target).split(args.split)
    if dataset.num_classes != model.num_classes:
        raise SchemaError(f"model predicts {model.num_classes} classes but the {domain} task has "
                          f"{dataset.num_classes}")
    with T.no_grad():
        embed = model.encoder(T.Tensor(dataset.inputs)).values
    logits = model.predict_logits(dataset.inputs)
    report = evaluate(dataset.labels, logits.argmax(axis=1), model.num_classes,
                      embeddings=embed, groups=dataset.groups)
    report.extra = {"tag": "eval", "kind": kind, "domain": domain, "split": args.split, "seed": cfg.seed}
    lines = report.as_lines()
    if args.report:
        write_report(args.report, cfg, report, **report.extra)
    print("\n".join(lines))
    if args.export_embeddings:
        write_embeddings(args.export_embeddings, cfg, kind, args.split, embed, dataset.labels)
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = _config(args)
    gc.check_dims(cfg)
    ok = True
    for k in range(args.seeds):
        results = gc.gradient_check(cfg.with_(seed=cfg.seed + k), corrupt=args.corrupt)
        print(f"seed {cfg.seed + k}")
        print(gc.format_table(results))
        ok = ok and all(r.passed for r in results)
    print("gradcheck:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


def _fmt(x):
    return f"{x:.4f}"


def compare_rows(paths):
    """One row per report, plus mean and std rows for tags seen more than once."""
    runs = []
    for p in paths:
        if not os.path.isfile(p):
            raise FileNotFoundError(f"report not found: {p}")
        rep = read_report(p)
        for key in ("accuracy", "macro_f1", "kappa_quadratic"):
            if key not in rep:
                raise FormatError(f"{p}: report lacks {key!r}")
        runs.append(rep)
    rows = []
    for rep in runs:
        rows.append({
            "method": rep.get("tag", "?"), "pretrained": rep.get("pretrained", "-"), "n": "1",
            "acc": _fmt(float(rep["accuracy"])), "f1": _fmt(float(rep["macro_f1"])),
            "kappa_w": _fmt(float(rep["kappa_quadratic"])),
            "silhouette": _fmt(float(rep["silhouette"])) if "silhouette" in rep else "-",
        })
    tags = {}
    for rep in runs:
        tags.setdefault((rep.get("tag", "?"), rep.get("pretrained", "-")), []).append(rep)
    for (tag, pre), group in tags.items():
        if len(group) < 2:
            continue
        row = {"method": f"{tag} (mean±std)", "pretrained": pre, "n": str(len(group))}
        for col, key in (("acc", "accuracy"), ("f1", "macro_f1"), ("kappa_w", "kappa_quadratic"),
                         ("silhouette", "silhouette")):
            vals = [float(r[key]) for r in group if key in r]
            if len(vals) < 2:
                row[col] = "-"
                continue
            row[col] = f"{np.mean(vals):.4f}±{np.std(vals, ddof=1):.4f}"
        rows.append(row)
    return rows


def cmd_compare(args):
    if len(args.reports) < 2:
        raise ConfigError("compare needs at least two reports")
    rows = compare_rows(args.reports)
    widths = {c: max(len(c), *(len(r[c]) for r in rows)) for c in REPORT_COLUMNS}
    print("  ".join(c.ljust(widths[c]) for c in REPORT_COLUMNS))
    for r in rows:
        print("  ".join(r[c].ljust(widths[c]) for c in REPORT_COLUMNS))
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# momakd {__version__}\n")
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def cmd_export(args):
    ck = ckpt_io.load(args.checkpoint)
    model, _ = trainer.inference_from_checkpoint(ck)
    ckpt_io.save(args.out, model.to_checkpoint())
    print(f"inference model ({len(model.parameters())} tensors) -> {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="momakd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"momakd {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="run configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", help="override the output directory")

    sp = sub.add_parser("pretrain", help="train the teacher on the source task")
    common(sp)
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("distill", help="momentum-contrast distillation into the student")
    common(sp)
    sp.add_argument("--teacher", required=True, help="teacher checkpoint from 'pretrain'")
    sp.add_argument("--gamma", choices=("auto", "0", "1"), default="auto",
                    help="KL switch; 'auto' derives it from the regime")
    sp.add_argument("--save-queue", action="store_true", help="store queue contents in the checkpoint")
    sp.set_defaults(fn=cmd_distill)

    sp = sub.add_parser("finetune", help="cross-entropy baseline on the target task")
    common(sp)
    sp.add_argument("--init", help="initialise from this teacher checkpoint")
    sp.set_defaults(fn=cmd_finetune)

    sp = sub.add_parser("eval", help="evaluate the student encoder and classifier of a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--domain", choices=("source", "target"))
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.add_argument("--report", help="also write the report to this file")
    sp.add_argument("--export-embeddings", metavar="CSV")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    common(sp)
    sp.add_argument("--seeds", type=int, default=1)
    sp.add_argument("--corrupt", choices=gc.TRAINABLE_BLOCKS, help=argparse.SUPPRESS)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("compare", help="tabulate metrics reports")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--csv", help="also write the table as CSV")
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("export", help="write an inference-only checkpoint (student encoder + classifier)")
    sp.add_argument("checkpoint")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_export)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, SchemaError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (OSError, MomaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
