"""Command-line entry point: ``riskcal <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import SCENARIOS, load_csv, stratified_split, write_csv
from .experiment import (
    dump_results,
    emit_tradeoff,
    load_spec,
    render_table,
    run_ablation,
    run_comparison,
)
from .hierarchy import preset_taxonomy, read_taxonomy
from .losses import LossConfig
from .metrics import confusion_matrix, taxonomy_report
from .model import TrainConfig, model_document, predict, train

log = logging.getLogger("riskcal")


def _taxonomy_path_for(data_path: Path) -> Path:
    return data_path.with_name(data_path.stem + ".taxonomy.csv")


def cmd_gen_data(args) -> None:
    dataset = SCENARIOS[args.scenario](args.seed)
    out = Path(args.out)
    tax_out = Path(args.taxonomy_out) if args.taxonomy_out else _taxonomy_path_for(out)
    write_csv(dataset, out)
    tax_out.write_text(dataset.taxonomy.to_csv(), encoding="utf-8")
    log.info("wrote %d samples to %s and taxonomy to %s", dataset.n, out, tax_out)


def cmd_train(args) -> None:
    taxonomy = preset_taxonomy(args.preset) if args.preset else read_taxonomy(args.taxonomy)
    with open(args.loss, encoding="utf-8") as fh:
        loss = LossConfig.from_dict(json.load(fh))
    dataset = stratified_split(load_csv(args.data, taxonomy), tuple(args.fractions), args.seed)
    config = TrainConfig(
        loss=loss,
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        weight_decay=args.weight_decay,
        schedule=args.schedule,
        seed=args.seed,
        architecture=args.arch,
        hidden_dim=args.hidden_dim,
    )
    model, history = train(dataset, config)
    doc = model_document(model, config)
    doc["history"] = history.to_list()
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    x_test, y_test = dataset.subset("test")
    report = taxonomy_report(
        confusion_matrix(y_test, predict(model, x_test), taxonomy.k), taxonomy
    )
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
    cer_txt = "n/a" if report.cer is None else f"{report.cer:.2f}%"
    print(
        f"test: CER {cer_txt}  F1-macro {report.f1_macro:.4f}  "
        f"accuracy {report.accuracy:.4f}  "
        f"(visual {report.visual_ambiguity_count}, type I {report.type1_count}, "
        f"type II {report.type2_count})"
    )


def _write_results(results, args) -> None:
    Path(args.out).write_text(dump_results(results), encoding="utf-8")
    if getattr(args, "table", None):
        Path(args.table).write_text(render_table(results), encoding="utf-8")
    for name, entry in results["summary"].items():
        cer_entry = entry["cer"]
        cer_txt = "n/a" if cer_entry is None else f"{cer_entry['median']:.2f}%"
        imp = results["improvements"].get(name)
        suffix = f"  vs {results['baseline']}: {imp['formatted']}" if imp else ""
        print(f"{name:<16} CER {cer_txt:>8}  F1 {entry['f1_macro']['median']:.4f}{suffix}")


def cmd_compare(args) -> None:
    _write_results(run_comparison(load_spec(args.spec), jobs=args.jobs), args)


def cmd_ablate(args) -> None:
    _write_results(run_ablation(load_spec(args.spec), jobs=args.jobs), args)


def cmd_tradeoff(args) -> None:
    with open(args.results, encoding="utf-8") as fh:
        results = json.load(fh)
    Path(args.out).write_text(emit_tradeoff(results), encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskcal", description="Risk-calibrated training and error-taxonomy evaluation."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic fixture CSV and its taxonomy")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="default-overlap")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--taxonomy-out", help="default: <out stem>.taxonomy.csv")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model and report test metrics")
    p.add_argument("--data", required=True)
    tax = p.add_mutually_exclusive_group(required=True)
    tax.add_argument("--taxonomy")
    tax.add_argument("--preset")
    p.add_argument("--loss", required=True, help="loss config JSON file")
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="model JSON output")
    p.add_argument("--report", help="test-split taxonomy report JSON output")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--schedule", choices=["constant", "cosine"], default="cosine")
    p.add_argument("--arch", choices=["linear", "mlp1"], default="linear")
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--fractions", type=float, nargs=3, default=[0.7, 0.15, 0.15])
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("compare", cmd_compare, "train every loss x seed in a spec"),
        ("ablate", cmd_ablate, "baselines plus the seven-point RCL grid"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--spec", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--table", help="per-run CSV table")
        p.add_argument("--jobs", type=int, default=1)
        p.set_defaults(func=func)

    p = sub.add_parser("tradeoff", help="safety/accuracy points from a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tradeoff)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        args.func(args)
    except Exception as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"riskcal {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
