"""Command-line entry point.

Subcommands: validate, stats, prompt, export, pipeline, score, sweep,
topn, agree. Exit codes are stable for scripting: 0 success, 1 usage,
2 data error, 3 backend error. Payload outputs are byte-deterministic;
diagnostics go to standard error only.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import corpus, metrics, pipeline, prompts, retrieval, scoring, seqlab
from .errors import BackendError, DataError

log = logging.getLogger("riveg")

BACKEND_ENV_VAR = "RIVEG_BACKEND_URL"
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _emit(data: bytes, out: str | None) -> None:
    if out:
        Path(out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()


def _jsonl_bytes(objs: Sequence[dict[str, Any]]) -> bytes:
    return "".join(json.dumps(o, ensure_ascii=False) + "\n" for o in objs).encode("utf-8")


def _json_bytes(obj: Any) -> bytes:
    return (json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def _expand_config(argv: list[str]) -> list[str]:
    """Splice config-file entries in as flags; explicit flags still win."""
    path = None
    rest: list[str] = []
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config requires a path")
            path = argv[i + 1]
            i += 2
            continue
        if arg.startswith("--config="):
            path = arg.split("=", 1)[1]
            i += 1
            continue
        rest.append(arg)
        i += 1
    if path is None:
        return argv
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise DataError(f"{path}: config must be a JSON object of flag -> value")
    tokens: list[str] = []
    for key in sorted(config):
        flag = "--" + key.replace("_", "-")
        value = config[key]
        if isinstance(value, bool):
            if value:
                tokens.append(flag)
        elif isinstance(value, list):
            tokens.extend([flag, ",".join(str(v) for v in value)])
        else:
            tokens.extend([flag, str(value)])
    if not rest:
        return tokens
    # Keep the subcommand first so argparse can route the spliced flags.
    return rest[:1] + tokens + rest[1:]


def build_parser() -> _Parser:
    parser = _Parser(prog="riveg", description=__doc__)
    parser.add_argument("--config", help="JSON file mirroring command-line flags")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("validate", help="check a gold JSONL file", description="Check a gold file against the corpus schema and sample invariants.")
    p.add_argument("--gold", required=True, help="gold JSONL file")
    p.add_argument("--lenient", action="store_true", help="warn on unknown fields instead of rejecting")

    p = sub.add_parser("stats", help="split statistics", description="Count samples, entities, groundable entities, masks and histograms.")
    p.add_argument("--gold", required=True)
    p.add_argument("--format", choices=("json", "markdown"), default="json")
    p.add_argument("--out")
    p.add_argument("--figure", help="also render the distribution figure to this file")

    p = sub.add_parser("prompt", help="build LLM prompts", description="Render knowledge or expansion prompts as JSONL.")
    p.add_argument("--kind", choices=("knowledge", "expansion"), required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--features", help="query fusion features JSONL (knowledge)")
    p.add_argument("--index-features", help="annotated-pool fusion features JSONL (knowledge)")
    p.add_argument("--annotated", help="annotated examples JSONL (knowledge)")
    p.add_argument("--head", help="prompt head text file (knowledge)")
    p.add_argument("--examples", help="fixed in-context examples JSONL (expansion)")
    p.add_argument("--topn", type=int, default=retrieval.DEFAULT_TOPN)
    p.add_argument("--out")

    p = sub.add_parser("export", help="emit VE/VG fine-tuning datasets", description="Export entailment pairs or expression-box pairs from a gold split.")
    p.add_argument("--kind", choices=("ve", "vg"), required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--expansions", help="expansions JSONL {id,surface,expansion}")
    p.add_argument("--out")

    p = sub.add_parser("pipeline", help="run the grounding cascade", description="Drive VE -> VG -> box-prompted segmentation over a backend.")
    p.add_argument("--gold", required=True)
    p.add_argument("--backend", help=f"backend base URL or 'mock' (default: ${BACKEND_ENV_VAR} or mock)")
    p.add_argument("--mock-lookup", help="mock lookup JSONL {id,surface,label,box?}")
    p.add_argument("--expansions")
    p.add_argument("--entity-source", choices=("gold", "predicted"), default="gold")
    p.add_argument("--emissions", help="emission JSONL for --entity-source predicted")
    p.add_argument("--crf-params", help="CRF parameter JSON for --entity-source predicted")
    p.add_argument("--max-inflight", type=int, default=1)
    p.add_argument("--timeout", type=int, default=10_000, help="per-request timeout in ms")
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--fail-fast", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("score", help="score predictions", description="Score predictions against gold on one task or all five.")
    p.add_argument("--task", choices=scoring.TASKS + ("all",), required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--iou-rule", choices=("gte", "gt"), default="gte")
    p.add_argument("--format", choices=("json", "markdown"), default="json")
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="score across IoU thresholds", description="Score one task across a strictly increasing threshold list.")
    p.add_argument("--task", choices=scoring.TASKS, required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--thresholds", required=True, help="comma-separated, strictly increasing")
    p.add_argument("--iou-rule", choices=("gte", "gt"), default="gte")
    p.add_argument("--format", choices=("json", "markdown"), default="json")
    p.add_argument("--out")
    p.add_argument("--figure", help="also render the sweep curve to this file")

    p = sub.add_parser("topn", help="TopN-Prec@IoU for candidate boxes", description="Fraction of groundable entities hit within the top-N candidates.")
    p.add_argument("--gold", required=True)
    p.add_argument("--candidates", required=True, help="candidates JSONL {id,surface,candidates}")
    p.add_argument("--topn", type=int, required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--format", choices=("json", "markdown"), default="json")
    p.add_argument("--out")

    p = sub.add_parser("agree", help="inter-annotator agreement", description="Fleiss kappa and mean Dice from dual-annotation pairs.")
    p.add_argument("--pairs", required=True, help="dual-annotation JSONL")
    p.add_argument("--format", choices=("json", "markdown"), default="json")
    p.add_argument("--out")

    return parser


def _cmd_validate(args: argparse.Namespace) -> int:
    n_samples = 0
    n_violations = 0
    lines: list[str] = []
    ids: dict[str, int] = {}
    for line_no, obj in corpus.iter_jsonl(args.gold):
        where = f"{args.gold}:{line_no}"
        sample = corpus.parse_sample(obj, where=where, strict=not args.lenient)
        n_samples += 1
        if sample.id in ids:
            lines.append(f"{where}: id: duplicate-id: {sample.id!r} first seen on line {ids[sample.id]}")
            n_violations += 1
        else:
            ids[sample.id] = line_no
        for violation in corpus.validate_sample(sample):
            lines.append(f"{where}: {sample.id}: {violation}")
            n_violations += 1
    lines.append(f"samples: {n_samples}, violations: {n_violations}")
    _emit(("\n".join(lines) + "\n").encode("utf-8"), None)
    return EXIT_OK if n_violations == 0 else EXIT_DATA


def _stats_markdown(stats: corpus.DatasetStats) -> bytes:
    lines = [
        f"samples/entities/groundable/masks: "
        f"{stats.n_samples}/{stats.n_entities}/{stats.n_groundable}/{stats.n_masks}",
        "",
        "| Type | Groundable | Ungroundable |",
        "| --- | --- | --- |",
    ]
    for name in sorted(stats.per_type):
        counts = stats.per_type[name]
        lines.append(f"| {name} | {counts['groundable']} | {counts['ungroundable']} |")
    lines += ["", "| Masks in image | Images |", "| --- | --- |"]
    for k, v in sorted(stats.masks_per_image.items()):
        lines.append(f"| {k} | {v} |")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _cmd_stats(args: argparse.Namespace) -> int:
    split = corpus.load_dataset(args.gold, "train", validate=False)
    stats = corpus.dataset_stats(split)
    if args.format == "json":
        _emit(_json_bytes(stats.to_obj()), args.out)
    else:
        _emit(_stats_markdown(stats), args.out)
    if args.figure:
        from . import plots

        plots.save_stats_figure(stats, args.figure)
    return EXIT_OK


def _sentence(sample: corpus.Sample) -> str:
    return " ".join(sample.tokens)


def _cmd_prompt(args: argparse.Namespace) -> int:
    split = corpus.load_dataset(args.gold, "train", validate=False)
    records: list[dict[str, Any]] = []
    if args.kind == "knowledge":
        for flag in ("features", "index_features", "annotated"):
            if getattr(args, flag) is None:
                raise UsageError(f"prompt --kind knowledge requires --{flag.replace('_', '-')}")
        query_feats = {v.id: v for v in retrieval.load_features(args.features)}
        index = retrieval.build_index(retrieval.load_features(args.index_features))
        annotated = prompts.load_annotated_examples(args.annotated)
        missing = [i for i in index.ids if i not in annotated]
        if missing:
            raise DataError(f"index ids missing from the annotated file: {missing[:5]}")
        head = (
            Path(args.head).read_text(encoding="utf-8")
            if args.head
            else prompts.default_knowledge_head()
        )
        for sample in split.samples:
            if sample.id not in query_feats:
                raise DataError(f"no fusion features for sample {sample.id!r}")
            ranked = retrieval.topn_similar(index, query_feats[sample.id], args.topn)
            examples = [annotated[i] for i, _ in ranked]
            prompt = prompts.build_knowledge_prompt(
                head, examples, _sentence(sample), sample.caption or ""
            )
            records.append({"id": sample.id, "prompt": prompt})
    else:
        examples = (
            prompts.load_expansion_examples(args.examples)
            if args.examples
            else prompts.default_expansion_examples()
        )
        for sample in split.samples:
            sentence = _sentence(sample)
            for entity in sample.entities:
                prompt = prompts.build_expansion_prompt(
                    sample.description or "", sentence, entity.surface, examples
                )
                records.append({"id": sample.id, "surface": entity.surface, "prompt": prompt})
    _emit(_jsonl_bytes(records), args.out)
    return EXIT_OK


def _cmd_export(args: argparse.Namespace) -> int:
    split = corpus.load_dataset(args.gold, "train")
    expansions = pipeline.load_expansions(args.expansions) if args.expansions else {}
    records: list[dict[str, Any]] = []
    for sample in split.samples:
        per_sample = expansions.get(sample.id, {})
        for entity in sample.entities:
            expr = prompts.compose_referring_expression(
                entity.surface, entity.etype, per_sample.get(entity.surface, "")
            )
            if args.kind == "ve":
                records.append(
                    {
                        "image": sample.image.path,
                        "expression": expr.rendered,
                        "label": "e" if entity.groundable else "c",
                    }
                )
            elif entity.groundable:
                largest = max(entity.boxes, key=lambda b: b.area)
                records.append(
                    {
                        "image": sample.image.path,
                        "expression": expr.rendered,
                        "box": largest.as_list(),
                    }
                )
    _emit(_jsonl_bytes(records), args.out)
    return EXIT_OK


def _predicted_spans(
    split: corpus.DatasetSplit, emissions_path: str, params_path: str
) -> dict[str, list[tuple[str, int, int, corpus.EntityType]]]:
    emissions = seqlab.load_emissions(emissions_path)
    params = seqlab.load_crf_params(params_path)
    spans: dict[str, list[tuple[str, int, int, corpus.EntityType]]] = {}
    for sample in split.samples:
        if sample.id not in emissions:
            raise DataError(f"no emissions for sample {sample.id!r}")
        matrix = emissions[sample.id]
        if matrix.shape[0] != len(sample.tokens):
            raise DataError(
                f"sample {sample.id!r}: emissions have {matrix.shape[0]} rows "
                f"but the sample has {len(sample.tokens)} tokens"
            )
        tags, _ = seqlab.viterbi_decode(matrix, params)
        repaired = seqlab.validate_bio(tags, mode="lenient")
        decoded = seqlab.spans_from_bio(repaired)
        spans[sample.id] = [
            (" ".join(sample.tokens[s.start : s.end]), s.start, s.end, s.etype) for s in decoded
        ]
    return spans


def _cmd_pipeline(args: argparse.Namespace) -> int:
    split = corpus.load_dataset(args.gold)
    base_url = args.backend or os.environ.get(BACKEND_ENV_VAR) or "mock"
    config = pipeline.BackendConfig(
        base_url=base_url,
        timeout_ms=args.timeout,
        max_inflight=args.max_inflight,
        retries=args.retries,
        mock_lookup_path=args.mock_lookup,
        fail_fast=args.fail_fast,
    )
    backend = pipeline.make_backend(config)
    expansions = pipeline.load_expansions(args.expansions) if args.expansions else {}
    if args.entity_source == "predicted":
        if not args.emissions or not args.crf_params:
            raise UsageError("--entity-source predicted requires --emissions and --crf-params")
        source: Any = _predicted_spans(split, args.emissions, args.crf_params)
    else:
        source = "gold"
    result = pipeline.run_pipeline(
        split,
        backend,
        expansions=expansions,
        entity_source=source,
        max_inflight=config.max_inflight,
        fail_fast=config.fail_fast,
    )
    _emit(scoring.predictions_to_bytes(result.records), args.out)
    if result.failures:
        for failure in result.failures:
            log.error("sample %s failed: %s", failure.sample_id, failure.message)
        return EXIT_BACKEND
    return EXIT_OK


def _cmd_score(args: argparse.Namespace) -> int:
    split = corpus.load_dataset(args.gold)
    preds = scoring.read_predictions(args.pred)
    tasks = scoring.TASKS if args.task == "all" else (args.task,)
    reports = [
        scoring.score_task(
            split, preds, scoring.MatchPolicy(task=t, iou_threshold=args.iou, iou_rule=args.iou_rule)
        )
        for t in tasks
    ]
    _emit(scoring.emit_report(reports, args.format), args.out)
    return EXIT_OK


def _parse_thresholds(raw: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"cannot parse thresholds {raw!r}") from None


def _cmd_sweep(args: argparse.Namespace) -> int:
    split = corpus.load_dataset(args.gold)
    preds = scoring.read_predictions(args.pred)
    sweep = scoring.iou_sweep(split, preds, args.task, _parse_thresholds(args.thresholds), args.iou_rule)
    _emit(scoring.emit_sweep(sweep, args.format), args.out)
    if args.figure:
        from . import plots

        plots.save_sweep_figure(sweep, args.figure)
    return EXIT_OK


def _cmd_topn(args: argparse.Namespace) -> int:
    split = corpus.load_dataset(args.gold)
    candidates = scoring.load_candidates(args.candidates)
    value = scoring.topn_prec_at(split, candidates, args.topn, args.iou)
    if args.format == "json":
        _emit(_json_bytes({"topn": args.topn, "iou": args.iou, "precision": value}), args.out)
    else:
        _emit(f"Top{args.topn}-Prec@{args.iou:g}: {value:.4f}\n".encode("utf-8"), args.out)
    return EXIT_OK


def _cmd_agree(args: argparse.Namespace) -> int:
    annotations = metrics.load_dual_annotations(args.pairs)
    summary = metrics.agreement_summary(annotations)
    if args.format == "json":
        _emit(_json_bytes(summary), args.out)
    else:
        dice = "n/a" if summary["mean_dice"] is None else f"{summary['mean_dice']:.4f}"
        lines = [
            f"items: {summary['n_items']}",
            f"fleiss_kappa: {summary['fleiss_kappa']:.4f}",
            f"mean_dice: {dice}",
        ]
        _emit(("\n".join(lines) + "\n").encode("utf-8"), args.out)
    return EXIT_OK


_COMMANDS = {
    "validate": _cmd_validate,
    "stats": _cmd_stats,
    "prompt": _cmd_prompt,
    "export": _cmd_export,
    "pipeline": _cmd_pipeline,
    "score": _cmd_score,
    "sweep": _cmd_sweep,
    "topn": _cmd_topn,
    "agree": _cmd_agree,
}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s"
    )
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _expand_config(argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DataError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
