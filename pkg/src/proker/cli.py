"""Command-line front end: eval, sweep, synth, compress, inspect.

Exit codes: 0 on success, 1 when an --assert-* check fails, 2 for any
input/configuration problem, 3 for numerical failures inside a solve.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .adapters import (
    AdapterConfig,
    ProKeRModel,
    load_model,
    proker_fit,
    proker_predict,
    predict,
    read_container,
    save_model,
    zero_shot,
)
from .errors import CorruptLabel, DataError, InvalidConfig, SolverError
from .featurestore import (
    FeatureSet,
    FewShotTask,
    TextClassifier,
    ensure_unit_norm,
    load_featureset,
    load_text_classifier,
    one_hot,
    save_featureset,
    save_text_classifier,
)
from .kernels import KernelSpec, kernel_spec_from_json, median_heuristic_beta
from .spectral import (
    build_fourier_map,
    compress,
    load_any_model,
    prototype_predict,
    save_prototype_model,
)

MAGIC_FSF = b"FSF1"
MAGIC_PKM = b"PKM1"


def _fail(exc: BaseException, code: int) -> int:
    print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
    return code


def _load_kernel(arg: str | None, beta: float | None) -> KernelSpec:
    if arg is None:
        spec = KernelSpec()
    elif arg.lstrip().startswith("{"):
        spec = kernel_spec_from_json(arg)
    else:
        spec = kernel_spec_from_json(Path(arg).read_text())
    if beta is not None:
        spec = replace(spec, beta=beta)
    return spec


def _infer_shots(support: FeatureSet) -> int:
    if support.labels is None:
        raise CorruptLabel("support file has no labels")
    counts = np.bincount(support.labels, minlength=support.num_classes)
    if counts.size == 0 or not np.all(counts == counts[0]) or counts[0] == 0:
        raise InvalidConfig(
            "support is not class-balanced; every class needs the same shot count"
        )
    return int(counts[0])


def _scaled_text(path: str, scale: float) -> TextClassifier:
    text = load_text_classifier(path)
    if scale == 1.0:
        return text
    return TextClassifier(text.weights * scale, text.class_names, text.metadata)


def _report_fmt(out: Path, fmt: str | None) -> str:
    if fmt is not None:
        return fmt
    return "json" if out.suffix == ".json" else "csv"


def _require(value, flag: str):
    if value is None:
        raise InvalidConfig(f"missing {flag} (see --help for usage)")
    return value


def cmd_eval(args: argparse.Namespace) -> int:
    queries = ensure_unit_norm(load_featureset(_require(args.query, "--query")))
    if queries.labels is None:
        raise CorruptLabel("query file has no labels; accuracy is undefined")

    if args.model is not None:
        model = load_any_model(args.model)
        start = time.perf_counter()
        if isinstance(model, ProKeRModel):
            logits = proker_predict(model, queries)
            method, kernel, lam, beta = "proker", model.kernel.family, model.lam, model.kernel.beta
        else:
            logits = prototype_predict(model, queries)
            method, kernel, lam, beta = "prototype", "rbf", model.lam, model.fmap.beta
        wall_ms = (time.perf_counter() - start) * 1e3
        alpha = None
        shots = 0
    else:
        method = _require(args.method, "--method")
        text = _scaled_text(_require(args.text, "--text"), args.text_scale)
        kernel = _load_kernel(args.kernel_json, args.beta)
        cfg = AdapterConfig(
            method=method, kernel=kernel, lam=args.lam, alpha=args.alpha,
            jitter=args.jitter,
        )
        if method == "zeroshot":
            start = time.perf_counter()
            logits = zero_shot(text, queries)
            wall_ms = (time.perf_counter() - start) * 1e3
            lam = beta = alpha = None
            shots = 0
            kernel = "none"
        else:
            support = ensure_unit_norm(load_featureset(_require(args.support, "--support")))
            shots = args.shots if args.shots is not None else _infer_shots(support)
            task = FewShotTask(
                support=support, query=queries, text=text, shots=shots,
                seed=args.seed,
            )
            start = time.perf_counter()
            if method == "proker":
                model = proker_fit(cfg, support, one_hot(support), text)
                logits = proker_predict(model, queries)
            else:
                model = None
                logits = predict(cfg, task)
            wall_ms = (time.perf_counter() - start) * 1e3
            if args.save_model is not None:
                if method != "proker" or model is None:
                    raise InvalidConfig("--save-model is only available with --method proker")
                save_model(model, args.save_model)
            lam = cfg.lam if method in ("nw", "llr", "proker") else None
            alpha = cfg.alpha if method == "tip" else None
            if cfg.kernel.family == "rbf":
                beta = cfg.kernel.beta
                if beta is None:
                    beta = median_heuristic_beta(support.data)
            else:
                beta = None
            kernel = cfg.kernel.family

    acc = harness.accuracy(logits.values, queries.labels)
    row = harness.EvalRow(
        method=method, kernel=kernel, lam=lam, beta=beta, alpha=alpha,
        shots=shots, seed=args.seed, score=acc, wall_ms=wall_ms,
    )
    report = harness.EvalReport(rows=[row], kind="accuracy")
    out = Path(args.out)
    harness.emit_report(report, out, _report_fmt(out, args.format))
    print(f"{method}: accuracy {acc:.4f} on {queries.rows} queries ({wall_ms:.1f} ms) -> {out}")
    return 0


def _load_manifest(path: str) -> list[FewShotTask]:
    base = Path(path).parent
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"tasks manifest is not valid JSON: {exc}") from None
    entries = doc.get("tasks") if isinstance(doc, dict) else None
    if not isinstance(entries, list) or not entries:
        raise InvalidConfig('tasks manifest must be {"tasks": [...]} with at least one entry')
    tasks = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "support" not in entry or "query" not in entry or "text" not in entry:
            raise InvalidConfig(f"task entry {i} needs support, query and text paths")

        def _fs(key: str) -> FeatureSet | None:
            if key not in entry or entry[key] is None:
                return None
            return ensure_unit_norm(load_featureset(base / entry[key]))

        support = _fs("support")
        query = _fs("query")
        validation = _fs("validation")
        if support is None or query is None:
            raise InvalidConfig(f"task entry {i}: support and query paths must not be null")
        text = load_text_classifier(base / entry["text"])
        shots = entry.get("shots")
        if shots is None:
            shots = _infer_shots(support)
        tasks.append(FewShotTask(
            support=support, query=query, text=text, shots=int(shots),
            seed=int(entry.get("seed", 0)), validation=validation,
            name=str(entry.get("name", f"task{i}")),
        ))
    return tasks


def cmd_sweep(args: argparse.Namespace) -> int:
    try:
        grid_doc = json.loads(Path(args.grid).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"grid file is not valid JSON: {exc}") from None
    grid = harness.parse_grid(grid_doc)
    if args.protocol is not None:
        grid = replace(grid, protocol=args.protocol)
    tasks = _load_manifest(args.tasks)
    anchor = None
    if args.anchor is not None:
        matches = [t for t in tasks if t.name == args.anchor]
        if not matches:
            raise InvalidConfig(f"anchor {args.anchor!r} not found in the manifest")
        anchor = matches[0]
    outcome = harness.sweep(grid, tasks, anchor=anchor)
    out = Path(args.out)
    harness.emit_report(outcome.report, out, _report_fmt(out, args.format))
    selected_path = Path(args.selected) if args.selected else out.parent / "selected.json"
    selected_path.write_text(json.dumps(outcome.selected, indent=2) + "\n")
    for row in outcome.report.rows:
        print(f"{row.method} seed={row.seed} shots={row.shots}: accuracy {row.score:.4f}")
    print(f"report -> {out}; winners -> {selected_path}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    spec_kwargs: dict = {}
    lams: dict[str, float] = {}
    if args.spec is not None:
        try:
            doc = json.loads(Path(args.spec).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"synth spec is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise InvalidConfig("synth spec must be a JSON object")
        lams = {str(k): float(v) for k, v in doc.pop("lambda", {}).items()}
        known = {f.name for f in harness.SynthSpec.__dataclass_fields__.values()}
        extra = set(doc) - known
        if extra:
            raise InvalidConfig(f"unknown synth spec fields: {sorted(extra)}")
        spec_kwargs = doc
    spec = harness.SynthSpec(**spec_kwargs)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if not methods:
        raise InvalidConfig("--methods must name at least one method")
    if args.seeds < 1:
        raise InvalidConfig("--seeds must be >= 1")
    seeds = tuple(range(args.seeds))

    report = harness.run_synth(spec, methods=methods, seeds=seeds, lams=lams)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    harness.emit_report(report, out_dir / "report.csv", "csv")

    for seed in seeds:
        task = harness.synth_generate(spec, seed)
        stem = out_dir / f"synth_seed{seed}"
        save_featureset(replace_meta(task.support, "synth_support"), f"{stem}_support.fsf")
        save_featureset(FeatureSet(task.support_targets, metadata={"kind": "synth_targets"}), f"{stem}_support_targets.fsf")
        save_featureset(replace_meta(task.query, "synth_query"), f"{stem}_query.fsf")
        save_featureset(FeatureSet(task.query_targets, metadata={"kind": "synth_targets"}), f"{stem}_query_targets.fsf")
        save_text_classifier(task.base, f"{stem}_base.fsf")

    means: dict[str, list[float]] = {}
    for row in report.rows:
        means.setdefault(row.method, []).append(row.score)
    print(f"{'method':<10} {'mean mse':>12} {'seeds':>6}")
    for method in methods:
        scores = means.get(method, [])
        print(f"{method:<10} {np.mean(scores):>12.6f} {len(scores):>6}")
    print(f"report -> {out_dir / 'report.csv'}")

    if args.assert_ordering:
        counts = harness.ordering_counts(report)
        if not harness.ordering_holds(counts):
            print(f"ordering check FAILED: {counts}", file=sys.stderr)
            return 1
        print(f"ordering check passed: {counts}")
    return 0


def replace_meta(fs: FeatureSet, kind: str) -> FeatureSet:
    meta = dict(fs.metadata)
    meta["kind"] = kind
    return FeatureSet(fs.data, fs.labels, fs.num_classes, normalized=fs.normalized, metadata=meta)


def cmd_compress(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    count = args.rff if args.rff is not None else 2 * model.support.dim
    if count < 1:
        raise InvalidConfig("--rff must be >= 1")
    if model.kernel.beta is None:
        raise InvalidConfig("model kernel has no resolved bandwidth")
    fmap = build_fourier_map(
        model.support.dim, count, model.kernel.beta,
        orthogonal=args.orthogonal, seed=args.seed,
    )
    proto = compress(model, fmap)
    out = Path(args.out) if args.out else Path(args.model).with_suffix(".rff.pkm")
    save_prototype_model(proto, out)
    before = Path(args.model).stat().st_size
    after = out.stat().st_size
    print(f"cached model: {before} bytes ({model.support.rows} support rows)")
    print(f"prototype model: {after} bytes (R={count})")
    print(f"wrote {out}")
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    path = Path(args.path)
    head = b""
    try:
        with path.open("rb") as fh:
            head = fh.read(4)
    except OSError:
        pass  # let the loader raise its own IoError
    if head == MAGIC_PKM:
        header, blocks = read_container(path)
        print(f"PKM1 model: kind={header.get('kind')} lambda={header.get('lambda')}")
        for key in ("jitter", "kernel", "map"):
            if key in header:
                print(f"{key}: {json.dumps(header[key], sort_keys=True)}")
        for name, payload in blocks.items():
            print(f"block {name}: {len(payload)} bytes")
        return 0
    fs = load_featureset(path)
    print(
        f"FSF1 file: rows={fs.rows} dim={fs.dim} "
        f"has_labels={fs.labels is not None} normalized={fs.normalized}"
    )
    print(f"metadata: {json.dumps(fs.metadata, sort_keys=True)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proker",
        description="Few-shot adaptation of a frozen linear classifier with kernel estimators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="score one method on one task")
    p_eval.add_argument("--support")
    p_eval.add_argument("--query")
    p_eval.add_argument("--text")
    p_eval.add_argument("--method", choices=("zeroshot", "tip", "nw", "llr", "proker"))
    p_eval.add_argument("--model", help="PKM1 model file; replaces --support/--text/--method")
    p_eval.add_argument("--kernel-json", help="kernel spec as inline JSON or a path to a JSON file")
    p_eval.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p_eval.add_argument("--beta", type=float)
    p_eval.add_argument("--alpha", type=float, default=1.0)
    p_eval.add_argument("--jitter", type=float, default=1e-8)
    p_eval.add_argument("--shots", type=int)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--text-scale", type=float, default=1.0)
    p_eval.add_argument("--save-model", help="write the fitted model (proker only)")
    p_eval.add_argument("--out", default="report.csv")
    p_eval.add_argument("--format", choices=("csv", "json"))
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="grid search over tasks from a manifest")
    p_sweep.add_argument("--grid", required=True)
    p_sweep.add_argument("--tasks", required=True)
    p_sweep.add_argument("--protocol", choices=harness.PROTOCOLS)
    p_sweep.add_argument("--anchor", help="task name used for transfer selection")
    p_sweep.add_argument("--out", default="report.csv")
    p_sweep.add_argument("--selected", help="where to write the winning configs (default: selected.json next to --out)")
    p_sweep.add_argument("--format", choices=("csv", "json"))
    p_sweep.set_defaults(func=cmd_sweep)

    p_synth = sub.add_parser("synth", help="run the synthetic regression benchmark")
    p_synth.add_argument("--spec", help="JSON file of generator knobs")
    p_synth.add_argument("--methods", default="nw,llr,proker")
    p_synth.add_argument("--seeds", type=int, default=10)
    p_synth.add_argument("--out", default="synth_out")
    p_synth.add_argument("--assert-ordering", action="store_true",
                         help="exit 1 unless the held-out MSE ordering holds across seeds")
    p_synth.set_defaults(func=cmd_synth)

    p_comp = sub.add_parser("compress", help="collapse a cached model into prototypes")
    p_comp.add_argument("--model", required=True)
    p_comp.add_argument("--out")
    p_comp.add_argument("--rff", type=int, help="number of Fourier features (default 2 * dim)")
    p_comp.add_argument("--seed", type=int, default=0)
    p_comp.add_argument("--orthogonal", action=argparse.BooleanOptionalAction, default=True)
    p_comp.set_defaults(func=cmd_compress)

    p_ins = sub.add_parser("inspect", help="print the header of an FSF or PKM1 file")
    p_ins.add_argument("path")
    p_ins.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except DataError as exc:
        return _fail(exc, 2)
    except SolverError as exc:
        return _fail(exc, 3)
    except OSError as exc:
        return _fail(exc, 2)
    except ValueError as exc:
        return _fail(exc, 2)


if __name__ == "__main__":
    sys.exit(main())
