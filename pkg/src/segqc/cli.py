"""Command-line interface: gen-phantom, run-qc, analyze, serve."""

from __future__ import annotations

import argparse
import dataclasses
import json
import socket
import sys
from datetime import datetime, timezone
from multiprocessing import Pool
from pathlib import Path

from .cohort import (
    HEURISTICS,
    CohortTable,
    FilterSpec,
    apply_filters,
    lr_diff_stats,
    read_reference_csv,
    compare_reference,
    summary_by_structure,
    upset_counts,
    within_patient_sd,
    UPSET_COMBINATIONS,
    DEFAULT_FILTER_CHAIN_NAMES,
)
from .errors import (
    DegenerateDesignError,
    DomainError,
    PhantomSpecError,
    SchemaError,
    SegQCError,
)
from .mixed_model import fit_random_intercept
from .nrrd_io import read_label_volume, read_sidecar
from .phantom import PhantomSpec, generate_cohort, spec_from_json
from .qc import HeuristicConfig, evaluate_series
from .records_csv import QcCsvWriter, format_real, record_to_row


def _err(message: str) -> None:
    print(f"segqc: {message}", file=sys.stderr)


def _parse_filters_arg(text: str) -> FilterSpec:
    """Parse 'completeness=pass,connected=fail' into a FilterSpec."""
    require_pass: set[str] = set()
    require_fail: set[str] = set()
    for part in text.split(","):
        if not part:
            continue
        name, sep, value = part.partition("=")
        if not sep or name not in HEURISTICS or value not in ("pass", "fail"):
            raise argparse.ArgumentTypeError(
                f"bad filter {part!r}; expected <heuristic>=pass|fail with "
                f"heuristic one of {', '.join(HEURISTICS)}"
            )
        (require_pass if value == "pass" else require_fail).add(name)
    return FilterSpec(require_pass=frozenset(require_pass), require_fail=frozenset(require_fail))


def _parse_chain_arg(text: str) -> tuple[str, ...]:
    names = tuple(n for n in text.split(",") if n)
    for name in names:
        if name not in HEURISTICS:
            raise argparse.ArgumentTypeError(
                f"bad filter-chain entry {name!r}; expected one of {', '.join(HEURISTICS)}"
            )
    if len(set(names)) != len(names):
        raise argparse.ArgumentTypeError("filter-chain entries must be unique")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segqc")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run-qc", help="evaluate all mask/sidecar pairs in a directory")
    p_run.add_argument("--input", required=True, help="directory of .nrrd/.json pairs")
    p_run.add_argument("--output", required=True, help="QC record CSV path")
    p_run.add_argument("--min-volume-ml", type=float, default=5.0)
    p_run.add_argument("--max-components", type=int, default=1)
    p_run.add_argument("--connectivity", type=int, choices=(6, 18, 26), default=26)
    p_run.add_argument("--workers", type=int, default=1)

    p_an = sub.add_parser("analyze", help="run a cohort analysis over a QC CSV")
    p_an.add_argument("--input", required=True, help="QC record CSV")
    p_an.add_argument("--output", required=True, help="output directory for analysis CSVs")
    p_an.add_argument(
        "--study",
        required=True,
        choices=("summary", "upset", "lr-diff", "within-sd", "ref-compare"),
    )
    p_an.add_argument("--structure")
    p_an.add_argument("--laterality", choices=("left", "right", "none"))
    p_an.add_argument("--filters", type=_parse_filters_arg, default=FilterSpec())
    p_an.add_argument(
        "--filter-chain",
        type=_parse_chain_arg,
        default=DEFAULT_FILTER_CHAIN_NAMES,
        help="comma list of heuristics applied successively (lr-diff)",
    )
    p_an.add_argument("--refs", help="reference ranges CSV (ref-compare)")
    p_an.add_argument("--plot", action="store_true", help="also write static plots")

    p_gen = sub.add_parser("gen-phantom", help="generate a synthetic cohort with a defect log")
    p_gen.add_argument("--spec", help="phantom spec JSON; defaults to the built-in demo cohort")
    p_gen.add_argument("--output", required=True, help="output directory")
    p_gen.add_argument("--seed", type=int, help="override the spec's random seed")

    p_srv = sub.add_parser("serve", help="serve the QC API over a record CSV")
    p_srv.add_argument("--input", required=True, help="QC record CSV")
    p_srv.add_argument("--port", type=int, default=8000)
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--cors-origin", help="origin allowed for cross-origin requests")

    return parser


# ---------------------------------------------------------------------------
# run-qc
# ---------------------------------------------------------------------------

def _evaluate_job(job) -> tuple[str, str | None, list[list[str]]]:
    mask_path, sidecar_path, config = job
    try:
        volume = read_label_volume(mask_path, sidecar_path)
        rows = [record_to_row(r) for r in evaluate_series(volume, config)]
        return mask_path, None, rows
    except SegQCError as exc:
        return mask_path, str(exc), []


def cmd_run_qc(args) -> int:
    input_dir = Path(args.input)
    if not input_dir.is_dir():
        _err(f"input directory {input_dir} does not exist")
        return 1
    try:
        config = HeuristicConfig(
            min_volume_ml=args.min_volume_ml,
            max_components=args.max_components,
            connectivity=args.connectivity,
        )
    except ValueError as exc:
        _err(str(exc))
        return 1
    if args.workers < 1:
        _err("--workers must be >= 1")
        return 1

    started = datetime.now(timezone.utc)
    failures = 0
    jobs = []
    for mask_path in sorted(input_dir.glob("*.nrrd")):
        sidecar_path = mask_path.with_suffix(".json")
        if not sidecar_path.exists():
            _err(f"{mask_path}: missing sidecar {sidecar_path.name}")
            failures += 1
            continue
        try:
            meta = read_sidecar(sidecar_path)
        except SegQCError as exc:
            _err(f"{mask_path}: {exc}")
            failures += 1
            continue
        jobs.append((meta["series_id"], str(mask_path), str(sidecar_path)))
    jobs.sort()
    if not jobs and failures == 0:
        _err(f"input directory {input_dir} contains no mask/sidecar pairs")

    work = [(mask, sidecar, config) for _, mask, sidecar in jobs]
    try:
        out = open(args.output, "w", encoding="utf-8", newline="")
    except OSError as exc:
        _err(f"cannot write {args.output}: {exc}")
        return 1
    with out:
        writer = QcCsvWriter(out)
        if args.workers == 1 or len(work) <= 1:
            results = map(_evaluate_job, work)
            for mask_path, error, rows in results:
                if error is not None:
                    _err(f"{mask_path}: {error}")
                    failures += 1
                for row in rows:
                    writer.write_row(row)
        else:
            with Pool(processes=args.workers) as pool:
                for mask_path, error, rows in pool.imap(_evaluate_job, work, chunksize=1):
                    if error is not None:
                        _err(f"{mask_path}: {error}")
                        failures += 1
                    for row in rows:
                        writer.write_row(row)

    manifest = {
        "inputDir": str(input_dir),
        "outputPath": str(args.output),
        "config": {
            "minVolumeMl": config.min_volume_ml,
            "maxComponents": config.max_components,
            "connectivity": config.connectivity,
            "requireEmptyTerminalSlices": config.require_empty_terminal_slices,
        },
        "workerCount": args.workers,
        "startedAt": started.isoformat(),
        "finishedAt": datetime.now(timezone.utc).isoformat(),
    }
    Path(str(args.output) + ".manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", "utf-8"
    )
    return 2 if failures else 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _chain_specs(names) -> list[FilterSpec]:
    return [FilterSpec(require_pass=frozenset({name})) for name in names]


def cmd_analyze(args) -> int:
    try:
        table = CohortTable.from_csv(args.input)
    except (OSError, SchemaError, ValueError) as exc:
        _err(f"cannot load {args.input}: {exc}")
        return 1
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        if args.study == "summary":
            rows = summary_by_structure(table)
            _write_csv(
                out_dir / "summary.csv",
                ["structure", "heuristic", "passCount", "totalCount", "percentage"],
                [
                    [r.structure, r.heuristic, str(r.pass_count), str(r.total_count),
                     format_real(r.percentage)]
                    for r in rows
                ],
            )
            if args.plot:
                _plot_summary(rows, out_dir / "summary.png")
        elif args.study == "upset":
            scoped = apply_filters(table, args.filters)
            counts = upset_counts(scoped)
            _write_csv(
                out_dir / "upset.csv",
                ["combination", "count"],
                [[combo, str(counts[combo])] for combo in UPSET_COMBINATIONS],
            )
            if args.plot:
                _plot_upset(counts, out_dir / "upset.png")
        elif args.study == "lr-diff":
            if not args.structure:
                _err("--study lr-diff requires --structure")
                return 1
            chain = _chain_specs(args.filter_chain)
            stages = lr_diff_stats(table, args.structure, chain)
            stage_names = ["none"] + [
                "+".join(args.filter_chain[:k]) for k in range(1, len(chain) + 1)
            ]
            _write_csv(
                out_dir / "lr_diff_stats.csv",
                ["stage", "filtersApplied", "n", "mean", "sd"],
                [
                    [str(s.stage), stage_names[s.stage], str(s.n), format_real(s.mean),
                     format_real(s.sd)]
                    for s in stages
                ],
            )
            mm_rows = []
            pairs = [(k, k + 1) for k in range(len(stages) - 1)]
            if len(stages) > 2:
                pairs.append((0, len(stages) - 1))
            for i, j in pairs:
                y = [s.value for s in stages[i].samples] + [s.value for s in stages[j].samples]
                group = [s.patient_id for s in stages[i].samples] + [
                    s.patient_id for s in stages[j].samples
                ]
                x = [0.0] * stages[i].n + [1.0] * stages[j].n
                try:
                    fit = fit_random_intercept(y, group, x)
                except (DomainError, DegenerateDesignError) as exc:
                    _err(f"mixed model {i}v{j} skipped: {exc}")
                    continue
                mm_rows.append(
                    [f"{i}v{j}", format_real(fit.beta[1]), format_real(fit.wald_z),
                     format_real(fit.p_value), "true" if fit.p_value < 0.05 else "false"]
                )
            _write_csv(
                out_dir / "lr_diff_mixed_models.csv",
                ["stagePair", "beta1", "waldZ", "pValue", "isSignificant"],
                mm_rows,
            )
            if args.plot:
                _plot_lr_diff(stages, stage_names, out_dir / "lr_diff.png")
        elif args.study == "within-sd":
            if not args.structure:
                _err("--study within-sd requires --structure")
                return 1
            before = within_patient_sd(table, args.structure, args.laterality, None)
            after = within_patient_sd(table, args.structure, args.laterality, args.filters)
            _write_csv(
                out_dir / "within_sd.csv",
                ["phase", "sdMl"],
                [["before", format_real(v)] for v in before]
                + [["after", format_real(v)] for v in after],
            )
            if args.plot:
                _plot_within_sd(before, after, out_dir / "within_sd.png")
        elif args.study == "ref-compare":
            if not args.refs:
                _err("--study ref-compare requires --refs")
                return 1
            refs = read_reference_csv(args.refs)
            rows, ordered = compare_reference(table, refs, args.filters)
            _write_csv(
                out_dir / "ref_compare.csv",
                ["structure", "cohortMean", "cohortSD", "refMean", "refSD",
                 "orderMatchesReference"],
                [
                    [r.structure, format_real(r.cohort_mean), format_real(r.cohort_sd),
                     format_real(r.ref_mean), format_real(r.ref_sd),
                     "true" if ordered else "false"]
                    for r in rows
                ],
            )
            if args.plot:
                _plot_ref_compare(rows, out_dir / "ref_compare.png")
    except (SchemaError, DomainError) as exc:
        _err(str(exc))
        return 1
    return 0


def _matplotlib_axes(path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(9, 5))
    return plt, fig, ax


def _plot_summary(rows, path: Path) -> None:
    plt, fig, ax = _matplotlib_axes(path)
    structures = sorted({r.structure for r in rows})
    width = 0.2
    for i, heuristic in enumerate(HEURISTICS):
        pct = [
            next((r.percentage for r in rows if r.structure == s and r.heuristic == heuristic), None)
            for s in structures
        ]
        xs = [j + (i - 1.5) * width for j in range(len(structures))]
        ax.bar(xs, [p if p is not None else 0 for p in pct], width=width, label=heuristic)
    ax.set_xticks(range(len(structures)))
    ax.set_xticklabels(structures, rotation=45, ha="right")
    ax.set_ylabel("pass %")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _plot_upset(counts: dict[str, int], path: Path) -> None:
    plt, fig, ax = _matplotlib_axes(path)
    combos = [c for c in UPSET_COMBINATIONS if counts[c] > 0] or list(UPSET_COMBINATIONS)
    combos.sort(key=lambda c: -counts[c])
    ax.bar(range(len(combos)), [counts[c] for c in combos])
    ax.set_xticks(range(len(combos)))
    ax.set_xticklabels(combos, rotation=90)
    ax.set_ylabel("segments")
    ax.set_xlabel("completeness/connected/laterality/minVolume")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _plot_lr_diff(stages, stage_names, path: Path) -> None:
    plt, fig, ax = _matplotlib_axes(path)
    xs = [s.stage for s in stages]
    means = [s.mean if s.mean is not None else float("nan") for s in stages]
    sds = [s.sd if s.sd is not None else 0.0 for s in stages]
    ax.errorbar(xs, means, yerr=sds, marker="o", capsize=4)
    ax.axhline(0.0, color="gray", linewidth=0.8)
    ax.set_xticks(xs)
    ax.set_xticklabels(stage_names, rotation=30, ha="right")
    ax.set_ylabel("(left-right)/(left+right)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _plot_within_sd(before, after, path: Path) -> None:
    plt, fig, ax = _matplotlib_axes(path)
    data = [before or [0.0], after or [0.0]]
    ax.violinplot(data, showmedians=True)
    ax.set_xticks([1, 2])
    ax.set_xticklabels(["before", "after"])
    ax.set_ylabel("within-patient SD of volume (mL)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _plot_ref_compare(rows, path: Path) -> None:
    plt, fig, ax = _matplotlib_axes(path)
    xs = range(len(rows))
    ax.errorbar(
        xs, [r.cohort_mean for r in rows],
        yerr=[r.cohort_sd or 0.0 for r in rows], marker="o", capsize=4, label="cohort",
    )
    ax.errorbar(
        xs, [r.ref_mean for r in rows],
        yerr=[r.ref_sd for r in rows], marker="s", capsize=4, label="reference",
    )
    ax.set_xticks(list(xs))
    ax.set_xticklabels([r.structure for r in rows], rotation=45, ha="right")
    ax.set_ylabel("volume (mL)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# gen-phantom / serve
# ---------------------------------------------------------------------------

def cmd_gen_phantom(args) -> int:
    if args.spec:
        try:
            doc = json.loads(Path(args.spec).read_text("utf-8"))
        except OSError as exc:
            _err(f"cannot read {args.spec}: {exc}")
            return 1
        except json.JSONDecodeError as exc:
            _err(f"{args.spec} is not valid JSON: {exc}")
            return 1
        try:
            spec = spec_from_json(doc)
        except PhantomSpecError as exc:
            _err(str(exc))
            return 1
    else:
        spec = PhantomSpec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, random_seed=args.seed)
    try:
        entries = generate_cohort(spec, args.output)
    except (PhantomSpecError, OSError) as exc:
        _err(str(exc))
        return 1
    n_series = spec.patients * spec.studies_per_patient * spec.series_per_study
    print(f"wrote {n_series} series with {len(entries)} injected defects to {args.output}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    path = Path(args.input)
    if not path.is_file():
        _err(f"QC CSV {path} does not exist")
        return 1
    try:
        table = CohortTable.from_csv(path)
    except (SchemaError, ValueError) as exc:
        _err(f"cannot load {path}: {exc}")
        return 1
    app = create_app(table, cors_origin=args.cors_origin)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((args.host, args.port))
    except OSError as exc:
        _err(f"cannot bind {args.host}:{args.port}: {exc}")
        return 1
    host, port = sock.getsockname()[:2]
    print(f"serving {len(table)} records on http://{host}:{port}", flush=True)
    server = uvicorn.Server(uvicorn.Config(app, log_level="warning"))
    server.run(sockets=[sock])
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run-qc":
        return cmd_run_qc(args)
    if args.command == "analyze":
        return cmd_analyze(args)
    if args.command == "gen-phantom":
        return cmd_gen_phantom(args)
    if args.command == "serve":
        return cmd_serve(args)
    return 1


if __name__ == "__main__":
    sys.exit(main())
