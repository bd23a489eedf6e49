"""Read-only HTTP API over a loaded cohort table.

The service adds transport only: every payload is numerically identical
to the corresponding library call. Payloads carry a top-level
schemaVersion "v1". Query parameters:

* ``structure``       -- structure name selection
* ``laterality``      -- left | right | none
* ``feature``         -- fixed vocabulary, currently only ``volumeMl``
* ``completeness``, ``connected``, ``lateralityCheck``, ``minVolume``
                      -- tri-state heuristic filters: pass | fail | any

(The laterality heuristic parameter is named ``lateralityCheck`` to keep
it distinct from the record-side ``laterality`` selection.)

Duplicate parameters with conflicting values and unknown parameters or
values are rejected with 400 naming the offending field.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from .cohort import (
    CohortTable,
    FilterSpec,
    apply_filters,
    summary_by_structure,
    upset_counts,
    within_patient_sd,
)
from .records_csv import QC_CSV_COLUMNS, record_to_row

SCHEMA_VERSION = "v1"
MAX_RAW_RECORDS = 10_000

_TRISTATE_PARAMS = {
    "completeness": "completeness",
    "connected": "connected",
    "lateralityCheck": "laterality",
    "minVolume": "minVolume",
}
_SELECTION_PARAMS = ("structure", "laterality", "feature")


class _ApiError(Exception):
    def __init__(self, status: int, field: str, message: str):
        super().__init__(message)
        self.status = status
        self.field = field
        self.message = message


def _collect_params(request: Request, allowed: set[str]) -> dict[str, str]:
    values: dict[str, str] = {}
    for key, value in request.query_params.multi_items():
        if key not in allowed:
            raise _ApiError(400, key, f"unknown query parameter {key!r}")
        if key in values and values[key] != value:
            raise _ApiError(
                400, key, f"conflicting values {values[key]!r} and {value!r} for {key!r}"
            )
        values[key] = value
    return values


def _filter_spec_from(values: dict[str, str]) -> FilterSpec:
    require_pass: set[str] = set()
    require_fail: set[str] = set()
    for param, heuristic in _TRISTATE_PARAMS.items():
        state = values.get(param, "any")
        if state == "pass":
            require_pass.add(heuristic)
        elif state == "fail":
            require_fail.add(heuristic)
        elif state != "any":
            raise _ApiError(400, param, f"{param} must be pass, fail, or any")
    laterality = values.get("laterality")
    if laterality is not None and laterality not in ("left", "right", "none"):
        raise _ApiError(400, "laterality", "laterality must be left, right, or none")
    feature = values.get("feature")
    if feature is not None and feature != "volumeMl":
        raise _ApiError(400, "feature", "feature must be volumeMl")
    return FilterSpec(
        structure=values.get("structure") or None,
        laterality=laterality,
        require_pass=frozenset(require_pass),
        require_fail=frozenset(require_fail),
    )


def create_app(table: CohortTable, cors_origin: str | None = None) -> FastAPI:
    app = FastAPI(title="segqc", docs_url=None, redoc_url=None)
    if cors_origin:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=[cors_origin],
            allow_methods=["GET", "HEAD"],
            allow_headers=["*"],
        )

    known_structures = set(table.structures())

    @app.exception_handler(_ApiError)
    async def on_api_error(request: Request, exc: _ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"schemaVersion": SCHEMA_VERSION, "error": exc.message, "field": exc.field},
        )

    @app.api_route("/healthz", methods=["GET", "HEAD"], response_class=PlainTextResponse)
    def healthz() -> str:
        return "ok"

    @app.api_route("/api/v1/structures", methods=["GET", "HEAD"])
    def structures():
        return {"schemaVersion": SCHEMA_VERSION, "structures": table.structures()}

    @app.api_route("/api/v1/summary", methods=["GET", "HEAD"])
    def summary():
        rows = [
            {
                "structure": row.structure,
                "heuristic": row.heuristic,
                "pass": row.pass_count,
                "total": row.total_count,
                "pct": row.percentage,
            }
            for row in summary_by_structure(table)
        ]
        return {"schemaVersion": SCHEMA_VERSION, "rows": rows}

    @app.api_route("/api/v1/upset", methods=["GET", "HEAD"])
    def upset(request: Request):
        values = _collect_params(request, set(_TRISTATE_PARAMS) | set(_SELECTION_PARAMS))
        spec = _filter_spec_from(values)
        scoped = apply_filters(table, spec)
        counts = upset_counts(scoped)
        return {
            "schemaVersion": SCHEMA_VERSION,
            "counts": counts,
            "total": len(scoped),
        }

    @app.api_route("/api/v1/distribution", methods=["GET", "HEAD"])
    def distribution(request: Request):
        values = _collect_params(request, set(_TRISTATE_PARAMS) | set(_SELECTION_PARAMS))
        structure = values.get("structure")
        if not structure:
            raise _ApiError(400, "structure", "structure is required")
        if structure not in known_structures:
            raise _ApiError(404, "structure", f"unknown structure {structure!r}")
        spec = _filter_spec_from(values)
        laterality = values.get("laterality")
        before = within_patient_sd(table, structure, laterality, None)
        after = within_patient_sd(table, structure, laterality, spec)
        return {
            "schemaVersion": SCHEMA_VERSION,
            "structure": structure,
            "before": before,
            "after": after,
        }

    @app.api_route("/api/v1/records", methods=["GET", "HEAD"])
    def records(request: Request):
        values = _collect_params(request, set(_TRISTATE_PARAMS) | set(_SELECTION_PARAMS))
        spec = _filter_spec_from(values)
        scoped = apply_filters(table, spec)
        rows = []
        truncated = False
        for record in scoped:
            if len(rows) >= MAX_RAW_RECORDS:
                truncated = True
                break
            rows.append(dict(zip(QC_CSV_COLUMNS, record_to_row(record))))
        return {"schemaVersion": SCHEMA_VERSION, "records": rows, "truncated": truncated}

    return app
