"""File formats: versioned CSV datasets, JSON summaries and result archives.

Every CSV starts with a ``# schema_version=N`` line followed by a header row;
floats are written with 17 significant digits so a read gives back the exact
binary value.  JSON documents carry a top-level ``schema_version`` key.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datagen import CaseControlSample, Population, SealedTruth
from .experiments import GridSummary, ReplicateResult

SCHEMA_VERSION = 1
_VERSION_PREFIX = "# schema_version="

ARCHIVE_FILES = (
    "manifest.json",
    "replicates.csv",
    "summary.json",
    "plot_rmse.csv",
    "plot_relative.csv",
    "plot_scatter.csv",
)


class DataError(ValueError):
    """Unreadable, malformed or wrong-version input file."""


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"{_VERSION_PREFIX}{SCHEMA_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path: Path, expected: Sequence[str] | None = None) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Return the header and ``(line_number, fields)`` for each data row."""
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    with fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith(_VERSION_PREFIX):
            raise DataError(f"{path}:1: missing '{_VERSION_PREFIX}' line")
        version = first[len(_VERSION_PREFIX):]
        if version != str(SCHEMA_VERSION):
            raise DataError(f"{path}:1: unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}:2: missing header row") from None
        if expected is not None and list(header[: len(expected)]) != list(expected):
            raise DataError(f"{path}:2: expected columns {list(expected)}, found {header}")
        rows = []
        for lineno, fields in enumerate(reader, start=3):
            if len(fields) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, found {len(fields)}")
            rows.append((lineno, fields))
    return header, rows


def _parse(path, lineno, column, value, kind):
    try:
        return kind(value)
    except ValueError:
        raise DataError(f"{path}:{lineno}: column {column!r}: cannot parse {value!r}") from None


def _parse_binary(path, lineno, column, value) -> int:
    v = _parse(path, lineno, column, value, int)
    if v not in (0, 1):
        raise DataError(f"{path}:{lineno}: column {column!r} must be 0 or 1, got {value!r}")
    return v


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def write_population(path: Path, pop: Population) -> None:
    rows = zip(pop.unit_id.tolist(), pop.x1.tolist(), pop.x2.tolist(), pop.y.tolist())
    write_csv(path, ["unit_id", "x1", "x2", "y"], rows)


def read_population(path: Path) -> Population:
    _, rows = read_csv(path, ["unit_id", "x1", "x2", "y"])
    x1, x2, y = [], [], []
    for i, (lineno, (uid, a, b, label)) in enumerate(rows):
        if _parse(path, lineno, "unit_id", uid, int) != i:
            raise DataError(f"{path}:{lineno}: unit_id must run 0..N-1 in order")
        x1.append(_parse(path, lineno, "x1", a, float))
        x2.append(_parse(path, lineno, "x2", b, float))
        y.append(_parse_binary(path, lineno, "y", label))
    return Population(np.array(x1), np.array(x2), np.array(y, dtype=np.int8))


def write_sample(path: Path, sample: CaseControlSample) -> None:
    header = ["unit_id", *sample.columns, "z"]
    rows = (
        [int(u), *(float(v) for v in x), int(z)]
        for u, x, z in zip(sample.unit_id, sample.x, sample.z)
    )
    write_csv(path, header, rows)


def read_sample(path: Path) -> CaseControlSample:
    """Read an estimator-facing sample; it never carries labels."""
    header, rows = read_csv(path)
    if len(header) < 3 or header[0] != "unit_id" or header[-1] != "z":
        raise DataError(f"{path}:2: expected 'unit_id,<covariates...>,z', found {header}")
    columns = tuple(header[1:-1])
    unit_id, x, z = [], [], []
    for lineno, fields in rows:
        unit_id.append(_parse(path, lineno, "unit_id", fields[0], int))
        x.append([_parse(path, lineno, c, v, float) for c, v in zip(columns, fields[1:-1])])
        z.append(_parse_binary(path, lineno, "z", fields[-1]))
    if not rows:
        raise DataError(f"{path}: sample has no rows")
    return CaseControlSample(unit_id=np.array(unit_id), x=np.array(x), z=np.array(z), columns=columns)


def write_truth(path: Path, truth: SealedTruth) -> None:
    write_csv(path, ["unit_id", "y"], zip(truth.unit_id.tolist(), truth.y.tolist()))


def read_truth(path: Path) -> SealedTruth:
    _, rows = read_csv(path, ["unit_id", "y"])
    uid = [_parse(path, ln, "unit_id", f[0], int) for ln, f in rows]
    y = [_parse_binary(path, ln, "y", f[1]) for ln, f in rows]
    return SealedTruth(unit_id=np.array(uid, dtype=np.int64), y=np.array(y, dtype=np.int8))


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def write_json(path: Path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": SCHEMA_VERSION, **payload}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def read_json(path: Path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    version = doc.get("schema_version") if isinstance(doc, dict) else None
    if version != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    return doc


# ---------------------------------------------------------------------------
# Replicate tables and archives
# ---------------------------------------------------------------------------

REPLICATE_COLUMNS = [
    "scenario", "n", "model", "replicate", "beta0", "beta1", "pi_hat",
    "accept_rate", "sens", "spec", "sample_seed", "chain_seed", "error",
]


def write_replicates(path: Path, results: Iterable[ReplicateResult]) -> None:
    rows = (
        [r.scenario, r.n, r.model, r.replicate, float(r.beta_hat[0]), float(r.beta_hat[1]),
         float(r.pi_hat), float(r.accept_rate), float(r.sens), float(r.spec),
         r.sample_seed, r.chain_seed, r.error or ""]
        for r in results
    )
    write_csv(path, REPLICATE_COLUMNS, rows)


def read_replicates(path: Path) -> list[ReplicateResult]:
    _, rows = read_csv(path, REPLICATE_COLUMNS)
    out = []
    for lineno, f in rows:
        num = [_parse(path, lineno, c, v, float) for c, v in zip(REPLICATE_COLUMNS[4:10], f[4:10])]
        out.append(
            ReplicateResult(
                scenario=f[0],
                n=_parse(path, lineno, "n", f[1], int),
                model=f[2],
                replicate=_parse(path, lineno, "replicate", f[3], int),
                beta_hat=(num[0], num[1]),
                pi_hat=num[2],
                accept_rate=num[3],
                sens=num[4],
                spec=num[5],
                sample_seed=_parse(path, lineno, "sample_seed", f[10], int),
                chain_seed=_parse(path, lineno, "chain_seed", f[11], int),
                error=f[12] or None,
            )
        )
    return out


def plot_rows(summary: GridSummary, results: Sequence[ReplicateResult]):
    """Plot-ready series: rmse vs n, relative sens/spec vs n, (beta0, pi) scatter."""
    rmse = [
        [c.scenario, c.model, p, c.n, float(c.rmse[p])]
        for c in summary.cells
        for p in ("beta0", "beta1", "pi")
    ]
    relative = [
        [r.scenario, m, r.n, float(v)]
        for r in summary.relative
        for m, v in (("sensitivity", r.rel_sens), ("specificity", r.rel_spec))
    ]
    scatter = [
        [r.scenario, r.n, r.model, r.replicate, float(r.beta_hat[0]), float(r.pi_hat)]
        for r in sorted(results, key=lambda r: r.key)
        if r.ok
    ]
    return rmse, relative, scatter


def write_archive(out_dir: Path, manifest: dict, results: Sequence[ReplicateResult], summary: GridSummary) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(results, key=lambda r: r.key)
    write_json(out_dir / "manifest.json", manifest)
    write_replicates(out_dir / "replicates.csv", ordered)
    write_json(out_dir / "summary.json", summary.to_dict())
    rmse, relative, scatter = plot_rows(summary, ordered)
    write_csv(out_dir / "plot_rmse.csv", ["scenario", "series", "parameter", "x", "y"], rmse)
    write_csv(out_dir / "plot_relative.csv", ["scenario", "series", "x", "y"], relative)
    write_csv(out_dir / "plot_scatter.csv", ["scenario", "n", "model", "replicate", "beta0", "pi_hat"], scatter)
    return out_dir


def read_archive(out_dir: Path) -> tuple[dict, list[ReplicateResult], GridSummary]:
    out_dir = Path(out_dir)
    if not (out_dir / "manifest.json").exists():
        raise DataError(f"{out_dir}: not an archive (manifest.json missing)")
    manifest = read_json(out_dir / "manifest.json")
    results = read_replicates(out_dir / "replicates.csv")
    summary_doc = read_json(out_dir / "summary.json")
    summary_doc.pop("schema_version")
    return manifest, results, GridSummary.from_dict(summary_doc)
