"""Text tables and plot series built from a :class:`GridSummary`."""

from __future__ import annotations

import math

from .experiments import PARAMETERS, GridSummary, Quartiles

_SYMBOL = {"beta0": "b0", "beta1": "b1", "pi": "pi"}


def _q(q: Quartiles) -> str:
    return f"{q.median:.2f} ({q.q1:.2f} ; {q.q3:.2f})"


def _num(x: float, digits: int = 2) -> str:
    return "--" if math.isnan(x) else f"{x:.{digits}f}"


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _scenarios(summary: GridSummary) -> list[str]:
    seen = []
    for c in summary.cells:
        if c.scenario not in seen:
            seen.append(c.scenario)
    return seen


def estimates_table(summary: GridSummary, scenario: str) -> str:
    rows = [["n", "model", "b0 med (Q1 ; Q3)", "b1 med (Q1 ; Q3)", "pi med (Q1 ; Q3)"]]
    for c in summary.cells:
        if c.scenario == scenario:
            rows.append([str(c.n), c.model, _q(c.beta0), _q(c.beta1), _q(c.pi)])
    return _align(rows)


def correlation_table(summary: GridSummary, scenario: str) -> str:
    rows = [["n", "model", "b0;b1", "b0;pi", "b1;pi"]]
    for c in summary.cells:
        if c.scenario == scenario:
            rows.append(
                [str(c.n), c.model, _num(c.corr_beta0_beta1), _num(c.corr_beta0_pi), _num(c.corr_beta1_pi)]
            )
    return _align(rows)


def rmse_table(summary: GridSummary, scenario: str) -> str:
    rows = [["n", "model", *(f"rmse {_SYMBOL[p]}" for p in PARAMETERS), "sens", "spec", "accept"]]
    for c in summary.cells:
        if c.scenario == scenario:
            rows.append(
                [str(c.n), c.model, *(_num(c.rmse[p], 3) for p in PARAMETERS),
                 _num(c.sens, 3), _num(c.spec, 3), _num(c.accept_rate, 3)]
            )
    return _align(rows)


def relative_table(summary: GridSummary, scenario: str) -> str | None:
    rel = [r for r in summary.relative if r.scenario == scenario]
    if not rel:
        return None
    rows = [["n", "rel. sensitivity M2/M1", "rel. specificity M2/M1"]]
    rows += [[str(r.n), _num(r.rel_sens, 3), _num(r.rel_spec, 3)] for r in rel]
    return _align(rows)


def rmse_diagnostics(summary: GridSummary) -> list[str]:
    """Flag every place where an rmse series grows with n; informational only."""
    notes = []
    series: dict[tuple, list] = {}
    for c in summary.cells:
        for p in PARAMETERS:
            series.setdefault((c.scenario, c.model, p), []).append((c.n, c.rmse[p]))
    for (scenario, model, p), pts in series.items():
        pts.sort()
        for (n_a, a), (n_b, b) in zip(pts, pts[1:]):
            if b > a:
                notes.append(
                    f"note: scenario {scenario} {model} rmse({_SYMBOL[p]}) rises from {a:.4f} at n={n_a} "
                    f"to {b:.4f} at n={n_b}"
                )
    return notes


def render_report(manifest: dict, summary: GridSummary) -> str:
    grid = manifest.get("grid", {})
    parts = [
        f"pobayes archive (version {manifest.get('version', '?')}), master seed {grid.get('master_seed')}, "
        f"{grid.get('replicates')} replicate(s) per cell"
    ]
    for s in _scenarios(summary):
        truth = summary.truth.get(s, {})
        header = f"Scenario ({s})"
        if truth:
            header += f": true b0={truth['beta0']:g}, b1={truth['beta1']:g}, population pi={truth['pi']:.4f}"
        parts += ["", header, "", "Point estimates (medians over replicates, quartiles in parentheses)",
                  estimates_table(summary, s), "", "Pairwise correlation of point estimates across replicates",
                  correlation_table(summary, s), "", "Root mean squared error and classification",
                  rmse_table(summary, s)]
        rel = relative_table(summary, s)
        if rel:
            parts += ["", "Relative predictive performance", rel]
    failed = manifest.get("failed_cells") or []
    if failed:
        parts += ["", f"{len(failed)} fit(s) failed; see manifest.json"]
    notes = rmse_diagnostics(summary)
    if notes:
        parts += ["", *notes]
    return "\n".join(parts)


def plot_series(summary: GridSummary) -> dict:
    """Machine-readable series keyed by plot: ``x`` is n, one series per model."""
    rmse: dict = {}
    for c in summary.cells:
        for p in PARAMETERS:
            s = rmse.setdefault(c.scenario, {}).setdefault(p, {}).setdefault(c.model, {"x": [], "y": []})
            s["x"].append(c.n)
            s["y"].append(None if math.isnan(c.rmse[p]) else c.rmse[p])
    relative: dict = {}
    for r in summary.relative:
        for name, v in (("sensitivity", r.rel_sens), ("specificity", r.rel_spec)):
            s = relative.setdefault(r.scenario, {}).setdefault(name, {"x": [], "y": []})
            s["x"].append(r.n)
            s["y"].append(None if math.isnan(v) else v)
    return {"rmse": rmse, "relative": relative}
