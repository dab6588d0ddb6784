"""
Report Formatter Module

Provides ReportFormatter for rendering evaluation reports as plain-text
tables and machine-readable JSON. Output carries no timestamps or run
metadata, so rendering the same results twice gives identical bytes.
"""

import json
import math
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from src.analytics.metrics import ConfusionMatrix, EvalReport

RULE = "=" * 60


def _num(value: Any, precision: int = 4) -> str:
    """Fixed-width friendly number, with '-' for missing values."""
    if value is None:
        return "-"
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    value = float(value)
    if math.isnan(value):
        return "-"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{precision}g}"


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


class ReportFormatter:
    """
    Formats evaluation output as text tables.

    Every section is derived from an EvalReport or a summary frame, so the
    printed numbers can be recomputed from the results CSV.
    """

    @staticmethod
    def table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
        """Left-aligned text table with a header underline."""
        widths = [len(h) for h in headers]
        for row in rows:
            widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
        lines.append("  ".join("-" * w for w in widths))
        for row in rows:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        return "\n".join(lines)

    @classmethod
    def format_mae(cls, report: EvalReport) -> str:
        """MAE and sigma per setting and parameter."""
        rows = [
            [
                r.phenomenon, r.setting, f"{r.integrator}/{r.loss_kind}/K{r.horizon}",
                r.param_kind, r.param_name, _num(r.gt), _num(r.mae), _num(r.sigma), str(r.n_clips),
            ]
            for r in report.rows
        ]
        headers = ["phenomenon", "setting", "config", "kind", "param", "gt", "mae", "sigma", "n"]
        return "MAE (test clips)\n" + cls.table(headers, rows)

    @classmethod
    def format_variance(cls, report: EvalReport) -> str:
        """Mean estimate and spread over all trials of each setting."""
        rows = [
            [
                v.phenomenon, v.setting, f"{v.integrator}/{v.loss_kind}/K{v.horizon}",
                v.param_kind, v.param_name, _num(v.mean), _num(v.std), _num(v.ci95), str(v.n_trials),
            ]
            for v in report.variance
        ]
        headers = ["phenomenon", "setting", "config", "kind", "param", "mean", "std", "ci95", "n"]
        return "Estimate spread (all trials)\n" + cls.table(headers, rows)

    @classmethod
    def format_diagnostics(cls, report: EvalReport) -> str:
        """Residual, gradient-norm snapshots, extrapolation and divergences."""
        rows = []
        for d in report.diagnostics:
            extrap = {k: mean for k, mean, _ in d.extrapolation}
            rows.append([
                d.phenomenon, d.setting, f"{d.integrator}/{d.loss_kind}/K{d.horizon}",
                _num(d.ode_residual, 3),
                _num(d.grad_norms.get(1), 3), _num(d.grad_norms.get(50), 3), _num(d.grad_norms.get(200), 3),
                _num(extrap.get(10), 3), _num(extrap.get(25), 3), _num(extrap.get(50), 3),
                f"{d.diverged}/{d.n_clips}",
            ])
        headers = [
            "phenomenon", "setting", "config", "residual",
            "|g|@1", "|g|@50", "|g|@200", "E10", "E25", "E50", "diverged",
        ]
        return "Identifiability and extrapolation\n" + cls.table(headers, rows)

    @classmethod
    def format_confusion(cls, matrix: ConfusionMatrix) -> str:
        """Confusion matrix with row totals and overall accuracy."""
        headers = ["truth \\ predicted"] + list(matrix.labels) + ["total", "acc"]
        per_class = matrix.per_class_accuracy
        rows = []
        for i, label in enumerate(matrix.labels):
            counts = [str(int(c)) for c in matrix.counts[i]]
            rows.append([label] + counts + [str(int(matrix.counts[i].sum())), _num(per_class[label], 3)])
        accuracy = f"Accuracy: {matrix.correct}/{matrix.total} = {_num(100 * matrix.overall_accuracy, 3)}%"
        return "Family selection\n" + cls.table(headers, rows) + "\n" + accuracy

    @classmethod
    def format_frame(cls, title: str, frame: pd.DataFrame, precision: int = 4) -> str:
        """Any summary frame (sweep, ablation, amplitude table) as text."""
        headers = [str(c) for c in frame.columns]
        rows = [
            [_num(v, precision) if isinstance(v, float) else str(v) for v in record]
            for record in frame.itertuples(index=False, name=None)
        ]
        return f"{title}\n" + cls.table(headers, rows)

    @classmethod
    def render(cls, report: EvalReport, extra_sections: Optional[List[str]] = None) -> str:
        """Full plain-text report."""
        sections = [RULE, "PHYSICS IDENTIFICATION REPORT", RULE]
        if report.rows:
            sections.append(cls.format_mae(report))
        if report.variance:
            sections.append(cls.format_variance(report))
        if report.diagnostics:
            sections.append(cls.format_diagnostics(report))
        if report.selection is not None:
            sections.append(cls.format_confusion(report.selection))
        sections.extend(extra_sections or [])
        sections.append(RULE)
        return "\n\n".join(sections) + "\n"

    @staticmethod
    def to_json(report: EvalReport) -> str:
        """Machine-readable report; non-finite floats become null or strings."""
        data: Dict[str, Any] = _json_safe(report.to_dict())
        return json.dumps(data, indent=2, sort_keys=True) + "\n"
