"""Report artifacts: delimited table, markdown, and SVG figures.

Rows follow a canonical condition order (clean, consecutive blocks,
intermittent by descending d, concat by ascending d, strong-label, noise,
attacks) and all numbers print with 3 decimals, so re-emitting the same
report is byte-identical.
"""

from __future__ import annotations

import math
from pathlib import Path

from .bench import ConditionSpec, EvalReport, RobustnessSummary
from .metrics import PredictionSet, distribution_shift

__all__ = ["condition_sort_key", "ordered_conditions", "emit_report"]

_GROUP_RANK = {
    "clean": 0,
    "consecutive": 1,
    "intermittent": 2,
    "concat": 3,
    "strong_label": 4,
    "gaussian_spec": 5,
    "gaussian_wav": 6,
    "fgsm": 7,
    "pgd": 8,
}


def condition_sort_key(cond: ConditionSpec):
    rank = _GROUP_RANK[cond.kind]
    if cond.kind == "consecutive":
        within = (cond.start_s, cond.duration_s)
    elif cond.kind == "intermittent":
        within = (-cond.d_s,)
    elif cond.kind == "concat":
        within = (cond.d_s,)
    elif cond.kind in ("gaussian_spec", "gaussian_wav"):
        within = (cond.sigma,)
    elif cond.kind == "fgsm":
        within = (cond.eps,)
    elif cond.kind == "pgd":
        within = (0 if cond.norm == "linf" else 1, cond.eps)
    else:
        within = ()
    return (rank, within, cond.name)


def ordered_conditions(report: EvalReport) -> list[ConditionSpec]:
    return sorted(report.conditions, key=condition_sort_key)


def _fmt3(value) -> str:
    if value is None:
        return ""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.3f}"


def _csv_text(report: EvalReport) -> str:
    lines = ["model,condition,mAP,AUC,d_prime"]
    for model in report.model_names:
        for cond in ordered_conditions(report):
            cell = report.cell(model, cond.name)
            if cell.triple is None:
                lines.append(f"{model},{cond.name},,,")
            else:
                t = cell.triple
                lines.append(
                    f"{model},{cond.name},{_fmt3(t.map)},{_fmt3(t.auc)},{_fmt3(t.d_prime)}"
                )
    return "\n".join(lines) + "\n"


def _shift_rows(report: EvalReport, model: str, cond: ConditionSpec, top_k: int = 5):
    clean_name = next(c.name for c in report.conditions if c.kind == "clean")
    clean = report.cell(model, clean_name)
    cell = report.cell(model, cond.name)
    if clean.scores is None or cell.scores is None:
        return None
    shift = distribution_shift(
        PredictionSet(clean.scores, report.labels),
        PredictionSet(cell.scores, report.labels),
        top_k=top_k,
    )
    names = report.class_names

    def label(c: int) -> str:
        return names[c] if c < len(names) else f"class_{c}"

    return [(label(c), delta) for c, delta in shift.top]


def _md_text(report: EvalReport, summary: RobustnessSummary | None) -> str:
    conds = ordered_conditions(report)
    lines = ["# Robustness report", ""]
    header = ["condition"]
    for model in report.model_names:
        header += [f"{model} mAP", f"{model} AUC", f"{model} d'"]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    for cond in conds:
        row = [cond.name]
        for model in report.model_names:
            cell = report.cell(model, cond.name)
            if cell.triple is None:
                row += ["--", "--", "--"]
            else:
                row += [_fmt3(cell.triple.map), _fmt3(cell.triple.auc), _fmt3(cell.triple.d_prime)]
        lines.append("| " + " | ".join(row) + " |")
    lines.append("")

    if summary is not None:
        lines += ["## Robustness summary", ""]
        lines.append("| model | clean mAP | d_half | attacks |")
        lines.append("|---|---|---|---|")
        for model, r in summary.per_model.items():
            d_half = _fmt3(r.d_half) + " s" if r.d_half is not None else r.d_half_bound
            attacks = "; ".join(f"{k}={_fmt3(v)}" for k, v in sorted(r.attack_map.items())) or "--"
            lines.append(f"| {model} | {_fmt3(r.clean_map)} | {d_half} | {attacks} |")
        lines.append("")

    attack_conds = [c for c in conds if c.kind in ("fgsm", "pgd")]
    if attack_conds:
        lines += ["## Output-distribution shift under attack", ""]
        lines.append("Per model, the classes whose mean score moved the most vs clean.")
        lines.append("")
        for cond in attack_conds:
            for model in report.model_names:
                rows = _shift_rows(report, model, cond)
                if rows is None:
                    continue
                lines.append(f"### {model} / {cond.name}")
                lines.append("")
                lines.append("| class | mean score delta |")
                lines.append("|---|---|")
                for name, delta in rows:
                    lines.append(f"| {name} | {delta:+.3f} |")
                lines.append("")

    failures = [
        (m, c.name, report.cell(m, c.name).error)
        for m in report.model_names
        for c in conds
        if report.cell(m, c.name).error
    ]
    if failures:
        lines += ["## Failed cells", ""]
        for model, cond_name, err in failures:
            lines.append(f"- {model} / {cond_name}: {err}")
        lines.append("")
    return "\n".join(lines)


def _emit_svg(report: EvalReport, plots_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "aedbench"
    written = []
    inter = sorted(
        (c for c in report.conditions if c.kind == "intermittent"), key=lambda c: c.d_s
    )
    if len(inter) >= 2:
        plots_dir.mkdir(parents=True, exist_ok=True)
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for model in report.model_names:
            xs, ys = [], []
            for cond in inter:
                cell = report.cell(model, cond.name)
                if cell.triple is not None:
                    xs.append(cond.d_s)
                    ys.append(cell.triple.map)
            if xs:
                ax.plot(xs, ys, marker="o", label=model)
        ax.set_xscale("log", base=2)
        ax.set_xlabel("masking interval d (s)")
        ax.set_ylabel("mAP")
        ax.set_title("mAP vs intermittent masking interval")
        ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = plots_dir / "map_vs_d.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


def emit_report(
    report: EvalReport,
    summary: RobustnessSummary | None,
    out_dir,
    formats: tuple[str, ...] = ("csv", "md", "svg"),
) -> list[Path]:
    """Write report.csv / report.md / plots/*.svg (+ summary.json) into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    unknown = set(formats) - {"csv", "md", "svg"}
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    if "csv" in formats:
        path = out / "report.csv"
        path.write_text(_csv_text(report))
        written.append(path)
    if "md" in formats:
        path = out / "report.md"
        path.write_text(_md_text(report, summary))
        written.append(path)
    if "svg" in formats:
        written.extend(_emit_svg(report, out / "plots"))
    if summary is not None:
        path = out / "summary.json"
        path.write_text(summary.to_json() + "\n")
        written.append(path)
    return written
