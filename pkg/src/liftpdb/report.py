"""Rendering of ranking reports: pretty table, TSV, and bar-chart figure."""

from __future__ import annotations

from .learn import RankingReport

__all__ = ["format_metrics_table", "metrics_tsv", "write_metrics_tsv", "write_metrics_figure"]


def _sorted_rows(report: RankingReport):
    def key(m):
        tid = m.template_id
        if tid.startswith("Q") and tid[1:].isdigit():
            return (0, int(tid[1:]))
        return (1, tid)

    return sorted(report.per_template, key=key)


def format_metrics_table(report: RankingReport) -> str:
    rows = [("Template", "Queries", "AUC", "APR")]
    for m in _sorted_rows(report):
        rows.append((m.template_id, str(m.n_queries), f"{100 * m.auc:.1f}", f"{m.apr:.1f}"))
    rows.append(("overall", str(sum(m.n_queries for m in report.per_template)),
                 f"{100 * report.overall_auc:.1f}", f"{report.overall_apr:.1f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.rjust(w) if j else cell.ljust(w) for j, (cell, w) in enumerate(zip(row, widths))))
        if i == 0 or i == len(rows) - 2:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def metrics_tsv(report: RankingReport) -> str:
    lines = ["template\tqueries\tauc\tapr"]
    for m in _sorted_rows(report):
        lines.append(f"{m.template_id}\t{m.n_queries}\t{m.auc:.6f}\t{m.apr:.6f}")
    lines.append(
        f"overall\t{sum(m.n_queries for m in report.per_template)}"
        f"\t{report.overall_auc:.6f}\t{report.overall_apr:.6f}"
    )
    return "\n".join(lines) + "\n"


def write_metrics_tsv(report: RankingReport, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(metrics_tsv(report))


def write_metrics_figure(report: RankingReport, path):
    """Grouped AUC/APR bars per template, overall as dashed lines."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    rows = _sorted_rows(report)
    labels = [m.template_id for m in rows]
    aucs = [100 * m.auc for m in rows]
    aprs = [m.apr for m in rows]
    x = np.arange(len(rows))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(rows) + 2.0), 3.2))
    ax.bar(x - width / 2, aucs, width, label="AUC", color="#30618f")
    ax.bar(x + width / 2, aprs, width, label="APR", color="#c46f36")
    ax.axhline(100 * report.overall_auc, color="#30618f", linestyle="--", linewidth=0.8)
    ax.axhline(report.overall_apr, color="#c46f36", linestyle="--", linewidth=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 105)
    ax.set_ylabel("score")
    ax.legend(loc="lower right", fontsize=8)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
