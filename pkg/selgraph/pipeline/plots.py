"""Static SVG error-bar charts of benchmark summaries."""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from selgraph.pipeline.metrics import aggregate  # noqa: E402

logger = logging.getLogger(__name__)

PLOTTED = {
    "coverage_rate": "Coverage rate",
    "avg_length": "Average interval length",
    "f1": "F1 score",
}
GROUP_KEYS = ["setting", "swept", "value", "rule", "method"]


def read_metrics_csv(path: Path) -> pd.DataFrame:
    frame = pd.read_csv(path, keep_default_na=True)
    missing = {"setting", "swept", "value", "method"} - set(frame.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    frame["error"] = frame["error"].fillna("") if "error" in frame.columns else ""
    frame["setting"] = frame["setting"].astype(str)
    return frame


def render_plots(metrics: pd.DataFrame, out_dir: Path, *, nominal: float | None = None) -> list[Path]:
    """One SVG per (setting, metric): mean +/- one MC standard error against the swept value.

    Args:
        metrics: Per-replication rows as written to ``metrics.csv``.
        out_dir: Destination directory.
        nominal: Target coverage drawn as a reference line on coverage plots.

    Returns:
        Paths of the written files, sorted.
    """
    summary = aggregate(metrics, GROUP_KEYS)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with plt.rc_context({"svg.hashsalt": "selgraph", "svg.fonttype": "none"}):
        for (setting, swept), block in summary.groupby(["setting", "swept"], sort=True):
            for metric, label in PLOTTED.items():
                if f"{metric}_mean" not in block.columns:
                    continue
                fig, ax = plt.subplots(figsize=(5.0, 3.6))
                for (rule, method), line in block.groupby(["rule", "method"], sort=True):
                    line = line.sort_values("value")
                    ax.errorbar(
                        line["value"],
                        line[f"{metric}_mean"],
                        yerr=line[f"{metric}_se"].fillna(0.0),
                        marker="o",
                        capsize=3,
                        label=f"{method} ({rule})",
                    )
                if metric == "coverage_rate" and nominal is not None:
                    ax.axhline(nominal, color="grey", linestyle="--", linewidth=1)
                ax.set_xlabel(swept)
                ax.set_ylabel(label)
                ax.set_title(f"Setting {setting}")
                ax.legend(fontsize="small")
                fig.tight_layout()
                path = out_dir / f"setting{setting}_{metric}.svg"
                fig.savefig(path, format="svg", metadata={"Date": None})
                plt.close(fig)
                written.append(path)
                logger.info("Wrote %s", path)
    return sorted(written)
