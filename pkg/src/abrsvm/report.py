"""Render aggregate results as the three CSV tables and ROC point files.

Max/mean tables are emitted in percent, the std table as fractions,
mirroring how the corresponding result tables are conventionally printed;
the machine-readable results file keeps full-precision fractions for
everything. Rounding happens here only.
"""

from __future__ import annotations

from pathlib import Path

from .evaluation import AggregateReport, RocCurve

TABLE_COLUMNS = ("accuracy", "gmean", "precision", "recall")
_COLUMN_TITLES = {"accuracy": "Accuracy", "gmean": "GM", "precision": "Precision", "recall": "Recall"}


def _table_lines(reports: list[AggregateReport], which: str) -> list[str]:
    if which in ("max", "mean"):
        prefix = which.capitalize()
        header = ["Models"] + [f"{prefix} {_COLUMN_TITLES[c]} (%)" for c in TABLE_COLUMNS]
        rows = [
            [r.model_name] + [f"{100.0 * getattr(r, which)[c]:.2f}" for c in TABLE_COLUMNS]
            for r in reports
        ]
    else:
        header = ["Models"] + [f"Std {_COLUMN_TITLES[c]}" for c in TABLE_COLUMNS]
        rows = [[r.model_name] + [f"{r.std[c]:.6f}" for c in TABLE_COLUMNS] for r in reports]
    return [",".join(header)] + [",".join(row) for row in rows]


def write_tables(reports: list[AggregateReport], out_dir: str | Path) -> dict[str, Path]:
    """Write max.csv / mean.csv / std.csv; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for which in ("max", "mean", "std"):
        path = out_dir / f"{which}.csv"
        path.write_text("\n".join(_table_lines(reports, which)) + "\n", encoding="utf-8")
        paths[which] = path
    return paths


def write_roc_points(curve: RocCurve, path: str | Path) -> Path:
    path = Path(path)
    lines = ["threshold,fpr,tpr"]
    for thr, (fpr, tpr) in zip(curve.thresholds, curve.points):
        lines.append(f"{thr!r},{fpr!r},{tpr!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_roc_points(path: str | Path) -> RocCurve:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    points = []
    thresholds = []
    for line in lines[1:]:
        thr, fpr, tpr = line.split(",")
        thresholds.append(float(thr))
        points.append((float(fpr), float(tpr)))
    return RocCurve(points=tuple(points), thresholds=tuple(thresholds))


def plot_roc_curves(curves: dict[str, RocCurve], path: str | Path) -> Path:
    """Optional vector plot of per-model ROC curves (needs matplotlib)."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise RuntimeError("ROC plotting needs matplotlib (pip install abrsvm[plots])") from exc
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 5))
    for name, curve in curves.items():
        xs = [p[0] for p in curve.points]
        ys = [p[1] for p in curve.points]
        ax.plot(xs, ys, label=name, linewidth=1.2)
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=0.8)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
