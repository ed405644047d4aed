"""Loss-curve rendering and metrics-file parsing for the plot command."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import EmptyInputError, MalformedFileError
from .trainer import METRICS_COLUMNS


def load_metrics(path: str | Path) -> dict[str, list[float]]:
    """Parse a training metrics file into column lists.

    Raises MalformedFileError naming the offending line, EmptyInputError
    when the file holds no data rows.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise EmptyInputError(f"{path}: empty metrics file")
    header = lines[0].split(",")
    if header != list(METRICS_COLUMNS):
        raise MalformedFileError(f"{path}:1: unexpected header {lines[0]!r}")
    columns: dict[str, list[float]] = {name: [] for name in METRICS_COLUMNS}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != len(METRICS_COLUMNS):
            raise MalformedFileError(
                f"{path}:{lineno}: expected {len(METRICS_COLUMNS)} fields, got {len(fields)}"
            )
        try:
            for name, field in zip(METRICS_COLUMNS, fields):
                columns[name].append(float(field))
        except ValueError as exc:
            raise MalformedFileError(f"{path}:{lineno}: non-numeric field") from exc
    if not columns["epoch"]:
        raise EmptyInputError(f"{path}: metrics file has no data rows")
    return columns


def run_name(path: str | Path) -> str:
    """Legend label: the run directory name when the file is metrics.csv."""
    path = Path(path)
    if path.name == "metrics.csv" and path.parent.name:
        return path.parent.name
    return path.stem


def merged_loss_table(runs: list[tuple[str, dict]]) -> str:
    """CSV of loss_total per epoch with one column per run."""
    max_len = max(len(columns["epoch"]) for _, columns in runs)
    header = "epoch," + ",".join(name for name, _ in runs)
    rows = [header]
    for i in range(max_len):
        cells = [str(i)]
        for _, columns in runs:
            series = columns["loss_total"]
            cells.append(repr(series[i]) if i < len(series) else "")
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def plot_loss_curves(
    metrics_files: list[str | Path], out_image: str | Path, table_path: str | Path | None = None
) -> Path:
    """Render loss_total vs epoch for each metrics file; emit the merged table."""
    runs = [(run_name(path), load_metrics(path)) for path in metrics_files]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, columns in runs:
        ax.plot(columns["epoch"], columns["loss_total"], label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("total training loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out_image = Path(out_image)
    fig.savefig(out_image, dpi=120)
    plt.close(fig)
    table_path = Path(table_path) if table_path else out_image.with_suffix(out_image.suffix + ".csv")
    table_path.write_text(merged_loss_table(runs))
    return out_image
