"""Report tables and figures: AUM histograms, data maps, cluster summaries.

Every emitter is a pure function of its inputs; CSV files are the primary
output and carry shortest round-trip float formatting, with matplotlib PNG
renderings written alongside them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .dynamics import AumRecord, DataMapRecord
from .noise import ClusterReportRow, NoiseMask


class ReportError(ValueError):
    """Report inputs are inconsistent."""


@dataclass(frozen=True)
class HistogramSpec:
    bin_count: int = 30
    range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.bin_count < 1:
            raise ReportError(f"bin_count must be positive, got {self.bin_count}")
        if self.range is not None and not self.range[0] <= self.range[1]:
            raise ReportError(f"invalid histogram range {self.range}")


@dataclass(frozen=True)
class HistogramRow:
    bin_low: float
    bin_high: float
    count_clean: int
    count_noise: int


@dataclass(frozen=True)
class DataMapPoint:
    sample_id: str
    confidence: float
    variability: float
    aum: float
    flagged: bool


def _format_float(value) -> str:
    return repr(float(value))


def emit_aum_histogram(
    aums: Sequence[AumRecord],
    mask: NoiseMask | None = None,
    spec: HistogramSpec = HistogramSpec(),
) -> list[HistogramRow]:
    """Bin AUM values into uniform bins, split into clean and noise series.

    Bins are half-open [low, high) with the final bin closed. Values outside
    an explicit range are counted in the boundary bins so the series always
    sum to the number of records. A degenerate range collapses to one bin.
    """
    if not aums:
        raise ReportError("cannot build a histogram of zero AUM records")
    noise_ids = mask.flipped_ids if mask is not None else frozenset()
    values = np.array([r.aum for r in aums])
    is_noise = np.array([r.sample_id in noise_ids for r in aums])

    if spec.range is not None:
        low, high = float(spec.range[0]), float(spec.range[1])
    else:
        low, high = float(values.min()), float(values.max())
    if low == high:
        return [
            HistogramRow(low, high, int((~is_noise).sum()), int(is_noise.sum()))
        ]

    clipped = np.clip(values, low, high)
    edges = np.linspace(low, high, spec.bin_count + 1)
    clean_counts, _ = np.histogram(clipped[~is_noise], bins=edges)
    noise_counts, _ = np.histogram(clipped[is_noise], bins=edges)
    return [
        HistogramRow(
            float(edges[i]), float(edges[i + 1]), int(clean_counts[i]), int(noise_counts[i])
        )
        for i in range(spec.bin_count)
    ]


def write_histogram_csv(rows: Sequence[HistogramRow], path) -> None:
    lines = ["bin_low,bin_high,count_clean,count_noise"]
    for r in rows:
        lines.append(
            f"{_format_float(r.bin_low)},{_format_float(r.bin_high)},{r.count_clean},{r.count_noise}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_histogram_png(rows: Sequence[HistogramRow], path, *, title: str = "AUM distribution") -> None:
    """Overlaid clean/noise bar chart of a histogram table."""
    lows = np.array([r.bin_low for r in rows])
    highs = np.array([r.bin_high for r in rows])
    widths = np.where(highs > lows, highs - lows, 1.0)
    centers = (lows + highs) / 2
    clean = [r.count_clean for r in rows]
    noise = [r.count_noise for r in rows]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar(centers, clean, width=widths, alpha=0.65, label="clean", color="C0")
    if any(noise):
        ax.bar(centers, noise, width=widths, alpha=0.65, label="noise", color="C1")
    ax.set_xlabel("AUM")
    ax.set_ylabel("samples")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_datamap(
    datamap_records: Sequence[DataMapRecord],
    aum_records: Sequence[AumRecord],
    flagged: Iterable[str] = (),
) -> list[DataMapPoint]:
    """Join data-map and AUM tables into one row per sample, sorted by id."""
    flagged = set(flagged)
    dm = {r.sample_id: r for r in datamap_records}
    am = {r.sample_id: r for r in aum_records}
    only_dm = sorted(dm.keys() - am.keys())
    only_am = sorted(am.keys() - dm.keys())
    if only_dm:
        raise ReportError(f"sample {only_dm[0]!r} has data-map statistics but no AUM record")
    if only_am:
        raise ReportError(f"sample {only_am[0]!r} has an AUM record but no data-map statistics")
    return [
        DataMapPoint(
            sample_id=sid,
            confidence=dm[sid].confidence,
            variability=dm[sid].variability,
            aum=am[sid].aum,
            flagged=sid in flagged,
        )
        for sid in sorted(dm)
    ]


def write_datamap_csv(points: Sequence[DataMapPoint], path) -> None:
    lines = ["sample_id,confidence,variability,aum,flagged"]
    for p in points:
        lines.append(
            f"{p.sample_id},{_format_float(p.confidence)},{_format_float(p.variability)},"
            f"{_format_float(p.aum)},{int(p.flagged)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_datamap_png(points: Sequence[DataMapPoint], path) -> None:
    """Confidence vs variability scatter, colored by AUM, flagged samples marked."""
    variability = [p.variability for p in points]
    confidence = [p.confidence for p in points]
    aum = [p.aum for p in points]

    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    scatter = ax.scatter(variability, confidence, c=aum, cmap="coolwarm", s=14, linewidths=0)
    flagged = [p for p in points if p.flagged]
    if flagged:
        ax.scatter(
            [p.variability for p in flagged],
            [p.confidence for p in flagged],
            marker="x",
            c="black",
            s=28,
            linewidths=0.8,
            label="flagged",
        )
        ax.legend(loc="lower right")
    fig.colorbar(scatter, ax=ax, label="AUM")
    ax.set_xlabel("variability")
    ax.set_ylabel("confidence")
    ax.set_title("Data map")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_aum_csv(records: Sequence[AumRecord], path) -> None:
    """Two-column table of sample id and AUM, sorted by id."""
    lines = ["sample_id,aum"]
    for r in sorted(records, key=lambda r: r.sample_id):
        lines.append(f"{r.sample_id},{_format_float(r.aum)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_aum_csv(path) -> dict[str, float]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("sample_id,aum"):
        raise ReportError(f"{path} is not an AUM csv")
    out: dict[str, float] = {}
    for line in lines[1:]:
        if not line:
            continue
        fields = line.split(",")
        out[fields[0]] = float(fields[1])
    return out


def write_aum_detail_csv(records: Sequence[AumRecord], path) -> None:
    """AUM table carrying the label each margin was computed against."""
    lines = ["sample_id,aum,label_used"]
    for r in sorted(records, key=lambda r: r.sample_id):
        lines.append(f"{r.sample_id},{_format_float(r.aum)},{r.label_used}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_cluster_report_csv(rows: Sequence[ClusterReportRow], path) -> None:
    lines = [
        "cluster_id,dominant_label,num_dominant,num_non_dominant,"
        "mean_aum_dominant,mean_aum_non_dominant,flagged_dominant,flagged_non_dominant"
    ]
    for r in rows:
        non_dom = "" if r.mean_aum_non_dominant is None else _format_float(r.mean_aum_non_dominant)
        lines.append(
            f"{r.cluster_id},{r.dominant_label},{r.num_dominant},{r.num_non_dominant},"
            f"{_format_float(r.mean_aum_dominant)},{non_dom},"
            f"{r.flagged_dominant},{r.flagged_non_dominant}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
