"""Static cost model: FLOPs per operation type and whole-model totals.

Conventions: one multiply-accumulate counts as one FLOP, a dense layer
costs ``n * (c_in * c_out + c_out)`` including the bias add, and building
a KNN graph over ``n`` points with ``c`` features costs
``n^2 * (3c - 1) / 2`` (per pair of points: c subtractions, c squarings,
c - 1 additions; neighbor selection is free). Max-pool comparisons are
not floating-point work and are tallied separately from the total.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .blocks import ModelConfig


def flops_dense(n: int, c_in: int, c_out: int) -> int:
    """Cost of a shared dense layer applied to ``n`` points."""
    if n < 1 or c_in < 1 or c_out < 1:
        raise ValueError("all dimensions must be >= 1")
    return n * (c_in * c_out + c_out)


def flops_graph(n: int, c: int) -> int:
    """Cost of the pairwise squared-distance pass behind a KNN graph build."""
    if n < 2 or c < 1:
        raise ValueError("need n >= 2 points and c >= 1 features")
    return n * n * (3 * c - 1) // 2


@dataclass
class CostEntry:
    kind: str  # "graph", "dense", or "head"
    op: str
    shape: str
    flops: int


@dataclass
class CostReport:
    """Per-operation FLOPs ledger with parameter and size totals."""

    entries: list[CostEntry] = field(default_factory=list)
    total_parameters: int = 0
    comparison_ops: int = 0  # max-pool comparisons, informational only

    @property
    def total_flops(self) -> int:
        return sum(e.flops for e in self.entries)

    @property
    def model_size_bytes(self) -> int:
        return self.total_parameters * 4


def _dense_entry(kind: str, op: str, n: int, c_in: int, c_out: int) -> CostEntry:
    return CostEntry(kind, op, f"({n},{c_in})-({n},{c_out})", flops_dense(n, c_in, c_out))


def analyze_model(config: ModelConfig, n_points: int | None = None,
                  rebuild_graph_per_step: bool = False) -> CostReport:
    """Price every operation of a model configuration at ``n_points`` inputs.

    The shared-graph design builds one graph per GNN block, always over the
    3 input coordinates. With ``rebuild_graph_per_step`` the report instead
    prices a hypothetical variant that rebuilds the graph before every
    graph-convolution step at that step's input width.
    """
    n = config.n_points if n_points is None else n_points
    report = CostReport()
    params = 0

    for b, block in enumerate(config.gnn_blocks):
        if block.k > 0:
            if rebuild_graph_per_step:
                for t, step in enumerate(block.gcn_blocks, start=1):
                    report.entries.append(CostEntry(
                        "graph", f"gnn{b} knn rebuild (k={block.k}) step {t}",
                        f"({n},{step.in_channels})", flops_graph(n, step.in_channels)))
            else:
                report.entries.append(CostEntry(
                    "graph", f"gnn{b} knn graph (k={block.k})",
                    f"({n},3)", flops_graph(n, 3)))

        report.entries.append(_dense_entry("dense", f"gnn{b} mlp0", n, 3, block.f0_channels))
        params += 3 * block.f0_channels + block.f0_channels
        for t, step in enumerate(block.gcn_blocks, start=1):
            report.entries.append(_dense_entry(
                "dense", f"gnn{b} mlp{t}", n, step.in_channels, step.out_channels))
            params += step.in_channels * step.out_channels + step.out_channels
            if block.k > 0:
                report.comparison_ops += n * block.k * step.out_channels

    report.entries.append(_dense_entry(
        "dense", "trunk mlp", n, config.trunk_in_channels, config.trunk_out_channels))
    params += (config.trunk_in_channels * config.trunk_out_channels
               + config.trunk_out_channels)
    report.comparison_ops += n * config.trunk_out_channels  # global max-pool

    width = config.trunk_out_channels
    for i, hidden in enumerate(config.classifier_hidden):
        report.entries.append(_dense_entry("head", f"classifier.{i}", 1, width, hidden))
        params += width * hidden + hidden
        width = hidden
    report.entries.append(_dense_entry(
        "head", f"classifier.{len(config.classifier_hidden)}", 1, width, config.num_classes))
    params += width * config.num_classes + config.num_classes

    if config.segmentation is not None:
        width = 2 * config.trunk_out_channels
        seg = config.segmentation
        for i, hidden in enumerate(seg.head_hidden):
            report.entries.append(_dense_entry("head", f"seghead.{i}", n, width, hidden))
            params += width * hidden + hidden
            width = hidden
        report.entries.append(_dense_entry(
            "head", f"seghead.{len(seg.head_hidden)}", n, width, seg.num_parts))
        params += width * seg.num_parts + seg.num_parts

    report.total_parameters = params
    return report


def compare_shared_vs_recomputed(config: ModelConfig, n_points: int | None = None):
    """Reports for the shared-graph design and the rebuild-per-step variant."""
    shared = analyze_model(config, n_points)
    recomputed = analyze_model(config, n_points, rebuild_graph_per_step=True)
    return shared, recomputed


def graph_flops_total(report: CostReport) -> int:
    return sum(e.flops for e in report.entries if e.kind == "graph")


def format_cost_table(report: CostReport, title: str = "cost report") -> str:
    """Aligned text table plus a totals line in comparison-table units."""
    rows = [(e.op, e.shape, f"{e.flops:,}", f"{e.flops / 1e6:.2f}") for e in report.entries]
    headers = ("operation", "shape", "flops", "mega")
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = [title]
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    total = report.total_flops
    lines.append("")
    lines.append(f"total: {total:,} FLOPs = {total / 1e9:.4f} GFLOPs "
                 f"({total / 1e8:.2f} x 100 MFLOPs)")
    lines.append(f"parameters: {report.total_parameters:,} "
                 f"({report.total_parameters / 1e5:.2f} x 100k), "
                 f"model size {report.model_size_bytes / 1e6:.2f} MB")
    lines.append(f"pool comparisons (not counted): {report.comparison_ops:,}")
    return "\n".join(lines) + "\n"


def write_cost_csv(path, report: CostReport) -> None:
    """CSV dump: ``op,shape,flops`` with a trailing total row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["op", "shape", "flops"])
        for entry in report.entries:
            writer.writerow([entry.op, entry.shape, entry.flops])
        writer.writerow(["total", "", report.total_flops])
