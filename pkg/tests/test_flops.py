"""Cost model: per-operation formulas, published-table rows, model totals."""

import pytest

from mlgcn.blocks import ModelConfig, make_gnn_block, preset_light, preset_lighter
from mlgcn.flops import (
    analyze_model,
    compare_shared_vs_recomputed,
    flops_dense,
    flops_graph,
    format_cost_table,
    graph_flops_total,
    write_cost_csv,
)

# published cost-table rows: (args..., printed mega value, print resolution)
DENSE_ROWS = [
    (1024, 3, 32, 0.13, 0.01),
    (1024, 32, 64, 2, 1),
    (1024, 64, 128, 8, 1),
    (1024, 128, 256, 33, 1),
    (1024, 512, 1024, 537, 1),
    (2048, 128, 256, 67, 1),
    (2048, 512, 1024, 1074, 1),
]
GRAPH_ROWS = [
    (1024, 3, 4, 1),
    (1024, 32, 50, 1),
    (1024, 64, 100, 1),
    (1024, 128, 201, 1),
    (1024, 512, 805, 1),
    (2048, 128, 805, 1),
    (2048, 512, 3221, 1),
]

# totals of the published input-size sweep, GFLOPs
LIGHT_TOTALS = [(1024, 0.13), (512, 0.06), (256, 0.03), (128, 0.014)]
LIGHTER_TOTALS = [(1024, 0.04), (512, 0.017), (256, 0.008), (128, 0.004)]


def within_printed(computed_mega: float, printed: float, ulp: float) -> bool:
    """3% band around a printed value, widened by its print-rounding half-ulp."""
    return abs(computed_mega - printed) <= 0.03 * printed + 0.5 * ulp


class TestDenseFormula:
    def test_exact_values(self):
        assert flops_dense(1024, 3, 32) == 131_072
        assert flops_dense(1024, 128, 256) == 33_816_576
        assert flops_dense(2048, 512, 1024) == 1_075_838_976

    @pytest.mark.parametrize("n,c_in,c_out,printed,ulp", DENSE_ROWS)
    def test_published_rows(self, n, c_in, c_out, printed, ulp):
        assert within_printed(flops_dense(n, c_in, c_out) / 1e6, printed, ulp)

    def test_invalid_dims(self):
        with pytest.raises(ValueError):
            flops_dense(0, 3, 32)


class TestGraphFormula:
    def test_fit_against_all_published_rows(self):
        # the generator behind the published graph numbers: per point pair,
        # c subtractions + c squarings + (c-1) additions over n^2 pairs
        for n, c, printed, ulp in GRAPH_ROWS:
            computed = n * n * (3 * c - 1) / 2
            assert within_printed(computed / 1e6, printed, ulp), (n, c)
            assert flops_graph(n, c) == computed

    def test_exact_values(self):
        assert flops_graph(1024, 3) == 4_194_304
        assert flops_graph(1024, 128) == 200_802_304
        assert flops_graph(2048, 512) == 3_219_128_320

    def test_tight_fit_above_print_noise(self):
        # away from single-digit printouts the fit is sub-half-percent
        for n, c, printed, _ in GRAPH_ROWS[1:]:
            assert abs(flops_graph(n, c) / 1e6 - printed) / printed < 0.005


class TestModelTotals:
    @pytest.mark.parametrize("n,target", LIGHT_TOTALS)
    def test_light_sweep(self, n, target):
        total = analyze_model(preset_light(), n_points=n).total_flops
        assert abs(total / 1e9 - target) <= 0.10 * target

    @pytest.mark.parametrize("n,target", LIGHTER_TOTALS)
    def test_lighter_sweep(self, n, target):
        total = analyze_model(preset_lighter(), n_points=n).total_flops
        assert abs(total / 1e9 - target) <= 0.10 * target

    def test_light_parameter_count_near_published(self):
        report = analyze_model(preset_light(num_classes=40))
        assert 100_000 <= report.total_parameters <= 140_000
        assert report.model_size_bytes == report.total_parameters * 4

    def test_total_is_sum_of_entries(self):
        report = analyze_model(preset_light())
        assert report.total_flops == sum(e.flops for e in report.entries)
        assert all(e.flops >= 0 for e in report.entries)

    def test_parameter_count_matches_model(self):
        from mlgcn.blocks import init_model

        for preset in (preset_light, preset_lighter):
            config = preset(num_classes=11, num_parts=4)
            assert analyze_model(config).total_parameters == \
                init_model(config, seed=0).parameter_count()

    def test_scaling_mix(self):
        config = preset_light()
        small = analyze_model(config, n_points=512)
        large = analyze_model(config, n_points=1024)
        for s, l in zip(small.entries, large.entries):
            assert s.op == l.op
            if s.kind == "graph":
                assert l.flops == 4 * s.flops
            elif s.kind == "dense":
                assert l.flops == 2 * s.flops
            else:  # classifier head runs on the pooled vector, size-free
                assert l.flops == s.flops


class TestSharedVsRecomputed:
    def test_recomputed_graph_cost_strictly_higher(self):
        shared, rebuilt = compare_shared_vs_recomputed(preset_light())
        assert graph_flops_total(rebuilt) > graph_flops_total(shared)

    def test_k0_only_config_identical(self):
        config = ModelConfig(64, [make_gnn_block(0, 3, [8, 16])], 12, [8], 5)
        shared, rebuilt = compare_shared_vs_recomputed(config)
        assert shared.total_flops == rebuilt.total_flops
        assert graph_flops_total(shared) == 0

    def test_hand_sum_for_32_128_chain(self):
        # rebuild before each step prices the step's input width: 3 then 35
        config = ModelConfig(1024, [make_gnn_block(63, 3, [32, 128])], 256, [64], 40)
        _, rebuilt = compare_shared_vs_recomputed(config)
        expected = flops_graph(1024, 3) + flops_graph(1024, 35)
        assert graph_flops_total(rebuilt) == expected
        assert flops_graph(1024, 35) == 54_525_952


class TestReportOutput:
    def test_text_table_mentions_totals(self):
        text = format_cost_table(analyze_model(preset_lighter()))
        assert "total:" in text
        assert "parameters:" in text
        assert "x 100 MFLOPs" in text

    def test_csv_format(self, tmp_path):
        report = analyze_model(preset_lighter())
        write_cost_csv(tmp_path / "cost.csv", report)
        lines = (tmp_path / "cost.csv").read_text().strip().splitlines()
        assert lines[0] == "op,shape,flops"
        assert lines[-1].startswith("total,")
        assert int(lines[-1].split(",")[2]) == report.total_flops
