from fractions import Fraction

import pytest

from repbnn.builders import build_reactnet_a, build_resnet20, build_toy_bnn
from repbnn.costmodel import bn_cost_factor, count, diff, format_table, format_tsv, sci
from repbnn.graph import Graph, Node
from repbnn.reptran import RepTranConfig, reptran


class TestBnCostFactor:
    def test_exact_rationals(self):
        assert bn_cost_factor(1) == 1
        assert bn_cost_factor(2) == Fraction(5, 4)
        assert bn_cost_factor(4) == Fraction(17, 8)
        assert bn_cost_factor(8) == Fraction(65, 16)

    def test_published_example(self):
        # 1.009e7 x 1.25 = 1.261e7
        assert sci(10085376 * bn_cost_factor(2), 7) == "1.261"

    def test_monotonic_in_beta(self):
        vals = [bn_cost_factor(b) for b in range(1, 12)]
        assert all(b > a for a, b in zip(vals, vals[1:]))


class TestCount:
    def test_empty_graph_all_zero(self):
        g = Graph(name="empty", nodes={"input": Node("input", "Input", {})})
        r = count(g, (1, 3, 8, 8))
        assert (r.flops, r.bops, r.params) == (0, 0, 0)
        assert r.ops_with_bn == 0

    def test_ops_identity_is_exact_rational(self):
        r = count(build_resnet20(binary=True), (1, 3, 32, 32))
        assert r.ops_without_bn == Fraction(r.fc_flops + r.conv_flops) + Fraction(r.bconv_bops, 64)
        assert r.ops_with_bn - r.ops_without_bn == r.bn_flops

    def test_per_node_rows_sum_to_totals(self):
        r = count(build_reactnet_a())
        assert sum(row.flops for row in r.per_node) == r.flops
        assert sum(row.bops for row in r.per_node) == r.bops
        assert sum(row.params for row in r.per_node) == r.params
        assert sum(row.elementwise for row in r.per_node) == r.elementwise_flops
        assert sum(row.memory_elems for row in r.per_node) == r.repeat_memory_elems

    def test_elementwise_excluded_from_headline(self):
        r = count(build_reactnet_a())
        assert r.elementwise_flops > 0
        assert r.ops_without_bn == Fraction(r.fc_flops + r.conv_flops) + Fraction(r.bops, 64)

    def test_repeat_costs_memory_not_compute(self):
        g = build_resnet20(binary=True)
        r = count(g)
        rep_rows = [row for row in r.per_node if row.kind == "Repeat"]
        assert rep_rows and all(row.flops == 0 and row.bops == 0 for row in rep_rows)
        assert all(row.memory_elems > 0 for row in rep_rows)

    def test_batch_scaling(self):
        g = build_toy_bnn()
        r1 = count(g, (1, 3, 8, 8))
        r4 = count(g, (4, 3, 8, 8))
        assert r4.conv_flops == 4 * r1.conv_flops
        assert r4.bconv_bops == 4 * r1.bconv_bops
        assert r4.params == r1.params

    def test_shared_div_reduces_bn_cost(self):
        nodes = {
            "input": Node("input", "Input", {}),
            "bn": Node("bn", "BatchNorm", {"channels": 8, "shared_div": 4}, ("input",)),
        }
        r = count(Graph(name="bn", nodes=nodes), (1, 8, 4, 4))
        elems = 8 * 16
        assert r.bn_flops == Fraction(elems, 4) + elems


class TestTransformAccounting:
    def test_bn_total_scales_by_factor_exactly(self):
        for beta in (2, 4, 8):
            g = build_resnet20(binary=True)
            t = reptran(g, RepTranConfig(beta=beta))
            assert count(t).bn_flops == count(g).bn_flops * bn_cost_factor(beta)

    def test_only_fc_changes_outside_bn(self):
        g = build_resnet20(binary=True)
        t = reptran(g, RepTranConfig(beta=2))
        d = diff(count(g), count(t))
        assert d.conv_flops == 0 and d.bconv_bops == 0
        assert d.ops_without_bn == d.fc_flops

    def test_resnet_delta_is_640(self):
        g = build_resnet20(binary=True)
        t = reptran(g, RepTranConfig(beta=2))
        d = diff(count(g), count(t))
        assert d.ops_without_bn == 640

    def test_identical_reports_zero_delta(self):
        r = count(build_toy_bnn())
        d = diff(r, r)
        assert d.fc_flops == d.conv_flops == d.bn_flops == d.bconv_bops == 0
        assert d.ops_with_bn == 0 and d.params == 0


class TestRendering:
    def test_sci(self):
        assert sci(10838016, 7) == "1.084"
        assert sci(4816896000, 9) == "4.817"
        assert sci(Fraction(87126016), 8) == "0.871"

    def test_table_contains_totals(self):
        text = format_table(count(build_toy_bnn()))
        assert "OPs without BN" in text and "params" in text
        assert "stem" in text

    def test_tsv_rows(self):
        text = format_tsv(count(build_toy_bnn()))
        lines = text.strip().splitlines()
        row = next(l for l in lines if l.startswith("stem\t"))
        node_id, kind, flops, bops, params = row.split("\t")
        assert kind == "Conv" and int(flops) > 0 and int(bops) == 0
        assert any(l.startswith("total\tops_without_bn\t") for l in lines)

    def test_factor_rejects_nonpositive(self):
        with pytest.raises(Exception):
            bn_cost_factor(0)
