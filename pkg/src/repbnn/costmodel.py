"""Analytic per-node operation, parameter, and memory accounting.

Counting conventions (calibrated against the stem convolution of the
MobileNet-shaped fixture, 3->32 3x3/2 at 224x224 = 1.084e7):

* one multiply-accumulate = one FLOP; binary window ops likewise count
  multiply-accumulate positions, as BOPs;
* the combined metric is ``OPs = FLOPs + BOPs/64``, held exactly as a
  rational number;
* batch norm costs 2 FLOPs per output element (normalize + scale); when a
  norm layer follows channel replication the normalization half is shared
  across copies, dividing it by the node's ``shared_div``;
* elementwise nodes (Sign, ReLU, PReLUShifted, Add, pooling) are tracked
  per node but excluded from the headline OPs totals, which enumerate only
  FC/Conv/BN/Bconv;
* Repeat costs no compute; its output footprint is reported separately as
  activation memory.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import ShapeMismatch
from .graph import BINARY_CONV_KINDS, CONV_KINDS, Graph, conv_spec, infer_shapes

# elementwise FLOPs per element
_ELEMWISE_COST = {"Sign": 1, "ReLU": 1, "Add": 1, "PReLUShifted": 4}


@dataclass(frozen=True)
class NodeCost:
    node_id: str
    kind: str
    flops: Fraction      # headline floating-point ops (FC/Conv/BN)
    bops: int            # binary window ops (Bconv/RepBconv)
    params: int
    elementwise: int     # non-headline elementwise FLOPs
    memory_elems: int    # replication activation footprint


@dataclass(frozen=True)
class CostReport:
    graph_name: str
    input_dims: tuple
    per_node: tuple[NodeCost, ...]
    fc_flops: int
    conv_flops: int
    bn_flops: Fraction
    bconv_bops: int
    params: int
    elementwise_flops: int
    repeat_memory_elems: int

    @property
    def flops(self) -> Fraction:
        return self.fc_flops + self.conv_flops + self.bn_flops

    @property
    def bops(self) -> int:
        return self.bconv_bops

    @property
    def ops_without_bn(self) -> Fraction:
        return Fraction(self.fc_flops + self.conv_flops) + Fraction(self.bconv_bops, 64)

    @property
    def ops_with_bn(self) -> Fraction:
        return self.ops_without_bn + self.bn_flops


def bn_cost_factor(beta: int) -> Fraction:
    """Batch-norm cost multiplier under beta replication: 1/(2*beta) + beta/2."""
    if beta < 1:
        raise ShapeMismatch(f"beta must be >= 1, got {beta}")
    return Fraction(1, 2 * beta) + Fraction(beta, 2)


def count(g: Graph, input_dims=None) -> CostReport:
    """Single-pass analytic cost of every node at the given input dims."""
    if input_dims is None:
        input_dims = g.default_input_dims()
    shapes = infer_shapes(g, input_dims)

    rows = []
    fc = conv = bconv = params = elemwise = memory = 0
    bn = Fraction(0)
    for nid in g.topo_order():
        node = g.nodes[nid]
        kind = node.kind
        out = shapes[nid]
        n, c, h, w = out
        elems = n * c * h * w
        f = Fraction(0)
        b = p = e = m = 0
        if kind in CONV_KINDS:
            spec = conv_spec(node)
            # h, w here are already the conv's output extent
            macs = spec.conv_out_channels * spec.in_channels * spec.kh * spec.kw * n * h * w
            p = spec.params
            if kind in BINARY_CONV_KINDS:
                b = macs
                bconv += macs
            else:
                f = Fraction(macs)
                conv += macs
        elif kind == "FC":
            macs = n * node.attrs["in_features"] * node.attrs["out_features"]
            f = Fraction(macs)
            fc += macs
            p = node.attrs["in_features"] * node.attrs["out_features"] + node.attrs["out_features"]
        elif kind == "BatchNorm":
            f = Fraction(elems, node.attrs["shared_div"]) + elems
            bn += f
            p = 2 * node.attrs["channels"]
        elif kind in _ELEMWISE_COST:
            e = _ELEMWISE_COST[kind] * elems
            if kind == "PReLUShifted":
                p = 3 * node.attrs["channels"]
        elif kind in ("AvgPool", "MaxPool"):
            e = node.attrs["kernel"] ** 2 * elems
        elif kind == "Repeat":
            m = elems
        # Input, Flatten: free
        params += p
        elemwise += e
        memory += m
        rows.append(NodeCost(nid, kind, f, b, p, e, m))

    return CostReport(
        graph_name=g.name,
        input_dims=tuple(input_dims),
        per_node=tuple(rows),
        fc_flops=fc,
        conv_flops=conv,
        bn_flops=bn,
        bconv_bops=bconv,
        params=params,
        elementwise_flops=elemwise,
        repeat_memory_elems=memory,
    )


@dataclass(frozen=True)
class CostDelta:
    """Per-category differences between two reports (after minus before)."""

    fc_flops: int
    conv_flops: int
    bn_flops: Fraction
    bconv_bops: int
    params: int
    ops_without_bn: Fraction
    ops_with_bn: Fraction


def diff(before: CostReport, after: CostReport) -> CostDelta:
    return CostDelta(
        fc_flops=after.fc_flops - before.fc_flops,
        conv_flops=after.conv_flops - before.conv_flops,
        bn_flops=after.bn_flops - before.bn_flops,
        bconv_bops=after.bconv_bops - before.bconv_bops,
        params=after.params - before.params,
        ops_without_bn=after.ops_without_bn - before.ops_without_bn,
        ops_with_bn=after.ops_with_bn - before.ops_with_bn,
    )


def format_count(x) -> str:
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else f"{float(x):.3f}"
    return str(x)


def sci(x, exp: int) -> str:
    """Three-decimal scaled rendering, e.g. sci(10838016, 7) == '1.084'."""
    return f"{float(x) / 10 ** exp:.3f}"


def _summary_lines(r: CostReport) -> list[str]:
    return [
        f"FC FLOPs        {format_count(r.fc_flops):>14}  ({sci(r.fc_flops, 7)} x10^7)",
        f"Conv FLOPs      {format_count(r.conv_flops):>14}  ({sci(r.conv_flops, 7)} x10^7)",
        f"BN FLOPs        {format_count(r.bn_flops):>14}  ({sci(r.bn_flops, 7)} x10^7)",
        f"Bconv BOPs      {format_count(r.bconv_bops):>14}  ({sci(r.bconv_bops, 9)} x10^9)",
        f"OPs without BN  {format_count(r.ops_without_bn):>14}  ({sci(r.ops_without_bn, 8)} x10^8)",
        f"OPs with BN     {format_count(r.ops_with_bn):>14}  ({sci(r.ops_with_bn, 8)} x10^8)",
        f"elementwise     {format_count(r.elementwise_flops):>14}  (excluded from OPs)",
        f"repeat memory   {format_count(r.repeat_memory_elems):>14}  elements",
        f"params          {format_count(r.params):>14}",
    ]


def format_table(r: CostReport) -> str:
    """Human-readable fixed-width report."""
    header = f"{'node':<18}{'kind':<14}{'flops':>14}{'bops':>14}{'params':>10}{'elemwise':>12}{'mem':>10}"
    lines = [
        f"model {r.graph_name}  input {','.join(map(str, r.input_dims))}",
        header,
        "-" * len(header),
    ]
    for row in r.per_node:
        lines.append(
            f"{row.node_id:<18}{row.kind:<14}{format_count(row.flops):>14}"
            f"{row.bops:>14}{row.params:>10}{row.elementwise:>12}{row.memory_elems:>10}"
        )
    lines.append("-" * len(header))
    lines.extend(_summary_lines(r))
    return "\n".join(lines) + "\n"


def format_tsv(r: CostReport) -> str:
    """Machine-readable rows: node_id, kind, flops, bops, params; totals footer."""
    lines = []
    for row in r.per_node:
        lines.append(f"{row.node_id}\t{row.kind}\t{format_count(row.flops)}\t{row.bops}\t{row.params}")
    lines.append(f"total\tfc_flops\t{format_count(r.fc_flops)}")
    lines.append(f"total\tconv_flops\t{format_count(r.conv_flops)}")
    lines.append(f"total\tbn_flops\t{format_count(r.bn_flops)}")
    lines.append(f"total\tbconv_bops\t{format_count(r.bconv_bops)}")
    lines.append(f"total\tops_without_bn\t{format_count(r.ops_without_bn)}")
    lines.append(f"total\tops_with_bn\t{format_count(r.ops_with_bn)}")
    lines.append(f"total\tparams\t{format_count(r.params)}")
    return "\n".join(lines) + "\n"


def format_delta(d: CostDelta) -> str:
    return "\n".join([
        f"d_fc_flops      {format_count(d.fc_flops):>14}  ({sci(d.fc_flops, 7)} x10^7)",
        f"d_conv_flops    {format_count(d.conv_flops):>14}  ({sci(d.conv_flops, 7)} x10^7)",
        f"d_bn_flops      {format_count(d.bn_flops):>14}  ({sci(d.bn_flops, 7)} x10^7)",
        f"d_bconv_bops    {format_count(d.bconv_bops):>14}  ({sci(d.bconv_bops, 9)} x10^9)",
        f"d_ops_without_bn{format_count(d.ops_without_bn):>14}  ({sci(d.ops_without_bn, 8)} x10^8)",
        f"d_ops_with_bn   {format_count(d.ops_with_bn):>14}  ({sci(d.ops_with_bn, 8)} x10^8)",
        f"d_params        {format_count(d.params):>14}",
    ]) + "\n"
