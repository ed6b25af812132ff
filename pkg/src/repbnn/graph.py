"""Typed network IR: nodes, graphs, validation, and shape inference.

Dims flow through the graph as NCHW 4-tuples; ``Flatten`` folds spatial
extent into the channel slot as ``(n, c*h*w, 1, 1)`` so every rule stays
rank-4.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter

from .errors import CycleDetected, ShapeMismatch, ValidationError
from .tensors import ConvSpec, Dims

CONV_KINDS = ("Conv", "Bconv", "RepConv", "RepBconv")
REP_KINDS = ("RepConv", "RepBconv")
BINARY_CONV_KINDS = ("Bconv", "RepBconv")
POOL_KINDS = ("AvgPool", "MaxPool")

# canonical attribute order per kind; every attr is an integer
NODE_SCHEMA: dict[str, tuple[str, ...]] = {
    "Input": (),
    "Conv": ("cin", "cout", "kh", "kw", "stride", "pad"),
    "Bconv": ("cin", "cout", "kh", "kw", "stride", "pad"),
    "RepConv": ("cin", "cout", "kh", "kw", "stride", "pad", "beta", "repeat"),
    "RepBconv": ("cin", "cout", "kh", "kw", "stride", "pad", "beta", "repeat"),
    "BatchNorm": ("channels", "shared_div"),
    "Sign": (),
    "ReLU": (),
    "PReLUShifted": ("channels",),
    "Add": (),
    "AvgPool": ("kernel", "stride", "pad"),
    "MaxPool": ("kernel", "stride", "pad"),
    "Repeat": ("times",),
    "FC": ("in_features", "out_features"),
    "Flatten": (),
}

_ATTR_DEFAULTS = {"beta": 1, "repeat": 1, "shared_div": 1, "pad": 0}

_ID_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    attrs: dict
    inputs: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in NODE_SCHEMA:
            raise ValidationError(f"unknown node kind {self.kind!r}")
        if not _ID_RE.match(self.id):
            raise ValidationError(f"invalid node id {self.id!r}")
        schema = NODE_SCHEMA[self.kind]
        attrs = dict(self.attrs)
        for key in schema:
            if key not in attrs:
                if key in _ATTR_DEFAULTS:
                    attrs[key] = _ATTR_DEFAULTS[key]
                elif self.kind in POOL_KINDS and key == "stride":
                    attrs[key] = attrs.get("kernel", 1)
                else:
                    raise ValidationError(f"node {self.id}: missing attr {key!r}")
        extra = set(attrs) - set(schema)
        if extra:
            raise ValidationError(f"node {self.id}: unknown attrs {sorted(extra)}")
        object.__setattr__(self, "attrs", {k: int(attrs[k]) for k in schema})
        object.__setattr__(self, "inputs", tuple(self.inputs))

    def with_(self, **changes) -> "Node":
        """Copy with replaced kind/attrs/inputs."""
        kind = changes.pop("kind", self.kind)
        inputs = changes.pop("inputs", self.inputs)
        attrs = dict(self.attrs)
        attrs.update(changes.pop("attrs", {}))
        if changes:
            raise TypeError(f"unexpected fields {sorted(changes)}")
        if kind != self.kind:
            attrs = {k: v for k, v in attrs.items() if k in NODE_SCHEMA[kind]}
        return Node(self.id, kind, attrs, inputs)


def conv_node(node_id: str, kind: str, spec: ConvSpec, inputs) -> Node:
    attrs = {
        "cin": spec.c_in, "cout": spec.c_out, "kh": spec.kh, "kw": spec.kw,
        "stride": spec.stride, "pad": spec.padding,
    }
    if kind in REP_KINDS:
        attrs["beta"] = spec.beta
        attrs["repeat"] = 1
    return Node(node_id, kind, attrs, tuple(inputs))


def conv_spec(node: Node) -> ConvSpec:
    if node.kind not in CONV_KINDS:
        raise ValidationError(f"node {node.id} ({node.kind}) is not a convolution")
    a = node.attrs
    return ConvSpec(
        c_in=a["cin"], c_out=a["cout"], kh=a["kh"], kw=a["kw"],
        stride=a["stride"], padding=a["pad"],
        beta=a.get("beta", 1), binary=node.kind in BINARY_CONV_KINDS,
    )


@dataclass
class Graph:
    """Immutable-by-convention DAG of typed layers.

    ``beta`` is graph metadata: 1 for an untransformed network, the shared
    replication factor afterwards.  ``meta`` holds free-form string pairs
    (default input dims, transform settings).
    """

    name: str
    nodes: dict[str, Node]
    beta: int = 1
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def outputs(self) -> tuple[str, ...]:
        consumed = {i for n in self.nodes.values() for i in n.inputs}
        return tuple(i for i in self.nodes if i not in consumed)

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise ValidationError(f"no node with id {node_id!r}") from None

    def consumers(self, node_id: str) -> list[Node]:
        return [n for n in self.nodes.values() if node_id in n.inputs]

    def topo_order(self) -> list[str]:
        ts = TopologicalSorter({i: list(n.inputs) for i, n in self.nodes.items()})
        try:
            order = list(ts.static_order())
        except CycleError as e:
            raise CycleDetected(f"graph {self.name!r} has a cycle: {e.args[1]}") from None
        return [i for i in order if i in self.nodes]

    def validate(self) -> None:
        """Raise ValidationError listing every violated structural invariant."""
        problems = []
        inputs = [n for n in self.nodes.values() if n.kind == "Input"]
        if len(inputs) != 1:
            problems.append(f"expected exactly one Input node, found {len(inputs)}")
        for n in self.nodes.values():
            if n.kind != "Input" and not n.inputs:
                problems.append(f"node {n.id}: no inputs")
            if n.kind == "Input" and n.inputs:
                problems.append(f"node {n.id}: Input must not have inputs")
            for ref in n.inputs:
                if ref not in self.nodes:
                    problems.append(f"node {n.id}: unresolved input {ref!r}")
            if n.kind == "Add" and len(n.inputs) < 2:
                problems.append(f"node {n.id}: Add needs at least two inputs")
            if n.kind == "Repeat" and n.attrs["times"] < 1:
                problems.append(f"node {n.id}: Repeat.times must be >= 1")
            if n.kind in CONV_KINDS:
                try:
                    conv_spec(n)
                except Exception as e:  # surfaced as one problem line
                    problems.append(f"node {n.id}: {e}")
        if self.beta < 1:
            problems.append(f"graph beta must be >= 1, got {self.beta}")
        if not problems:
            try:
                self.topo_order()
            except CycleDetected as e:
                problems.append(str(e))
        if not self.outputs and self.nodes:
            problems.append("graph has no output (sink) node")
        if problems:
            raise ValidationError(problems)

    def default_input_dims(self) -> Dims:
        raw = self.meta.get("input_dims")
        if not raw:
            raise ValidationError("graph carries no input_dims metadata")
        parts = tuple(int(p) for p in raw.split(","))
        if len(parts) != 4:
            raise ValidationError(f"bad input_dims metadata {raw!r}")
        return parts

    def structurally_equal(self, other: "Graph") -> bool:
        return (
            self.name == other.name
            and self.beta == other.beta
            and self.meta == other.meta
            and set(self.nodes) == set(other.nodes)
            and all(
                self.nodes[i].kind == other.nodes[i].kind
                and self.nodes[i].attrs == other.nodes[i].attrs
                and self.nodes[i].inputs == other.nodes[i].inputs
                for i in self.nodes
            )
        )


def _pool_out(h, w, k, s, p):
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    return oh, ow


def infer_shapes(g: Graph, input_dims) -> dict[str, Dims]:
    """Annotate every node with its output dims.

    Errors pinpoint the first node (in topological order) whose inputs are
    inconsistent with its attributes.
    """
    input_dims = tuple(int(d) for d in input_dims)
    if len(input_dims) != 4:
        raise ShapeMismatch(f"input dims must be rank 4, got {input_dims}")
    shapes: dict[str, Dims] = {}

    def fail(node, msg):
        raise ShapeMismatch(f"node {node.id} ({node.kind}): {msg}")

    for nid in g.topo_order():
        node = g.nodes[nid]
        ins = [shapes[i] for i in node.inputs]
        kind = node.kind
        if kind == "Input":
            shapes[nid] = input_dims
            continue
        if not ins:
            fail(node, "no inputs")
        n, c, h, w = ins[0]
        if kind in CONV_KINDS:
            spec = conv_spec(node)
            if c != spec.in_channels:
                fail(node, f"got {c} channels, expected {spec.in_channels}")
            oh, ow = spec.out_hw(h, w)
            cout = spec.out_channels if node.attrs.get("repeat", 1) else spec.conv_out_channels
            shapes[nid] = (n, cout, oh, ow)
        elif kind == "BatchNorm":
            if c != node.attrs["channels"]:
                fail(node, f"got {c} channels, expected {node.attrs['channels']}")
            shapes[nid] = ins[0]
        elif kind in ("Sign", "ReLU"):
            shapes[nid] = ins[0]
        elif kind == "PReLUShifted":
            if c != node.attrs["channels"]:
                fail(node, f"got {c} channels, expected {node.attrs['channels']}")
            shapes[nid] = ins[0]
        elif kind == "Add":
            for other in ins[1:]:
                if other != ins[0]:
                    fail(node, f"mismatched input dims {ins[0]} vs {other}")
            shapes[nid] = ins[0]
        elif kind in POOL_KINDS:
            k, s, p = node.attrs["kernel"], node.attrs["stride"], node.attrs["pad"]
            oh, ow = _pool_out(h, w, k, s, p)
            if oh < 1 or ow < 1:
                fail(node, f"pool kernel {k} does not fit {h}x{w}")
            shapes[nid] = (n, c, oh, ow)
        elif kind == "Repeat":
            shapes[nid] = (n, c * node.attrs["times"], h, w)
        elif kind == "Flatten":
            shapes[nid] = (n, c * h * w, 1, 1)
        elif kind == "FC":
            if (h, w) != (1, 1):
                fail(node, f"expects flattened input, got spatial {h}x{w}")
            need = node.attrs["in_features"]
            if c < need:
                fail(node, f"got {c} features, needs at least {need}")
            shapes[nid] = (n, node.attrs["out_features"], 1, 1)
        else:  # pragma: no cover - schema keeps kinds closed
            fail(node, "no shape rule")
    return shapes


def first_conv_id(g: Graph) -> str:
    """Id of the network's first convolution layer in topological order."""
    for nid in g.topo_order():
        if g.nodes[nid].kind in CONV_KINDS:
            return nid
    raise ValidationError("graph contains no convolution node")
