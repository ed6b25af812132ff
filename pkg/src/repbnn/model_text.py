"""Line-oriented textual model format.

Grammar (one statement per line, ``#`` starts a comment):

    name=<string>
    beta=<int>
    meta.<key>=<string>
    <id>: <Kind>(<attr>=<int>, ...) [<- <id>, <id>, ...]

Headers may appear in any order before the first node line.  Node lines may
reference ids defined later; resolution happens at the end.  Anything else on
a line is rejected with its position.
"""

from __future__ import annotations

import re

from .errors import ParseError
from .graph import NODE_SCHEMA, Graph, Node

_NODE_RE = re.compile(
    r"^(?P<id>[A-Za-z_][A-Za-z0-9_]*)\s*:\s*(?P<kind>[A-Za-z]+)\s*"
    r"\((?P<attrs>[^)]*)\)\s*(?:<-\s*(?P<inputs>[A-Za-z0-9_,\s]*?))?\s*$"
)
_HEADER_RE = re.compile(r"^(?P<key>name|beta|meta\.[A-Za-z0-9_.-]+)=(?P<value>.*)$")
_ATTR_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(-?\d+)$")


def parse_model(text: str) -> Graph:
    """Parse model text into a validated Graph."""
    name = "model"
    beta = 1
    meta: dict[str, str] = {}
    nodes: dict[str, Node] = {}
    saw_node = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        header = _HEADER_RE.match(line)
        if header and not _NODE_RE.match(line):
            if saw_node:
                raise ParseError("header after node lines", lineno, 1)
            key, value = header.group("key"), header.group("value").strip()
            if key == "name":
                name = value
            elif key == "beta":
                try:
                    beta = int(value)
                except ValueError:
                    raise ParseError(f"beta must be an integer, got {value!r}",
                                     lineno, len(key) + 2) from None
            else:
                meta[key[len("meta."):]] = value
            continue
        m = _NODE_RE.match(line)
        if not m:
            raise ParseError(f"unparseable line {line!r}", lineno, 1)
        saw_node = True
        nid, kind = m.group("id"), m.group("kind")
        if nid in nodes:
            raise ParseError(f"duplicate node id {nid!r}", lineno, 1)
        if kind not in NODE_SCHEMA:
            raise ParseError(f"unknown node kind {kind!r}", lineno, line.index(kind) + 1)
        attrs = {}
        attr_text = m.group("attrs").strip()
        if attr_text:
            for part in attr_text.split(","):
                am = _ATTR_RE.match(part.strip())
                if not am:
                    raise ParseError(f"bad attribute {part.strip()!r}",
                                     lineno, line.index(part.strip()) + 1)
                attrs[am.group(1)] = int(am.group(2))
        inputs = ()
        if m.group("inputs") is not None:
            inputs = tuple(p.strip() for p in m.group("inputs").split(",") if p.strip())
            if not inputs:
                raise ParseError("empty input list after '<-'", lineno, len(line))
        try:
            nodes[nid] = Node(nid, kind, attrs, inputs)
        except Exception as e:
            raise ParseError(str(e), lineno, 1) from None

    g = Graph(name=name, nodes=nodes, beta=beta, meta=meta)
    g.validate()
    return g


def emit_model(g: Graph) -> str:
    """Render a graph in the textual format; inverse of parse_model."""
    g.validate()
    lines = [f"name={g.name}", f"beta={g.beta}"]
    for key in sorted(g.meta):
        lines.append(f"meta.{key}={g.meta[key]}")
    for nid in g.topo_order():
        node = g.nodes[nid]
        attrs = ", ".join(f"{k}={node.attrs[k]}" for k in NODE_SCHEMA[node.kind])
        line = f"{nid}: {node.kind}({attrs})"
        if node.inputs:
            line += " <- " + ", ".join(node.inputs)
        lines.append(line)
    return "\n".join(lines) + "\n"
