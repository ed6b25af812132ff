"""Reference network topologies used as fixtures throughout the toolkit.

The binary networks follow the common CIFAR/ImageNet BNN layouts: a
full-precision stem, sign+binary-conv+batch-norm units with a residual
bypass per conv layer, and a full-precision classifier head.  Downsampling
bypasses in the binary variants are parameter free (stride-2 average pool
plus channel duplication), which is what the published operation counts for
these networks assume; a pooled 1x1 full-precision projection is available
as an option.
"""

from __future__ import annotations

from .errors import ValidationError
from .graph import Graph, Node, conv_node
from .tensors import ConvSpec

# MobileNet-shaped stage widths for the binary ImageNet fixture
_REACTNET_STAGES = [32, 64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024]


def _bn(nid, channels, src):
    return Node(nid, "BatchNorm", {"channels": channels}, (src,))


def build_resnet20(binary: bool = True, *, num_classes: int = 10,
                   shortcut: str | None = None) -> Graph:
    """CIFAR-style 20-layer residual network, float or binarized.

    Binary blocks carry one residual bypass per conv layer; float blocks are
    the plain two-conv kind.  ``shortcut`` selects the downsampling bypass:
    ``"repeat"`` (avg pool + channel duplication, default for binary) or
    ``"conv"`` (avg pool + full-precision 1x1 conv, default for float).
    """
    if shortcut is None:
        shortcut = "repeat" if binary else "conv"
    if shortcut not in ("repeat", "conv"):
        raise ValidationError(f"unknown shortcut style {shortcut!r}")

    nodes: dict[str, Node] = {"input": Node("input", "Input", {})}

    def add(node: Node) -> str:
        nodes[node.id] = node
        return node.id

    add(conv_node("stem", "Conv", ConvSpec(3, 16, 3, 3, 1, 1), ("input",)))
    add(_bn("stem_bn", 16, "stem"))
    prev, prev_c = "stem_bn", 16
    if not binary:
        prev = add(Node("stem_relu", "ReLU", {}, (prev,)))

    def bypass(tag: str, src: str, c_in: int, c_out: int, stride: int) -> str:
        if stride == 1 and c_in == c_out:
            return src
        pool = add(Node(f"{tag}_down_pool", "AvgPool",
                        {"kernel": 2, "stride": 2}, (src,)))
        if shortcut == "repeat":
            return add(Node(f"{tag}_down_rep", "Repeat",
                            {"times": c_out // c_in}, (pool,)))
        return add(conv_node(f"{tag}_down_conv", "Conv",
                             ConvSpec(c_in, c_out, 1, 1, 1, 0), (pool,)))

    def binary_unit(tag: str, src: str, c_in: int, c_out: int, stride: int) -> str:
        sign = add(Node(f"{tag}_sign", "Sign", {}, (src,)))
        conv = add(conv_node(tag, "Bconv",
                             ConvSpec(c_in, c_out, 3, 3, stride, 1, binary=True),
                             (sign,)))
        bn = add(_bn(f"{tag}_bn", c_out, conv))
        side = bypass(tag, src, c_in, c_out, stride)
        return add(Node(f"{tag}_add", "Add", {}, (bn, side)))

    def float_block(tag: str, src: str, c_in: int, c_out: int, stride: int) -> str:
        c1 = add(conv_node(f"{tag}_c1", "Conv",
                           ConvSpec(c_in, c_out, 3, 3, stride, 1), (src,)))
        b1 = add(_bn(f"{tag}_c1_bn", c_out, c1))
        r1 = add(Node(f"{tag}_c1_relu", "ReLU", {}, (b1,)))
        c2 = add(conv_node(f"{tag}_c2", "Conv",
                           ConvSpec(c_out, c_out, 3, 3, 1, 1), (r1,)))
        b2 = add(_bn(f"{tag}_c2_bn", c_out, c2))
        side = bypass(tag, src, c_in, c_out, stride)
        s = add(Node(f"{tag}_add", "Add", {}, (b2, side)))
        return add(Node(f"{tag}_relu", "ReLU", {}, (s,)))

    for stage, channels in enumerate((16, 32, 64), start=1):
        for block in range(1, 4):
            stride = 2 if stage > 1 and block == 1 else 1
            tag = f"s{stage}b{block}"
            if binary:
                prev = binary_unit(f"{tag}_c1", prev, prev_c, channels, stride)
                prev = binary_unit(f"{tag}_c2", prev, channels, channels, 1)
            else:
                prev = float_block(tag, prev, prev_c, channels, stride)
            prev_c = channels

    add(Node("pool", "AvgPool", {"kernel": 8, "stride": 8}, (prev,)))
    add(Node("flat", "Flatten", {}, ("pool",)))
    add(Node("fc", "FC", {"in_features": 64, "out_features": num_classes}, ("flat",)))

    g = Graph(
        name="resnet20-binary" if binary else "resnet20-float",
        nodes=nodes,
        meta={"input_dims": "1,3,32,32"},
    )
    g.validate()
    return g


def build_reactnet_a() -> Graph:
    """MobileNet-shaped binary ImageNet network, the cost-model fixture.

    Channel-doubling blocks use a single widened 1x1 binary conv with a
    duplicated-channel bypass, which matches the published per-category
    operation counts of the duplicate-and-concatenate reduction blocks.
    """
    nodes: dict[str, Node] = {"input": Node("input", "Input", {})}

    def add(node: Node) -> str:
        nodes[node.id] = node
        return node.id

    add(conv_node("stem", "Conv", ConvSpec(3, 32, 3, 3, 2, 1), ("input",)))
    prev = add(_bn("stem_bn", 32, "stem"))

    for i in range(1, len(_REACTNET_STAGES)):
        c_in, c_out = _REACTNET_STAGES[i - 1], _REACTNET_STAGES[i]
        stride = 2 if (c_in != c_out and c_out != 64) else 1
        t = f"b{i:02d}"

        sign = add(Node(f"{t}_dw_sign", "Sign", {}, (prev,)))
        conv = add(conv_node(f"{t}_dw", "Bconv",
                             ConvSpec(c_in, c_in, 3, 3, stride, 1, binary=True),
                             (sign,)))
        bn = add(_bn(f"{t}_dw_bn", c_in, conv))
        side = prev
        if stride == 2:
            side = add(Node(f"{t}_dw_pool", "AvgPool",
                            {"kernel": 2, "stride": 2}, (prev,)))
        s = add(Node(f"{t}_dw_add", "Add", {}, (bn, side)))
        mid = add(Node(f"{t}_dw_act", "PReLUShifted", {"channels": c_in}, (s,)))

        sign2 = add(Node(f"{t}_pw_sign", "Sign", {}, (mid,)))
        conv2 = add(conv_node(f"{t}_pw", "Bconv",
                              ConvSpec(c_in, c_out, 1, 1, 1, 0, binary=True),
                              (sign2,)))
        bn2 = add(_bn(f"{t}_pw_bn", c_out, conv2))
        side2 = mid
        if c_in != c_out:
            side2 = add(Node(f"{t}_pw_rep", "Repeat",
                             {"times": c_out // c_in}, (mid,)))
        s2 = add(Node(f"{t}_pw_add", "Add", {}, (bn2, side2)))
        prev = add(Node(f"{t}_pw_act", "PReLUShifted", {"channels": c_out}, (s2,)))

    add(Node("pool", "AvgPool", {"kernel": 7, "stride": 7}, (prev,)))
    add(Node("flat", "Flatten", {}, ("pool",)))
    add(Node("fc", "FC", {"in_features": 1024, "out_features": 1000}, ("flat",)))

    g = Graph(name="reactnet-a", nodes=nodes, meta={"input_dims": "1,3,224,224"})
    g.validate()
    return g


def build_toy_bnn(blocks: int = 2, channels: int = 8, num_classes: int = 2,
                  image_dims: tuple[int, int, int] = (3, 8, 8),
                  residual: bool = True) -> Graph:
    """Small binarized net for tests and desk-scale training runs."""
    c_img, h, w = image_dims
    nodes: dict[str, Node] = {"input": Node("input", "Input", {})}

    def add(node: Node) -> str:
        nodes[node.id] = node
        return node.id

    add(conv_node("stem", "Conv", ConvSpec(c_img, channels, 3, 3, 1, 1), ("input",)))
    prev = add(_bn("stem_bn", channels, "stem"))

    for i in range(1, blocks + 1):
        t = f"blk{i}"
        sign = add(Node(f"{t}_sign", "Sign", {}, (prev,)))
        conv = add(conv_node(t, "Bconv",
                             ConvSpec(channels, channels, 3, 3, 1, 1, binary=True),
                             (sign,)))
        bn = add(_bn(f"{t}_bn", channels, conv))
        if residual:
            prev = add(Node(f"{t}_add", "Add", {}, (bn, prev)))
        else:
            prev = bn

    add(Node("pool", "AvgPool", {"kernel": h, "stride": h}, (prev,)))
    add(Node("flat", "Flatten", {}, ("pool",)))
    add(Node("fc", "FC", {"in_features": channels, "out_features": num_classes},
             ("flat",)))

    g = Graph(
        name=f"toy-bnn-{blocks}blk" + ("" if residual else "-nores"),
        nodes=nodes,
        meta={"input_dims": f"1,{c_img},{h},{w}"},
    )
    g.validate()
    return g
