import pytest

from repbnn.builders import build_reactnet_a, build_resnet20, build_toy_bnn
from repbnn.errors import CycleDetected, ParseError, ShapeMismatch, ValidationError
from repbnn.graph import Graph, Node, conv_node, conv_spec, first_conv_id, infer_shapes
from repbnn.model_text import emit_model, parse_model
from repbnn.tensors import ConvSpec


def _linear_graph():
    nodes = {
        "input": Node("input", "Input", {}),
        "c1": conv_node("c1", "Conv", ConvSpec(3, 16, 3, 3, 1, 1), ("input",)),
        "bn": Node("bn", "BatchNorm", {"channels": 16}, ("c1",)),
    }
    return Graph(name="tiny", nodes=nodes, meta={"input_dims": "1,3,32,32"})


class TestShapeInference:
    def test_single_conv(self):
        g = _linear_graph()
        shapes = infer_shapes(g, (1, 3, 32, 32))
        assert shapes["c1"] == (1, 16, 32, 32)
        assert shapes["bn"] == (1, 16, 32, 32)

    def test_resnet20_end_to_end(self):
        g = build_resnet20(binary=True)
        shapes = infer_shapes(g, (1, 3, 32, 32))
        assert shapes["fc"] == (1, 10, 1, 1)
        assert shapes["pool"] == (1, 64, 1, 1)

    def test_add_mismatch_pinpoints_node(self):
        nodes = {
            "input": Node("input", "Input", {}),
            "a": conv_node("a", "Conv", ConvSpec(3, 8, 3, 3, 1, 1), ("input",)),
            "b": conv_node("b", "Conv", ConvSpec(3, 16, 3, 3, 1, 1), ("input",)),
            "sum": Node("sum", "Add", {}, ("a", "b")),
        }
        g = Graph(name="bad", nodes=nodes)
        with pytest.raises(ShapeMismatch, match="sum"):
            infer_shapes(g, (1, 3, 8, 8))

    def test_cycle_detected(self):
        nodes = {
            "input": Node("input", "Input", {}),
            "x": Node("x", "ReLU", {}, ("y",)),
            "y": Node("y", "ReLU", {}, ("x",)),
        }
        g = Graph(name="loop", nodes=nodes)
        with pytest.raises(CycleDetected):
            g.topo_order()

    def test_fc_needs_flat_input(self):
        nodes = {
            "input": Node("input", "Input", {}),
            "fc": Node("fc", "FC", {"in_features": 10, "out_features": 2}, ("input",)),
        }
        g = Graph(name="bad", nodes=nodes)
        with pytest.raises(ShapeMismatch, match="fc"):
            infer_shapes(g, (1, 10, 2, 2))

    def test_repeat_and_flatten(self):
        nodes = {
            "input": Node("input", "Input", {}),
            "rep": Node("rep", "Repeat", {"times": 3}, ("input",)),
            "flat": Node("flat", "Flatten", {}, ("rep",)),
        }
        g = Graph(name="r", nodes=nodes)
        shapes = infer_shapes(g, (2, 4, 5, 5))
        assert shapes["rep"] == (2, 12, 5, 5)
        assert shapes["flat"] == (2, 300, 1, 1)

    def test_conv_channel_mismatch(self):
        g = _linear_graph()
        with pytest.raises(ShapeMismatch, match="c1"):
            infer_shapes(g, (1, 4, 32, 32))


class TestValidation:
    def test_two_inputs_rejected(self):
        nodes = {
            "a": Node("a", "Input", {}),
            "b": Node("b", "Input", {}),
            "r": Node("r", "ReLU", {}, ("a",)),
        }
        with pytest.raises(ValidationError, match="exactly one Input"):
            Graph(name="x", nodes=nodes).validate()

    def test_unresolved_reference(self):
        nodes = {
            "input": Node("input", "Input", {}),
            "r": Node("r", "ReLU", {}, ("ghost",)),
        }
        with pytest.raises(ValidationError, match="ghost"):
            Graph(name="x", nodes=nodes).validate()

    def test_add_arity(self):
        nodes = {
            "input": Node("input", "Input", {}),
            "s": Node("s", "Add", {}, ("input",)),
        }
        with pytest.raises(ValidationError, match="two inputs"):
            Graph(name="x", nodes=nodes).validate()

    def test_unknown_kind_rejected_at_node_level(self):
        with pytest.raises(ValidationError, match="unknown node kind"):
            Node("n", "Softmax", {})

    def test_missing_attr(self):
        with pytest.raises(ValidationError, match="missing attr"):
            Node("n", "BatchNorm", {})

    def test_first_conv_id(self):
        assert first_conv_id(build_resnet20()) == "stem"

    def test_conv_spec_roundtrip(self):
        spec = ConvSpec(4, 8, 3, 3, stride=2, padding=1, beta=2, binary=True)
        node = conv_node("c", "RepBconv", spec, ("input",))
        assert conv_spec(node) == spec


class TestModelText:
    @pytest.mark.parametrize("build", [
        lambda: build_resnet20(binary=True),
        lambda: build_resnet20(binary=False),
        build_reactnet_a,
        build_toy_bnn,
    ])
    def test_roundtrip(self, build):
        g = build()
        assert parse_model(emit_model(g)).structurally_equal(g)

    def test_hand_written_fixture(self):
        text = """
        # three-node model
        name=fixture
        beta=1
        meta.input_dims=1,3,8,8
        input: Input()
        conv: Conv(cin=3, cout=4, kh=3, kw=3, stride=1, pad=1) <- input
        bn: BatchNorm(channels=4) <- conv
        """
        g = parse_model(text)
        assert g.name == "fixture"
        assert list(g.nodes) == ["input", "conv", "bn"]
        assert g.nodes["conv"].attrs == {"cin": 3, "cout": 4, "kh": 3, "kw": 3,
                                         "stride": 1, "pad": 1}
        assert g.nodes["bn"].inputs == ("conv",)
        assert g.outputs == ("bn",)

    def test_unknown_kind(self):
        with pytest.raises(ParseError, match="unknown node kind"):
            parse_model("input: Input()\nx: Gelu() <- input\n")

    def test_bad_attribute(self):
        with pytest.raises(ParseError, match="bad attribute"):
            parse_model("input: Input()\nr: Repeat(times=two) <- input\n")

    def test_trailing_garbage(self):
        with pytest.raises(ParseError):
            parse_model("input: Input() extra stuff\n")

    def test_duplicate_id(self):
        with pytest.raises(ParseError, match="duplicate"):
            parse_model("input: Input()\ninput: Input()\n")

    def test_header_after_nodes(self):
        with pytest.raises(ParseError, match="header after node"):
            parse_model("input: Input()\nname=late\n")

    def test_parse_error_carries_position(self):
        try:
            parse_model("input: Input()\n???\n")
        except ParseError as e:
            assert e.line == 2
        else:
            pytest.fail("expected ParseError")

    def test_forward_references_allowed(self):
        text = ("name=f\nbeta=1\n"
                "bn: BatchNorm(channels=4) <- conv\n"
                "conv: Conv(cin=3, cout=4, kh=1, kw=1, stride=1, pad=0) <- input\n"
                "input: Input()\n")
        g = parse_model(text)
        assert g.topo_order()[0] == "input"

    def test_invalid_graph_rejected_on_parse(self):
        with pytest.raises(ValidationError):
            parse_model("a: ReLU() <- a\n")
