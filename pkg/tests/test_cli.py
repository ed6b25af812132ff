import numpy as np

from repbnn.cli import run
from repbnn.model_text import parse_model
from repbnn.tensors import DenseTensor, dense_to_blob


def _run(capsys, *argv):
    code = run(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestBuild:
    def test_build_to_stdout(self, capsys):
        code, out, _ = _run(capsys, "build", "--arch", "resnet20", "--binary")
        assert code == 0
        g = parse_model(out)
        assert g.name == "resnet20-binary"

    def test_build_to_file(self, capsys, tmp_path):
        path = str(tmp_path / "m.txt")
        code, out, _ = _run(capsys, "build", "--arch", "reactnet-a", "--out", path)
        assert code == 0 and out == ""
        assert parse_model(open(path).read()).name == "reactnet-a"

    def test_unknown_arch_is_usage_error(self, capsys):
        code, _, err = _run(capsys, "build", "--arch", "vgg")
        assert code == 2


class TestPipeline:
    def test_build_transform_analyze(self, capsys, tmp_path):
        model = str(tmp_path / "model.txt")
        rep = str(tmp_path / "rep.txt")
        assert _run(capsys, "build", "--arch", "resnet20", "--binary", "--out", model)[0] == 0
        assert _run(capsys, "transform", "--in", model, "--beta", "2",
                    "--last-layer", "take-all", "--bn-position", "after",
                    "--out", rep)[0] == 0
        code, out, _ = _run(capsys, "analyze", "--in", rep, "--format", "table")
        assert code == 0
        assert "total OPs (without BN): 1070336" in out

    def test_analyze_tsv_and_dims_flag(self, capsys, tmp_path):
        model = str(tmp_path / "model.txt")
        _run(capsys, "build", "--arch", "resnet20", "--binary", "--out", model)
        code, out, _ = _run(capsys, "analyze", "--in", model,
                            "--input-dims", "1,3,32,32", "--format", "tsv")
        assert code == 0
        assert "total\tops_without_bn\t1069696" in out

    def test_analyze_with_bn(self, capsys, tmp_path):
        model = str(tmp_path / "model.txt")
        _run(capsys, "build", "--arch", "resnet20", "--binary", "--out", model)
        code, out, _ = _run(capsys, "analyze", "--in", model, "--with-bn")
        assert code == 0
        assert "total OPs (with BN):" in out

    def test_verify(self, capsys, tmp_path):
        model = str(tmp_path / "model.txt")
        rep = str(tmp_path / "rep.txt")
        _run(capsys, "build", "--arch", "resnet20", "--binary", "--out", model)
        _run(capsys, "transform", "--in", model, "--out", rep)
        code, out, _ = _run(capsys, "verify", "--before", model, "--after", rep)
        assert code == 0
        assert "conv parameter counts unchanged" in out

    def test_byte_identical_stdout(self, capsys, tmp_path):
        model = str(tmp_path / "model.txt")
        _run(capsys, "build", "--arch", "resnet20", "--binary", "--out", model)
        _, out1, _ = _run(capsys, "analyze", "--in", model)
        _, out2, _ = _run(capsys, "analyze", "--in", model)
        assert out1 == out2


class TestErrors:
    def test_non_divisible_beta_exits_one(self, capsys, tmp_path):
        model = str(tmp_path / "model.txt")
        _run(capsys, "build", "--arch", "resnet20", "--binary", "--out", model)
        code, _, err = _run(capsys, "transform", "--in", model, "--beta", "3")
        assert code == 1
        assert "does not divide" in err

    def test_missing_file_exits_one(self, capsys):
        code, _, err = _run(capsys, "analyze", "--in", "/no/such/model.txt")
        assert code == 1

    def test_unknown_flag_exits_two(self, capsys):
        code, _, _ = _run(capsys, "analyze", "--frobnicate")
        assert code == 2

    def test_parse_error_surfaced(self, capsys, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("input: Input()\nx: Blorp() <- input\n")
        code, _, err = _run(capsys, "analyze", "--in", str(bad))
        assert code == 1
        assert "unknown node kind" in err


class TestTrainAndDump:
    def test_train_and_dump_features(self, capsys, tmp_path):
        model = str(tmp_path / "toy.txt")
        rep = str(tmp_path / "toy_rep.txt")
        ckpt = str(tmp_path / "w.ckpt")
        outdir = str(tmp_path / "dumps")

        from repbnn.builders import build_toy_bnn
        from repbnn.model_text import emit_model

        with open(model, "w") as f:
            f.write(emit_model(build_toy_bnn()))
        assert _run(capsys, "transform", "--in", model, "--out", rep)[0] == 0

        code, out, err = _run(capsys, "train", "--in", rep, "--dataset", "blobs:n=96",
                              "--epochs", "2", "--seed", "1", "--deterministic",
                              "--out", ckpt)
        assert code == 0
        lines = out.strip().splitlines()
        assert len(lines) == 2
        epoch, loss, acc = lines[0].split("\t")
        assert epoch == "1" and float(loss) > 0 and 0 <= float(acc) <= 1

        blob = str(tmp_path / "probe.bin")
        probe = DenseTensor.from_array(
            np.random.default_rng(0).standard_normal((1, 3, 8, 8)).astype(np.float32))
        with open(blob, "wb") as f:
            f.write(dense_to_blob(probe))
        code, out, _ = _run(capsys, "dump-features", "--in", rep, "--weights", ckpt,
                            "--layer", "blk1", "--image", blob, "--out", outdir)
        assert code == 0
        assert len(out.strip().splitlines()) == 3

    def test_dump_unknown_layer_exits_one(self, capsys, tmp_path):
        from repbnn.builders import build_toy_bnn
        from repbnn.model_text import emit_model
        from repbnn.reptran import RepTranConfig, reptran
        from repbnn.trainer import GraphModule, save_checkpoint

        g = reptran(build_toy_bnn(), RepTranConfig(beta=2))
        rep = str(tmp_path / "rep.txt")
        with open(rep, "w") as f:
            f.write(emit_model(g))
        ckpt = str(tmp_path / "w.ckpt")
        save_checkpoint(GraphModule(g).named_arrays(), ckpt)
        blob = str(tmp_path / "probe.bin")
        with open(blob, "wb") as f:
            f.write(dense_to_blob(DenseTensor.zeros((1, 3, 8, 8))))
        code, _, err = _run(capsys, "dump-features", "--in", rep, "--weights", ckpt,
                            "--layer", "ghost", "--image", blob, "--out", str(tmp_path))
        assert code == 1
        assert "ghost" in err
