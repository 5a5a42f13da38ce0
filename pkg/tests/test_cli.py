import json
import logging
import subprocess
import sys

import numpy as np
import pytest

from conftest import FIXTURE_DIR
from qonnx_kit import cli, serde, zoo
from qonnx_kit.errors import EXIT_CODES, EXIT_INTERNAL, EXIT_IO, EXIT_OK, EXIT_UNSUPPORTED, EXIT_VALIDATION
from qonnx_kit.executor import execute, random_inputs
from qonnx_kit.ir import TensorValue
from qonnx_kit.lowering import lower_to_qcdq
from qonnx_kit.passes import cleanup


def fixture(name):
    return str(FIXTURE_DIR / f"{name}.onnx")


def run(*argv):
    return cli.main(list(argv))


# ---------------------------------------------------------------- exit codes


def test_exit_0_validate(capsys):
    assert run("validate", fixture("minimal_quant")) == EXIT_OK
    assert "OK" in capsys.readouterr().out


def test_exit_1_invalid_model(tmp_path, capsys):
    m = zoo.minimal_quant()
    g = m.graph
    bad_scale = {**g.initializers, g.nodes[0].inputs[1]: TensorValue(np.float32(-1.0))}
    path = tmp_path / "bad.onnx"
    serde.save_model(m.with_graph(type(g)(g.nodes, g.inputs, g.outputs, bad_scale, g.value_info, g.name)), path)
    assert run("validate", str(path)) == EXIT_VALIDATION
    assert "scale" in capsys.readouterr().out


def test_exit_1_bad_arguments(capsys):
    assert run("no-such-command", fixture("minimal_quant")) == EXIT_VALIDATION
    assert run("clean", fixture("minimal_quant")) == EXIT_VALIDATION  # --out missing
    assert "E_ARG" in capsys.readouterr().err


def test_exit_2_missing_file(tmp_path):
    assert run("validate", str(tmp_path / "absent.onnx")) == EXIT_IO


def test_exit_2_garbage_file(tmp_path):
    path = tmp_path / "junk.onnx"
    path.write_bytes(b"\xff\x00not a protobuf\x07")
    assert run("stats", str(path)) == EXIT_IO


def test_exit_3_bit_width(tmp_path, capsys):
    assert run("lower-qcdq", fixture("quant_b9"), "--out", str(tmp_path / "o.onnx")) == EXIT_UNSUPPORTED
    err = capsys.readouterr().err
    assert "E_BITWIDTH" in err and "<= 8" in err
    assert not (tmp_path / "o.onnx").exists()


@pytest.mark.parametrize("name,code", [("dynamic_scale", "E_DYNAMIC_PARAM"),
                                       ("per_channel_bit_width", "E_PER_CHANNEL_BITWIDTH"),
                                       ("tfc_w1a1", "E_UNSUPPORTED")])
def test_exit_3_other_lowering_limits(tmp_path, capsys, name, code):
    assert run("lower-qcdq", fixture(name), "--out", str(tmp_path / "o.onnx")) == EXIT_UNSUPPORTED
    assert code in capsys.readouterr().err


def test_exit_4_internal(monkeypatch, capsys):
    def boom(model):
        raise RuntimeError("kaboom")

    monkeypatch.setattr(cli, "model_stats", boom)
    assert run("stats", fixture("tfc_w1a1")) == EXIT_INTERNAL
    assert "kaboom" in capsys.readouterr().err


def test_every_error_code_maps_to_a_documented_exit():
    assert set(EXIT_CODES.values()) <= {EXIT_VALIDATION, EXIT_IO, EXIT_UNSUPPORTED}


# ---------------------------------------------------------------- subcommands


def test_exec_writes_tensor_protos(tmp_path):
    m = zoo.tfc(2, 2)
    x = random_inputs(m, 5)["x"]
    serde.save_tensor(x, tmp_path / "x.pb", "x")
    out = tmp_path / "out"
    assert run("exec", fixture("tfc_w2a2"), "--input", str(tmp_path / "x.pb"), "--output-dir", str(out)) == 0
    name, y = serde.load_tensor(out / "y.pb")
    assert name == "y"
    assert y == execute(m, {"x": x})["y"]


def test_exec_multiple_inputs_in_order(tmp_path):
    m = zoo.trunc_avgpool()
    inputs = random_inputs(m, 2, low=-100, high=100)
    paths = []
    for i, vi in enumerate(m.graph.runtime_inputs):
        paths += ["--input", str(tmp_path / f"in{i}.pb")]
        serde.save_tensor(inputs[vi.name], tmp_path / f"in{i}.pb")
    assert run("exec", fixture("trunc_avgpool"), *paths, "--output-dir", str(tmp_path)) == 0
    assert serde.load_tensor(tmp_path / "y.pb")[1] == execute(m, inputs)["y"]


def test_exec_wrong_input_count(tmp_path):
    serde.save_tensor(TensorValue(np.zeros((1, 16), np.float32)), tmp_path / "a.pb")
    assert run("exec", fixture("trunc_avgpool"), "--input", str(tmp_path / "a.pb")) == EXIT_VALIDATION


def test_exec_seeded(tmp_path):
    assert run("exec", fixture("cnv_like"), "--seed", "3", "--output-dir", str(tmp_path)) == 0
    m = zoo.cnv_like()
    assert serde.load_tensor(tmp_path / "y.pb")[1] == execute(m, random_inputs(m, 3))["y"]


def test_stats_human(capsys):
    assert run("stats", fixture("tfc_w1a1")) == 0
    assert "59,008" in capsys.readouterr().out


def test_stats_machine(capsys):
    assert run("stats", fixture("tfc_w2a2"), "--format", "machine") == 0
    records = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    totals = records[-1]
    assert totals["record"] == "totals"
    assert totals["total_macs"] == 59_008 and totals["total_weight_bits"] == 118_016


@pytest.mark.parametrize("cmd,extra", [("clean", []), ("channels-last", []),
                                       ("channels-last", ["--change-io-layout"]), ("lower-qcdq", [])])
def test_transforms_with_equivalence_check(tmp_path, capsys, cmd, extra):
    out = tmp_path / "o.onnx"
    assert run(cmd, fixture("cnv_like_clean"), "--out", str(out), "--seed", "1", *extra) == 0
    text = capsys.readouterr().out
    assert "rewrite" in text and "equivalence check passed" in text
    serde.load_model(out)


def test_lower_with_bipolar_flag(tmp_path):
    out = tmp_path / "o.onnx"
    assert run("lower-qcdq", fixture("tfc_w1a1"), "--allow-bipolar", "--out", str(out), "--seed", "0") == 0


def test_raise_qonnx(tmp_path):
    out = tmp_path / "o.onnx"
    assert run("raise-qonnx", fixture("tfc_w2a2_qcdq"), "--out", str(out), "--seed", "0") == 0
    assert sum(n.op_type == "Quant" for n in serde.load_model(out).graph.nodes) == 8


def test_piping_equals_in_process(tmp_path):
    clean_path, low_path = tmp_path / "clean.onnx", tmp_path / "low.onnx"
    assert run("clean", fixture("cnv_like"), "--out", str(clean_path)) == 0
    assert run("lower-qcdq", str(clean_path), "--out", str(low_path)) == 0
    in_process = lower_to_qcdq(cleanup(serde.load_model(fixture("cnv_like")))[0])[0]
    assert serde.load_model(low_path) == serde.parse_model(serde.serialize_model(in_process))


def test_console_script_and_log_env(tmp_path):
    env = {"QONNX_KIT_LOG": "debug", "PATH": "/usr/bin:/bin"}
    proc = subprocess.run([sys.executable, "-m", "qonnx_kit.cli", "stats", fixture("shape_chain")],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert "fc" in proc.stdout
    assert "DEBUG" in proc.stderr or "INFO" in proc.stderr


def test_log_env_levels(monkeypatch):
    monkeypatch.setenv("QONNX_KIT_LOG", "error")
    root = logging.getLogger()
    saved = root.handlers[:], root.level
    root.handlers.clear()
    try:
        cli._configure_logging()
        assert root.level == logging.ERROR
    finally:
        root.handlers[:], _ = saved
        root.setLevel(saved[1])
