"""Regenerate the .onnx fixtures in this directory: ``python3 tests/fixtures/generate.py``."""

from pathlib import Path

from qonnx_kit import serde, zoo
from qonnx_kit.lowering import lower_to_qcdq
from qonnx_kit.passes import cleanup, to_channels_last

HERE = Path(__file__).parent


def derived() -> dict:
    clean, _ = cleanup(zoo.cnv_like())
    return {
        "cnv_like_clean": clean,
        "cnv_like_nhwc": to_channels_last(clean)[0],
        "tfc_w2a2_qcdq": lower_to_qcdq(zoo.tfc(2, 2))[0],
    }


def all_models() -> dict:
    models = {name: build() for name, build in zoo.FIXTURES.items()}
    models.update(derived())
    return models


def main() -> None:
    for name, model in all_models().items():
        serde.save_model(model, HERE / f"{name}.onnx")


if __name__ == "__main__":
    main()
