"""Reference toolkit for QONNX quantized neural network models."""

from qonnx_kit.errors import QonnxError
from qonnx_kit.ir import Graph, Model, NodeDef, TensorValue, ValueInfo
from qonnx_kit.serde import load_model, parse_model, save_model, serialize_model

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "Model",
    "NodeDef",
    "QonnxError",
    "TensorValue",
    "ValueInfo",
    "load_model",
    "parse_model",
    "save_model",
    "serialize_model",
]
