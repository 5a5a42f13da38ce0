"""Graph-to-graph transformations."""

from qonnx_kit.passes.base import PassReport
from qonnx_kit.passes.cleanup import cleanup
from qonnx_kit.passes.folding import fold_constants
from qonnx_kit.passes.layout import LAYOUT_METADATA_KEY, LayoutTag, layout_tags, to_channels_last
from qonnx_kit.passes.shapes import infer_shapes

__all__ = [
    "LAYOUT_METADATA_KEY",
    "LayoutTag",
    "PassReport",
    "cleanup",
    "fold_constants",
    "infer_shapes",
    "layout_tags",
    "to_channels_last",
]
