"""Error types shared by every module of the toolkit.

Every error raised by the library is a :class:`QonnxError` carrying a stable
string ``code``. The CLI maps each code onto exactly one process exit status
via :data:`EXIT_CODES`.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_UNSUPPORTED = 3
EXIT_INTERNAL = 4

# code -> CLI exit status
EXIT_CODES: dict[str, int] = {
    # the model or the supplied inputs are malformed
    "E_CYCLE": EXIT_VALIDATION,
    "E_INVALID": EXIT_VALIDATION,
    "E_UNBOUND_INPUT": EXIT_VALIDATION,
    "E_SHAPE": EXIT_VALIDATION,
    "E_SHAPE_CONFLICT": EXIT_VALIDATION,
    "E_BROADCAST": EXIT_VALIDATION,
    "E_ARG": EXIT_VALIDATION,
    # reading or decoding files
    "E_IO": EXIT_IO,
    "E_DECODE": EXIT_IO,
    # well-formed but outside what the toolkit (or the target format) supports
    "E_UNSUPPORTED": EXIT_UNSUPPORTED,
    "E_UNSUPPORTED_OP": EXIT_UNSUPPORTED,
    "E_UNSUPPORTED_DTYPE": EXIT_UNSUPPORTED,
    "E_BITWIDTH": EXIT_UNSUPPORTED,
    "E_PER_CHANNEL_BITWIDTH": EXIT_UNSUPPORTED,
    "E_DYNAMIC_PARAM": EXIT_UNSUPPORTED,
    "E_ZERO_POINT": EXIT_UNSUPPORTED,
    "E_RANK": EXIT_UNSUPPORTED,
}


class QonnxError(Exception):
    code = "E_INVALID"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code
        if self.code not in EXIT_CODES:
            raise ValueError(f"unknown error code {self.code!r}")

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.code]

    def __str__(self) -> str:
        return f"{self.code}: {super().__str__()}"


class DecodeError(QonnxError):
    code = "E_DECODE"


class UnsupportedDTypeError(QonnxError):
    code = "E_UNSUPPORTED_DTYPE"


class CycleError(QonnxError):
    code = "E_CYCLE"


class BroadcastError(QonnxError):
    code = "E_BROADCAST"


class BitWidthError(QonnxError):
    code = "E_BITWIDTH"


class ShapeError(QonnxError):
    code = "E_SHAPE"


class ShapeConflictError(QonnxError):
    code = "E_SHAPE_CONFLICT"


class UnboundInputError(QonnxError):
    code = "E_UNBOUND_INPUT"


class UnsupportedOpError(QonnxError):
    code = "E_UNSUPPORTED_OP"


class UnsupportedError(QonnxError):
    code = "E_UNSUPPORTED"


class RankError(QonnxError):
    code = "E_RANK"


class ArgumentError(QonnxError):
    code = "E_ARG"
