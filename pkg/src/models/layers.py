"""
Architecture descriptor notation.

Layers are written the way the architecture tables write them, one table row
per string, e.g. "Conv(*, 64, 5, 1, 2) + BN + ReLU" or
"FC1(4096, 128), FC2(4096, 128)". Conv arguments are (in, out, kernel, stride,
pad); '*' stands for the image channel count. parse_rows and render_rows
round-trip every row exactly.
"""
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

Arg = Union[int, float, str]

STAR = "*"
ROW_JOINERS = (" + ", ", ")
KNOWN_KINDS = ("Conv", "ConvT", "FC", "FC1", "FC2", "ReLU", "Sigmoid", "Dropout", "BN", "Softmax")

_TOKEN = re.compile(r"^(?P<kind>[A-Za-z][A-Za-z0-9]*)(?:\((?P<args>[^()]*)\))?$")

CLASSIFIER_ROWS = {
    "A": ["Conv(*, 64, 5, 1, 2)", "ReLU", "Conv(64, 64, 5, 2, 0)", "ReLU", "Dropout(0.25)", "FC(128)", "ReLU",
          "Dropout(0.5)", "FC(10) + Softmax"],
    "B": ["Dropout(0.2)", "Conv(*, 64, 8, 2, 5)", "ReLU", "Conv(64, 128, 6, 2, 0)", "ReLU",
          "Conv(128, 128, 5, 1, 0)", "ReLU", "Dropout(0.5)", "FC(10) + Softmax"],
    "C": ["Conv(*, 128, 3, 1, 1)", "ReLU", "Conv(128, 64, 5, 2, 0)", "ReLU", "Dropout(0.25)", "FC(128)", "ReLU",
          "Dropout(0.5)", "FC(10) + Softmax"],
    "D": ["FC(200)", "ReLU", "Dropout(0.5)", "FC(200)", "ReLU", "Dropout(0.25)", "FC(10) + Softmax"],
    "E": ["FC(200)", "ReLU", "FC(200)", "ReLU", "FC(10) + Softmax"],
}

VAE_ENCODER_ROWS = [
    "Conv(*, 64, 5, 1, 2) + BN + ReLU",
    "Conv(64, 64, 4, 2, 3) + BN + ReLU",
    "Conv(64, 128, 4, 2, 1) + BN + ReLU",
    "Conv(128, 256, 4, 2, 1) + BN + ReLU",
]
VAE_HEAD_ROW = "FC1(4096, 128), FC2(4096, 128)"
# The last row projects the 64 decoder channels back to the image channels.
VAE_DECODER_ROWS = [
    "FC(128, 4096) + ReLU",
    "ConvT(256, 128, 4, 2, 1) + BN + ReLU",
    "ConvT(128, 64, 4, 2, 1) + BN + ReLU",
    "ConvT(64, 64, 4, 2, 3) + BN + ReLU",
    "ConvT(64, 64, 5, 1, 2) + BN + ReLU",
    "Conv(64, *, 1, 1, 0) + Sigmoid",
]


class DescriptorError(ValueError):
    """A layer string does not follow the architecture notation."""


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer of an architecture row.

    Attributes:
        kind: layer kind, one of KNOWN_KINDS
        args: parsed arguments ('*' kept as a string)
        sep: joiner to the previous layer of the same row, None at a row start
    """
    kind: str
    args: Tuple[Arg, ...] = ()
    sep: Optional[str] = None

    def render(self) -> str:
        if not self.args and self.kind not in ("Conv", "ConvT", "FC", "FC1", "FC2", "Dropout"):
            return self.kind
        return f"{self.kind}({', '.join(_format_arg(a) for a in self.args)})"

    def with_args(self, *args: Arg) -> "LayerSpec":
        return LayerSpec(self.kind, tuple(args), self.sep)


def _format_arg(value: Arg) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_arg(text: str, row: str) -> Arg:
    text = text.strip()
    if text == STAR:
        return STAR
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise DescriptorError(f"Cannot parse argument '{text}' in '{row}'")


def _expected_arity(kind: str) -> Tuple[int, ...]:
    return {
        "Conv": (5,), "ConvT": (5,), "FC": (1, 2), "FC1": (2,), "FC2": (2,), "Dropout": (1,),
    }.get(kind, (0,))


def parse_layer(token: str, sep: Optional[str] = None, row: str = "") -> LayerSpec:
    match = _TOKEN.match(token.strip())
    if not match:
        raise DescriptorError(f"Malformed layer '{token}' in '{row or token}'")
    kind = match.group("kind")
    if kind not in KNOWN_KINDS:
        raise DescriptorError(f"Unknown layer kind '{kind}' in '{row or token}'")
    raw = match.group("args")
    args = tuple(_parse_arg(a, row or token) for a in raw.split(",")) if raw else ()
    if len(args) not in _expected_arity(kind):
        raise DescriptorError(f"{kind} takes {' or '.join(map(str, _expected_arity(kind)))} arguments, "
                              f"got {len(args)} in '{row or token}'")
    if kind == "Dropout" and not 0.0 <= float(args[0]) < 1.0:
        raise DescriptorError(f"Dropout probability must lie in [0, 1) in '{row or token}'")
    return LayerSpec(kind, args, sep)


def parse_row(row: str) -> List[LayerSpec]:
    """Split one table row on ' + ' and ', ' (outside parentheses) into LayerSpecs."""
    specs: List[LayerSpec] = []
    depth = 0
    start = 0
    sep: Optional[str] = None
    i = 0
    while i < len(row):
        char = row[i]
        if char == "(":
            depth += 1
        elif char == ")":
            depth -= 1
        elif depth == 0:
            joiner = next((j for j in ROW_JOINERS if row.startswith(j, i)), None)
            if joiner:
                specs.append(parse_layer(row[start:i], sep, row))
                sep = joiner
                i += len(joiner)
                start = i
                continue
        i += 1
    specs.append(parse_layer(row[start:], sep, row))
    return specs


def parse_rows(rows: Sequence[str]) -> List[LayerSpec]:
    specs: List[LayerSpec] = []
    for row in rows:
        specs.extend(parse_row(row))
    return specs


def render_rows(specs: Sequence[LayerSpec]) -> List[str]:
    """Render LayerSpecs back into table rows."""
    rows: List[str] = []
    for spec in specs:
        if spec.sep is None or not rows:
            rows.append(spec.render())
        else:
            rows[-1] += spec.sep + spec.render()
    return rows


def layer_kinds(specs: Sequence[LayerSpec]) -> List[str]:
    """Kinds with their arguments, e.g. ['FC(200)', 'ReLU', 'Dropout(0.5)']."""
    return [spec.render() for spec in specs]
