"""
params.py

Flat parameter storage with named layer segments. A ParamVector carries the
live parameters, the EMA parameters and gradients; the vector operations here
are the only arithmetic the EMA policy needs.
"""
from typing import Dict, Iterable, Iterator, List, NamedTuple, Sequence, Tuple, Union

import numpy as np

from llaca.exceptions import IncompatibleLayoutError


class Segment(NamedTuple):
    """One named, contiguous slice of a ParamVector."""
    name: str
    offset: int
    length: int


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


class LayerView:
    """Read-only values of a single layer segment."""

    __slots__ = ("layer_name", "values")

    def __init__(self, layer_name: str, values: np.ndarray):
        self.layer_name = layer_name
        self.values = values

    def __len__(self) -> int:
        return self.values.shape[0]

    def __repr__(self) -> str:
        return f"LayerView({self.layer_name!r}, n={len(self)})"


class ParamVector:
    """
    Immutable flat vector of float64 values with a segment layout.

    Args:
        values: Flat sequence of real numbers
        layout: Ordered segments (name, offset, length) covering ``values``
    """

    __slots__ = ("_values", "_layout", "_index")

    def __init__(self, values, layout: Sequence[Tuple[str, int, int]]):
        self._values = _readonly(values)
        self._layout = tuple(Segment(str(n), int(o), int(l)) for n, o, l in layout)
        self._index = {}
        expected = 0
        for seg in self._layout:
            if seg.name in self._index:
                raise ValueError(f"Duplicate layer name '{seg.name}'")
            if seg.offset != expected or seg.length < 0:
                raise ValueError(f"Segment '{seg.name}' is not contiguous (offset {seg.offset}, expected {expected})")
            self._index[seg.name] = seg
            expected += seg.length
        if expected != self._values.shape[0]:
            raise ValueError(f"Layout covers {expected} values but vector has {self._values.shape[0]}")

    @classmethod
    def from_layers(cls, layers: Iterable[Tuple[str, Union[np.ndarray, Sequence[float]]]]) -> "ParamVector":
        """Build a vector by concatenating named arrays (each is flattened row-major)."""
        layout, chunks, offset = [], [], 0
        for name, arr in layers:
            flat = np.asarray(arr, dtype=np.float64).reshape(-1)
            layout.append((name, offset, flat.shape[0]))
            chunks.append(flat)
            offset += flat.shape[0]
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, layout)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def layout(self) -> Tuple[Segment, ...]:
        return self._layout

    @property
    def layer_names(self) -> List[str]:
        return [seg.name for seg in self._layout]

    def __len__(self) -> int:
        return self._values.shape[0]

    def __repr__(self) -> str:
        return f"ParamVector(n={len(self)}, layers={self.layer_names})"

    def is_compatible(self, other: "ParamVector") -> bool:
        return self._layout == other._layout

    def layer(self, name: str) -> LayerView:
        try:
            seg = self._index[name]
        except KeyError:
            raise KeyError(f"Unknown layer '{name}'") from None
        return LayerView(seg.name, self._values[seg.offset:seg.offset + seg.length])

    def layers(self) -> Iterator[LayerView]:
        for seg in self._layout:
            yield LayerView(seg.name, self._values[seg.offset:seg.offset + seg.length])

    def with_values(self, values) -> "ParamVector":
        """Same layout, new values."""
        return ParamVector(values, self._layout)

    def with_layers(self, replacements: Dict[str, np.ndarray]) -> "ParamVector":
        """Copy with the named segments replaced."""
        out = np.array(self._values, copy=True)
        for name, arr in replacements.items():
            seg = self._index[name]
            out[seg.offset:seg.offset + seg.length] = np.asarray(arr, dtype=np.float64).reshape(-1)
        return ParamVector(out, self._layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self._values, self._layout)

    def equals(self, other: "ParamVector") -> bool:
        """Bit-exact equality of layout and values."""
        return self.is_compatible(other) and np.array_equal(self._values, other._values)

    def to_dict(self) -> dict:
        return {
            "layout": [[seg.name, seg.offset, seg.length] for seg in self._layout],
            "values": self._values.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParamVector":
        return cls(data["values"], [tuple(seg) for seg in data["layout"]])


def _check(a: ParamVector, b: ParamVector) -> None:
    if not a.is_compatible(b):
        raise IncompatibleLayoutError(f"Layouts differ: {a.layer_names} vs {b.layer_names}")


def l1_norm(v) -> float:
    """
    Sum of absolute values of a layer view (or any array-like).

    Returns 0.0 for an empty view.
    """
    values = v.values if isinstance(v, (LayerView, ParamVector)) else np.asarray(v, dtype=np.float64)
    return float(np.sum(np.abs(values)))


def blend(a: ParamVector, b: ParamVector, beta: float) -> ParamVector:
    """
    EMA blend ``beta * a + (1 - beta) * b``.

    Args:
        a: Vector weighted by beta (the previous EMA parameters)
        b: Vector weighted by 1 - beta (the current parameters)
        beta: Blend weight, any finite real

    Returns:
        ParamVector with the layout of ``a``
    """
    _check(a, b)
    if not np.isfinite(beta):
        raise ValueError(f"beta must be finite, got {beta}")
    return a.with_values(beta * a.values + (1.0 - beta) * b.values)


def blend_layers(a: ParamVector, b: ParamVector, betas: Dict[str, float]) -> ParamVector:
    """Blend segment by segment with one weight per layer name."""
    _check(a, b)
    out = np.empty_like(a.values)
    for seg in a.layout:
        beta = betas[seg.name]
        sl = slice(seg.offset, seg.offset + seg.length)
        out[sl] = beta * a.values[sl] + (1.0 - beta) * b.values[sl]
    return a.with_values(out)


def sub(a: ParamVector, b: ParamVector) -> ParamVector:
    """Elementwise ``a - b``."""
    _check(a, b)
    return a.with_values(a.values - b.values)


def add(a: ParamVector, b: ParamVector) -> ParamVector:
    """Elementwise ``a + b``."""
    _check(a, b)
    return a.with_values(a.values + b.values)


def scale(a: ParamVector, factor: float) -> ParamVector:
    return a.with_values(factor * a.values)
