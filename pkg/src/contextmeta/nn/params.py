"""Flat parameter storage with a named layout."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Tuple

import numpy as np

from contextmeta.errors import LayoutError


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    offset: int
    shape: Tuple[int, ...]
    size: int = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "size", int(np.prod(self.shape, dtype=np.int64)))


@dataclass(frozen=True)
class Layout:
    """Ordered mapping of parameter name -> (offset, shape) inside a flat vector."""

    entries: Tuple[LayoutEntry, ...]
    _index: dict = field(init=False, compare=False, repr=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {e.name: e for e in self.entries})

    @classmethod
    def from_shapes(cls, named_shapes: Iterable[Tuple[str, Tuple[int, ...]]]) -> "Layout":
        entries = []
        offset = 0
        for name, shape in named_shapes:
            entry = LayoutEntry(name, offset, tuple(int(s) for s in shape))
            entries.append(entry)
            offset += entry.size
        return cls(tuple(entries))

    @property
    def size(self) -> int:
        if not self.entries:
            return 0
        last = self.entries[-1]
        return last.offset + last.size

    def __getitem__(self, name: str) -> LayoutEntry:
        return self._index[name]

    def names(self):
        return [e.name for e in self.entries]

    def to_json(self):
        return [{"name": e.name, "offset": e.offset, "shape": list(e.shape)} for e in self.entries]

    @classmethod
    def from_json(cls, items) -> "Layout":
        return cls(tuple(LayoutEntry(d["name"], int(d["offset"]), tuple(d["shape"])) for d in items))


class ParameterVector:
    """A 1-d array of trainable values plus the layout that names its slices.

    Arithmetic between two vectors requires identical layouts and always
    returns a new vector with that same layout.
    """

    __slots__ = ("values", "layout")

    def __init__(self, values, layout: Layout):
        values = np.asarray(values)
        if values.ndim != 1 or values.shape[0] != layout.size:
            raise LayoutError(
                f"values of shape {values.shape} do not fit layout of size {layout.size}"
            )
        self.values = values
        self.layout = layout

    @classmethod
    def zeros(cls, layout: Layout, dtype=np.float32) -> "ParameterVector":
        return cls(np.zeros(layout.size, dtype=dtype), layout)

    @property
    def dtype(self):
        return self.values.dtype

    def __len__(self):
        return self.values.shape[0]

    def view(self, name: str) -> np.ndarray:
        """Reshaped view (not a copy) of one named parameter."""
        e = self.layout[name]
        return self.values[e.offset:e.offset + e.size].reshape(e.shape)

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def zeros_like(self) -> "ParameterVector":
        return ParameterVector(np.zeros_like(self.values), self.layout)

    def astype(self, dtype) -> "ParameterVector":
        return ParameterVector(self.values.astype(dtype), self.layout)

    def check_layout(self, other: "ParameterVector") -> None:
        if not isinstance(other, ParameterVector):
            raise LayoutError(f"expected ParameterVector, got {type(other).__name__}")
        if other.layout != self.layout:
            raise LayoutError("parameter layouts differ")

    def _binary(self, other, op):
        if isinstance(other, ParameterVector):
            self.check_layout(other)
            return ParameterVector(op(self.values, other.values), self.layout)
        return ParameterVector(op(self.values, self.values.dtype.type(other)), self.layout)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        if isinstance(scalar, ParameterVector):
            raise TypeError("elementwise product of parameter vectors is not supported")
        return self._binary(scalar, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return ParameterVector(-self.values, self.layout)

    def __eq__(self, other):
        return (
            isinstance(other, ParameterVector)
            and other.layout == self.layout
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def identical(self, other: "ParameterVector") -> bool:
        """Bit-level equality (distinguishes -0.0 from 0.0 and compares NaNs)."""
        return (
            other.layout == self.layout
            and other.values.dtype == self.values.dtype
            and self.values.tobytes() == other.values.tobytes()
        )

    def __repr__(self):
        return f"ParameterVector(n={len(self)}, dtype={self.values.dtype}, names={self.layout.names()})"
