"""Parameter containers and elementwise vector-space operations.

A :class:`ParameterSet` is an ordered, immutable collection of named dense
arrays, all sharing one element type (float32 or float64). It is the unit
that gets trained, averaged, and written to disk. All arithmetic here is
value-semantic: operations return new sets and never modify their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import NonFiniteError, StructureMismatch

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ParameterSet:
    """Ordered mapping of unique names to read-only numpy arrays.

    All entries share one element type; mixed-type sets are rejected at
    construction. Arrays are copied in and marked non-writeable, so a set
    can be shared freely once built.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]):
        items = list(entries.items()) if isinstance(entries, Mapping) else list(entries)
        if not items:
            raise ValueError("a ParameterSet needs at least one entry")
        store: dict[str, np.ndarray] = {}
        dtype = None
        for name, value in items:
            if not isinstance(name, str) or not name:
                raise ValueError(f"entry names must be nonempty strings, got {name!r}")
            if name in store:
                raise ValueError(f"duplicate entry name {name!r}")
            arr = np.asarray(value)
            if arr.dtype not in SUPPORTED_DTYPES:
                raise ValueError(
                    f"entry {name!r}: element type must be float32 or float64, got {arr.dtype}"
                )
            if dtype is None:
                dtype = arr.dtype
            elif arr.dtype != dtype:
                raise ValueError(
                    f"entry {name!r}: mixed element types ({arr.dtype} vs {dtype})"
                )
            arr = np.array(arr, dtype=dtype, order="C", copy=True)
            arr.flags.writeable = False
            store[name] = arr
        self._entries = store

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self._entries.values())).dtype

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._entries.items())

    def total_size(self) -> int:
        return sum(a.size for a in self._entries.values())

    def as_dict(self) -> dict[str, np.ndarray]:
        """Writable copies of all entries, preserving order."""
        return {name: arr.copy() for name, arr in self._entries.items()}

    def with_updates(self, updates: Mapping[str, np.ndarray]) -> "ParameterSet":
        """New set with the given entries replaced; shapes/dtype must match."""
        out = []
        seen = set()
        for name, arr in self._entries.items():
            if name in updates:
                new = np.asarray(updates[name], dtype=self.dtype)
                if new.shape != arr.shape:
                    raise StructureMismatch(
                        f"entry {name!r}: replacement shape {new.shape} != {arr.shape}"
                    )
                out.append((name, new))
                seen.add(name)
            else:
                out.append((name, arr))
        unknown = set(updates) - seen
        if unknown:
            raise StructureMismatch(f"unknown entries in update: {sorted(unknown)}")
        return ParameterSet(out)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParameterSet):
            return NotImplemented
        if self.names != other.names or self.dtype != other.dtype:
            return False
        return all(
            a.shape == b.shape and np.array_equal(a, b, equal_nan=True)
            for (_, a), (_, b) in zip(self.items(), other.items())
        )

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}:{a.shape}" for n, a in self._entries.items())
        return f"ParameterSet({self.dtype}, {inner})"


@dataclass(frozen=True)
class Checkpoint:
    """A parameter snapshot tagged with its training position."""

    params: ParameterSet
    epoch: int
    step: int

    def __post_init__(self):
        if self.epoch < 0 or self.step < 0:
            raise ValueError("epoch and step must be nonnegative")


def check_same_structure(a: ParameterSet, b: ParameterSet) -> None:
    """Raise :class:`StructureMismatch` naming the first entry that differs."""
    if a.dtype != b.dtype:
        raise StructureMismatch(f"element types differ: {a.dtype} vs {b.dtype}")
    a_names, b_names = a.names, b.names
    for i in range(min(len(a_names), len(b_names))):
        if a_names[i] != b_names[i]:
            raise StructureMismatch(
                f"entry {i}: name {a_names[i]!r} vs {b_names[i]!r}"
            )
        if a[a_names[i]].shape != b[b_names[i]].shape:
            raise StructureMismatch(
                f"entry {a_names[i]!r}: shape {a[a_names[i]].shape} vs {b[b_names[i]].shape}"
            )
    if len(a_names) != len(b_names):
        extra = a_names[len(b_names):] if len(a_names) > len(b_names) else b_names[len(a_names):]
        raise StructureMismatch(f"entry counts differ; first unmatched entry {extra[0]!r}")


def check_finite(p: ParameterSet, context: str = "parameter set") -> None:
    """Raise :class:`NonFiniteError` naming the first non-finite entry."""
    for name, arr in p.items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"{context}: entry {name!r} contains NaN or Inf")


def add_scaled(dst: ParameterSet, src: ParameterSet, c: float) -> ParameterSet:
    """Elementwise ``dst + c * src`` over structurally identical sets."""
    check_same_structure(dst, src)
    return ParameterSet(
        (name, arr + c * src[name]) for name, arr in dst.items()
    )


def scale(p: ParameterSet, c: float) -> ParameterSet:
    """Every element multiplied by ``c``."""
    return ParameterSet((name, arr * c) for name, arr in p.items())


def l2_distance(p: ParameterSet, q: ParameterSet) -> float:
    """Euclidean norm of the concatenated elementwise difference."""
    check_same_structure(p, q)
    total = 0.0
    for name, arr in p.items():
        diff = arr.astype(np.float64) - q[name].astype(np.float64)
        total += float(np.dot(diff.ravel(), diff.ravel()))
    return math.sqrt(total)
