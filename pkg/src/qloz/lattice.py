"""Signatures, interlacing arrays and small-instance enumeration.

Rows are indexed 1..N from the bottom (row ``k`` has ``k`` entries) and entries
within a row 1..k, matching the usual Gelfand-Tsetlin convention.  The top row
``rows[N]`` is the fixed boundary row ``nu``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Iterable, Iterator, Sequence

import numpy as np

DEFAULT_ENUMERATION_CAP = 10**7


class ShapeError(ValueError):
    """Row ``k`` of an array does not have ``k`` entries."""


class InterlacingError(ValueError):
    """An array violates the interlacing constraints."""


class EnumerationCapError(RuntimeError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"enumeration would produce {count} arrays, above the cap {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class Signature:
    """A weakly decreasing tuple of integers (negative parts allowed)."""

    parts: tuple[int, ...]

    def __post_init__(self):
        parts = tuple(int(p) for p in self.parts)
        object.__setattr__(self, "parts", parts)
        if not parts:
            raise ValueError("a signature needs at least one part")
        for i in range(len(parts) - 1):
            if parts[i] < parts[i + 1]:
                raise ValueError(f"signature {parts} is not weakly decreasing at position {i + 1}")

    def __len__(self) -> int:
        return len(self.parts)

    def __iter__(self):
        return iter(self.parts)

    def __getitem__(self, i):
        return self.parts[i]

    @property
    def size(self) -> int:
        """``|lambda| = lambda_1 + ... + lambda_k``."""
        return sum(self.parts)

    def interlaces_with(self, kappa: "Signature") -> bool:
        """True when ``self`` (length k-1) sits below ``kappa`` (length k)."""
        if len(kappa) != len(self) + 1:
            return False
        return all(kappa[j + 1] <= self[j] <= kappa[j] for j in range(len(self)))


def as_signature(parts) -> Signature:
    return parts if isinstance(parts, Signature) else Signature(tuple(parts))


@dataclass(frozen=True)
class ParticleConfiguration:
    level: int
    positions: tuple[int, ...]

    def __post_init__(self):
        pos = tuple(int(p) for p in self.positions)
        object.__setattr__(self, "positions", pos)
        if len(pos) != self.level:
            raise ShapeError(f"level {self.level} needs {self.level} particles, got {len(pos)}")
        if any(pos[i] <= pos[i + 1] for i in range(len(pos) - 1)):
            raise ValueError(f"particle positions {pos} are not strictly decreasing")


def to_particles(row, level: int | None = None) -> ParticleConfiguration:
    """Shift ``lambda^k_j -> lambda^k_j + k - j`` to get distinct particles."""
    row = as_signature(row)
    k = len(row) if level is None else level
    if len(row) != k:
        raise ShapeError(f"row of length {len(row)} cannot sit on level {k}")
    return ParticleConfiguration(k, tuple(row[j - 1] + k - j for j in range(1, k + 1)))


def from_particles(config: ParticleConfiguration | Sequence[int]) -> Signature:
    if not isinstance(config, ParticleConfiguration):
        pos = tuple(config)
        config = ParticleConfiguration(len(pos), pos)
    k = config.level
    return Signature(tuple(config.positions[j - 1] - k + j for j in range(1, k + 1)))


class InterlacingArray:
    """Depth-N triangular integer array stored as one flat buffer.

    Entry ``(k, j)`` lives at ``k(k-1)/2 + j - 1``.  Construction checks the
    triangular shape only; use :func:`validate_interlacing` (or ``check=True``)
    for the interlacing constraints.
    """

    __slots__ = ("depth", "data")

    def __init__(self, rows: Sequence[Sequence[int]], check: bool = False):
        rows = [tuple(int(v) for v in r) for r in rows]
        n = len(rows)
        if n < 1:
            raise ShapeError("an array needs at least one row")
        for k, row in enumerate(rows, start=1):
            if len(row) != k:
                raise ShapeError(f"row {k} has length {len(row)}")
        self.depth = n
        self.data = np.fromiter((v for row in rows for v in row), dtype=np.int64,
                                count=n * (n + 1) // 2)
        self.data.flags.writeable = False
        if check:
            ok, where = validate_interlacing(self)
            if not ok:
                raise InterlacingError(f"interlacing fails at (k, j) = {where}")

    @classmethod
    def from_flat(cls, depth: int, data) -> "InterlacingArray":
        data = np.asarray(data, dtype=np.int64)
        if data.shape != (depth * (depth + 1) // 2,):
            raise ShapeError(f"flat buffer of shape {data.shape} does not fit depth {depth}")
        obj = cls.__new__(cls)
        obj.depth = depth
        obj.data = data.copy()
        obj.data.flags.writeable = False
        return obj

    @staticmethod
    def offset(k: int) -> int:
        return k * (k - 1) // 2

    def __getitem__(self, kj: tuple[int, int]) -> int:
        k, j = kj
        if not (1 <= k <= self.depth and 1 <= j <= k):
            raise IndexError(kj)
        return int(self.data[self.offset(k) + j - 1])

    def row(self, k: int) -> Signature:
        o = self.offset(k)
        return Signature(tuple(int(v) for v in self.data[o:o + k]))

    @property
    def rows(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in self.data[self.offset(k):self.offset(k) + k])
                for k in range(1, self.depth + 1)]

    @property
    def top(self) -> Signature:
        return self.row(self.depth)

    def __eq__(self, other):
        return (isinstance(other, InterlacingArray) and self.depth == other.depth
                and bool(np.array_equal(self.data, other.data)))

    def __hash__(self):
        return hash((self.depth, self.data.tobytes()))

    def __repr__(self):
        return f"InterlacingArray({self.rows})"


def validate_interlacing(array: InterlacingArray | Sequence[Sequence[int]]):
    """Return ``(ok, first_violation)``; the violation is ``(k, j)`` or None.

    Raises :class:`ShapeError` for malformed shapes, which is a different
    failure from an interlacing violation.
    """
    if not isinstance(array, InterlacingArray):
        array = InterlacingArray(array)
    n = array.depth
    for k in range(2, n + 1):
        for j in range(1, k + 1):
            v = array[k, j]
            # lambda^k_j <= lambda^{k-1}_{j-1} <= lambda^k_{j-1}
            if j >= 2 and not (v <= array[k - 1, j - 1] <= array[k, j - 1]):
                return False, (k, j)
        for j in range(1, k):
            if array[k, j] < array[k, j + 1]:
                return False, (k, j)
    return True, None


def volume(array: InterlacingArray) -> int:
    """``vol = sum_{k<N} |lambda^k|`` (may be negative)."""
    n = array.depth
    return int(array.data[: InterlacingArray.offset(n)].sum())


def enumerate_interlacing_rows(kappa) -> list[Signature]:
    """All ``mu`` of length k-1 with ``kappa_{j+1} <= mu_j <= kappa_j``."""
    kappa = as_signature(kappa)
    k = len(kappa)
    if k < 2:
        raise ValueError("need a row of length at least 2")
    ranges = [range(kappa[j + 1], kappa[j] + 1) for j in range(k - 1)]
    return [Signature(mu) for mu in product(*ranges)]


def count_interlacing_rows(kappa) -> int:
    kappa = as_signature(kappa)
    return math.prod(kappa[j] - kappa[j + 1] + 1 for j in range(len(kappa) - 1))


def count_arrays(nu) -> int:
    """Number of arrays with top row ``nu`` (Weyl dimension ``s_nu(1,...,1)``)."""
    nu = as_signature(nu)
    n = len(nu)
    c = Fraction(1)
    for i in range(n):
        for j in range(i + 1, n):
            c *= Fraction(nu[i] - nu[j] + j - i, j - i)
    assert c.denominator == 1
    return int(c)


def enumerate_arrays(nu, N: int | None = None, cap: int = DEFAULT_ENUMERATION_CAP
                     ) -> Iterator[InterlacingArray]:
    """Yield every interlacing array with top row ``nu`` exactly once."""
    nu = as_signature(nu)
    n = len(nu) if N is None else N
    if len(nu) != n:
        raise ShapeError(f"top row has {len(nu)} parts but N = {n}")
    total = count_arrays(nu)
    if total > cap:
        raise EnumerationCapError(total, cap)

    for lower in _lower_completions(nu.parts):
        yield InterlacingArray(list(reversed(lower)) + [nu.parts])


def _lower_completions(kappa: tuple[int, ...]) -> Iterator[tuple[tuple[int, ...], ...]]:
    # each completion lists rows from level len(kappa)-1 down to level 1
    if len(kappa) == 1:
        yield ()
        return
    for mu in product(*[range(kappa[j + 1], kappa[j] + 1) for j in range(len(kappa) - 1)]):
        for rest in _lower_completions(mu):
            yield (mu,) + rest


def min_volume_array(nu) -> InterlacingArray:
    """Array with every row packed down: ``lambda^{k-1}_j = lambda^k_{j+1}``."""
    nu = as_signature(nu)
    rows = [nu.parts]
    while len(rows[-1]) > 1:
        rows.append(rows[-1][1:])
    return InterlacingArray(list(reversed(rows)))


def max_volume_array(nu) -> InterlacingArray:
    nu = as_signature(nu)
    rows = [nu.parts]
    while len(rows[-1]) > 1:
        rows.append(rows[-1][:-1])
    return InterlacingArray(list(reversed(rows)))


@dataclass(frozen=True)
class StepFunction:
    """``f_N(x) = nu_{ceil(N x)} / N`` on ``[0, 1]`` (with ``f_N(0) = nu_1/N``)."""

    values: tuple[float, ...]

    @property
    def N(self) -> int:
        return len(self.values)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.ceil(x * self.N).astype(int), 1, self.N) - 1
        out = np.asarray(self.values)[idx]
        return out if out.ndim else float(out)


def profile_from_signature(nu, N: int | None = None) -> StepFunction:
    nu = as_signature(nu)
    n = len(nu) if N is None else N
    if len(nu) != n:
        raise ShapeError(f"top row has {len(nu)} parts but N = {n}")
    return StepFunction(tuple(v / n for v in nu))


def signature_from_profile(f, N: int) -> Signature:
    """Discretize a profile: ``nu_j = round(N f(j/N))``, then monotonize."""
    vals = [int(round(N * float(f(j / N)))) for j in range(1, N + 1)]
    for j in range(1, N):
        vals[j] = min(vals[j], vals[j - 1])
    return Signature(tuple(vals))


# --- JSONL serialization -----------------------------------------------------

def array_to_json(array: InterlacingArray) -> str:
    return json.dumps({"N": array.depth, "rows": [list(r) for r in array.rows]},
                      separators=(", ", ": "))


def array_from_json(line: str) -> InterlacingArray:
    obj = json.loads(line)
    arr = InterlacingArray(obj["rows"])
    if arr.depth != obj["N"]:
        raise ShapeError(f"declared N = {obj['N']} but found {arr.depth} rows")
    return arr


def write_jsonl(path, arrays: Iterable[InterlacingArray]) -> int:
    n = 0
    with open(path, "w") as fh:
        for a in arrays:
            fh.write(array_to_json(a) + "\n")
            n += 1
    return n


def read_jsonl(path) -> list[InterlacingArray]:
    with open(path) as fh:
        return [array_from_json(line) for line in fh if line.strip()]


EXAMPLE_ROWS = ((3,), (5, 2), (6, 4, 2), (6, 6, 3, 0), (6, 6, 5, 2, 0), (7, 6, 6, 4, 2, -1))
"""Rows (bottom to top) of the depth-6 example tiling with vol = 56."""
