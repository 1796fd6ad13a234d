"""Two-way crossed layouts with unequal cell counts.

Cells are stored row-major: cell ``(i, j)`` (0-based) sits at flat index
``i * h + j``, and observations are stacked cell by cell in that order, so the
within-cell index varies fastest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


class DesignError(ValueError):
    """Raised for malformed layouts or sampling parameters."""


@dataclass(frozen=True, eq=False)
class Design:
    g: int
    h: int
    cells: np.ndarray  # (g, h) int64, read-only

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.int64, copy=True)
        if cells.ndim != 2 or cells.shape != (self.g, self.h):
            raise DesignError(f"cells must have shape ({self.g}, {self.h}), got {cells.shape}")
        if self.g < 1 or self.h < 1:
            raise DesignError("empty grid")
        if np.any(cells < 1):
            raise DesignError("every cell needs at least one observation")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    def __eq__(self, other):
        if not isinstance(other, Design):
            return NotImplemented
        return self.g == other.g and self.h == other.h and np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash((self.g, self.h, self.cells.tobytes()))

    def __repr__(self):
        return f"Design(g={self.g}, h={self.h}, n={self.n}, m_L={self.m_L}, m_U={self.m_U})"

    @property
    def gh(self) -> int:
        return self.g * self.h

    @cached_property
    def sizes(self) -> np.ndarray:
        """Flat vector of cell sizes in cell order (length gh)."""
        m = self.cells.ravel().copy()
        m.setflags(write=False)
        return m

    @cached_property
    def n(self) -> int:
        return int(self.cells.sum())

    @property
    def m_L(self) -> int:
        return int(self.cells.min())

    @property
    def m_U(self) -> int:
        return int(self.cells.max())

    @property
    def delta(self) -> float:
        return (self.m_U - self.m_L) / self.m_U

    @property
    def is_balanced(self) -> bool:
        return self.m_L == self.m_U

    @cached_property
    def offsets(self) -> np.ndarray:
        """Start of each cell's observations in the stacked response vector."""
        off = np.zeros(self.gh, dtype=np.int64)
        np.cumsum(self.sizes[:-1], out=off[1:])
        off.setflags(write=False)
        return off

    @cached_property
    def obs_cell(self) -> np.ndarray:
        """Cell index of every observation (length n)."""
        idx = np.repeat(np.arange(self.gh), self.sizes)
        idx.setflags(write=False)
        return idx

    def flat_index(self, i: int, j: int) -> int:
        if not (0 <= i < self.g and 0 <= j < self.h):
            raise IndexError((i, j))
        return i * self.h + j

    def cell_of(self, c: int) -> tuple[int, int]:
        if not 0 <= c < self.gh:
            raise IndexError(c)
        return divmod(c, self.h)

    def to_text(self) -> str:
        lines = [f"{self.g} {self.h}"]
        lines += [" ".join(str(int(v)) for v in row) for row in self.cells]
        return "\n".join(lines) + "\n"


def new_design(g: int, h: int, cells) -> Design:
    return Design(int(g), int(h), np.asarray(cells))


def balanced_design(g: int, h: int, m: int) -> Design:
    return Design(g, h, np.full((g, h), m))


def sample_design_uniform(g: int, h: int, lo: int, hi: int, seed) -> Design:
    """Cell counts drawn independently from the discrete uniform on ``{lo, ..., hi}``."""
    if lo < 1:
        raise DesignError("lo must be >= 1")
    if lo > hi:
        raise DesignError(f"lo={lo} exceeds hi={hi}")
    rng = np.random.default_rng(seed)
    return Design(g, h, rng.integers(lo, hi, size=(g, h), endpoint=True))


def delta_upper(m_L: int, delta_target: float) -> int:
    """Largest cell count allowed by a target unbalance: floor(m_L / (1 - delta))."""
    if not 0 <= delta_target < 1:
        raise DesignError(f"delta_target must lie in [0, 1), got {delta_target}")
    # guard against 24.999999 style round-off on exact quotients
    return math.floor(m_L / (1.0 - delta_target) + 1e-9)


def sample_design_delta(g: int, h: int, m_L: int, delta_target: float, seed) -> Design:
    """Cells uniform on ``{m_L, ..., floor(m_L/(1-delta_target))}``.

    The realized unbalance of the returned design is at most ``delta_target``
    and is what downstream reports should record.
    """
    if m_L < 1:
        raise DesignError("m_L must be >= 1")
    return sample_design_uniform(g, h, m_L, delta_upper(m_L, delta_target), seed)


def parse_design(text: str) -> Design:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows or len(rows[0]) != 2:
        raise DesignError("first line must be 'g h'")
    try:
        g, h = (int(v) for v in rows[0])
        cells = [[int(v) for v in r] for r in rows[1:]]
    except ValueError as exc:
        raise DesignError(f"non-integer entry in design file: {exc}") from None
    if len(cells) != g or any(len(r) != h for r in cells):
        raise DesignError(f"expected {g} rows of {h} counts")
    return Design(g, h, np.array(cells, dtype=np.int64).reshape(g, h))


def read_design(path) -> Design:
    return parse_design(Path(path).read_text())


def write_design(design: Design, path) -> None:
    Path(path).write_text(design.to_text())
