from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class Role(str, enum.Enum):
    STIFFNESS = "stiffness"
    REACTION = "reaction"
    EXCHANGE_IMMOBILE = "exchange_immobile"
    EXCHANGE_SORPTION = "exchange_sorption"
    FULL_BLOCK = "full_block"
    GENERIC = "generic"


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """Sparse right-hand-side matrix with a role tag.

    ``blocks`` optionally records the block partition (a tuple of block
    sizes) and ``meta`` any assembly information needed to split the
    operator again later.
    """
    matrix: sp.csr_matrix
    role: Role = Role.GENERIC
    blocks: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=float)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be square, got shape {m.shape}")
        m.sum_duplicates()
        m.sort_indices()
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "role", Role(self.role))
        if self.blocks is not None and sum(self.blocks) != m.shape[0]:
            raise ValueError(f"block sizes {self.blocks} do not add up to dimension {m.shape[0]}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def entries(self):
        """Coordinate triplets (row, col, value) of the stored entries."""
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def __matmul__(self, x):
        return self.matrix @ x

    def __add__(self, other):
        om = other.matrix if isinstance(other, LinearOperator) else other
        return LinearOperator(self.matrix + om, Role.GENERIC, self.blocks)

    def __neg__(self):
        return LinearOperator(-self.matrix, self.role, self.blocks, dict(self.meta))

    def scaled(self, factor: float) -> "LinearOperator":
        return LinearOperator(factor * self.matrix, self.role, self.blocks, dict(self.meta))

    def block(self, i: int, j: int) -> sp.csr_matrix:
        if self.blocks is None:
            raise ValueError("operator carries no block partition")
        off = np.concatenate([[0], np.cumsum(self.blocks)])
        return self.matrix[off[i]:off[i + 1], off[j]:off[j + 1]]


def as_matrix(op) -> sp.csr_matrix:
    """Accept a LinearOperator, sparse matrix or dense array."""
    if isinstance(op, LinearOperator):
        return op.matrix
    if sp.issparse(op):
        return sp.csr_matrix(op, dtype=float)
    return sp.csr_matrix(np.atleast_2d(np.asarray(op, dtype=float)))
