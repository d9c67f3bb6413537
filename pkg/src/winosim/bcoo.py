"""Block-based compressed coordinates (BCOO) for pruned transformed weights.

Only l-by-l blocks containing nonzeros are stored.  Five vectors describe
them: BN (Morton block numbers, ascending), BI (CSR-style start offsets,
one trailing entry), AI/AJ (row/column of each nonzero inside its block),
and AN (the nonzero values).  Nonzeros within a block are listed row-major.

The on-disk container is little-endian and documented byte-exactly in the
README: five int64 header words (rows, cols, l, n_blocks, nnz), then BN,
BI, AI, AJ as int64 and AN as float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .layout import (
    TransformedBatch,
    ZMortonMatrix,
    from_zmorton,
    to_zmorton,
    zmorton_zeros,
)

__all__ = [
    "BcooFormatError",
    "BcooMatrix",
    "bcoo_encode",
    "bcoo_decode",
    "iter_nonzero_blocks",
    "prune",
    "bcoo_to_bytes",
    "bcoo_from_bytes",
    "save_bcoo",
    "load_bcoo",
]


class BcooFormatError(ValueError):
    """Structural violation in a BCOO container."""


@dataclass
class BcooMatrix:
    """Block-sparse matrix.  Treat instances as immutable once built."""

    rows: int
    cols: int
    l: int
    bn: np.ndarray  # int64, ascending Morton block numbers
    bi: np.ndarray  # int64, len(bn) + 1 start offsets
    ai: np.ndarray  # int64, in-block row of each nonzero
    aj: np.ndarray  # int64, in-block column of each nonzero
    an: np.ndarray  # float64 nonzero values

    @property
    def nnz(self) -> int:
        return len(self.an)

    def block_nnz(self) -> np.ndarray:
        return np.diff(self.bi)

    def validate(self) -> None:
        zm = zmorton_zeros(self.rows, self.cols, self.l)
        if len(self.bi) != len(self.bn) + 1:
            raise BcooFormatError("BI must have exactly len(BN) + 1 entries")
        if len(self.bn) and self.bi[0] != 0:
            raise BcooFormatError("BI[0] must be 0")
        if len(self.bn) == 0 and list(self.bi) != [0]:
            raise BcooFormatError("empty matrix must have BI == [0]")
        if np.any(np.diff(self.bi) < 0):
            raise BcooFormatError("BI must be non-decreasing")
        if np.any(np.diff(self.bi) == 0):
            raise BcooFormatError("BN lists a block with no nonzeros")
        if self.bi[-1] != len(self.an) or len(self.ai) != len(self.an) or len(self.aj) != len(self.an):
            raise BcooFormatError("AI/AJ/AN lengths disagree with BI")
        if len(self.bn) and np.any(np.diff(self.bn) <= 0):
            raise BcooFormatError("BN must be strictly ascending")
        if len(self.bn) and not np.all(np.isin(self.bn, zm.block_codes)):
            raise BcooFormatError("BN contains a block number outside the grid")
        if np.any((self.ai < 0) | (self.ai >= self.l)):
            raise BcooFormatError("AI entry outside [0, l)")
        if np.any((self.aj < 0) | (self.aj >= self.l)):
            raise BcooFormatError("AJ entry outside [0, l)")
        if np.any(self.an == 0.0):
            raise BcooFormatError("AN stores an explicit zero")
        for t in range(len(self.bn)):
            lo, hi = int(self.bi[t]), int(self.bi[t + 1])
            keys = self.ai[lo:hi] * self.l + self.aj[lo:hi]
            if len(np.unique(keys)) != hi - lo:
                raise BcooFormatError(f"duplicate (AI, AJ) pair in block {int(self.bn[t])}")


def bcoo_encode(zm: ZMortonMatrix) -> BcooMatrix:
    """Compress a Z-Morton matrix; blocks appear in ascending Morton order."""
    bn, bi, ai, aj, an = [], [0], [], [], []
    for k, code in enumerate(zm.block_codes):
        blk = zm.blocks[k]
        rr, cc = np.nonzero(blk)  # C-order: row-major within the block
        if len(rr) == 0:
            continue
        bn.append(int(code))
        ai.extend(rr.tolist())
        aj.extend(cc.tolist())
        an.extend(blk[rr, cc].tolist())
        bi.append(len(an))
    return BcooMatrix(
        rows=zm.rows,
        cols=zm.cols,
        l=zm.l,
        bn=np.array(bn, dtype=np.int64),
        bi=np.array(bi, dtype=np.int64),
        ai=np.array(ai, dtype=np.int64),
        aj=np.array(aj, dtype=np.int64),
        an=np.array(an, dtype=float),
    )


def bcoo_decode(b: BcooMatrix) -> ZMortonMatrix:
    """Exact inverse of bcoo_encode.  Raises BcooFormatError on bad structure."""
    b.validate()
    zm = zmorton_zeros(b.rows, b.cols, b.l)
    ranks = zm.ranks_of(b.bn)
    for t in range(len(b.bn)):
        lo, hi = int(b.bi[t]), int(b.bi[t + 1])
        zm.blocks[ranks[t], b.ai[lo:hi], b.aj[lo:hi]] = b.an[lo:hi]
    return zm


def iter_nonzero_blocks(b: BcooMatrix):
    """Yield (morton_index, dense l-by-l block) in ascending Morton order."""
    for t in range(len(b.bn)):
        lo, hi = int(b.bi[t]), int(b.bi[t + 1])
        blk = np.zeros((b.l, b.l))
        blk[b.ai[lo:hi], b.aj[lo:hi]] = b.an[lo:hi]
        yield int(b.bn[t]), blk


def prune(batch: TransformedBatch, target_sparsity: float) -> TransformedBatch:
    """Zero the smallest-magnitude entries of each per-position matrix.

    Zeroing proceeds until at least `target_sparsity` of each matrix's
    logical entries are zero; ties break deterministically by (row, col).
    Surviving values are never changed.
    """
    if not 0.0 <= target_sparsity <= 1.0:
        raise ValueError("target_sparsity must lie in [0, 1]")
    pruned = []
    for mat in batch:
        dense = from_zmorton(mat)
        total = dense.size
        needed = int(np.ceil(target_sparsity * total))
        current = int(np.count_nonzero(dense == 0.0))
        if needed > current:
            rr, cc = np.nonzero(dense)
            vals = np.abs(dense[rr, cc])
            order = np.lexsort((cc, rr, vals))
            kill = order[: needed - current]
            dense = dense.copy()
            dense[rr[kill], cc[kill]] = 0.0
        pruned.append(to_zmorton(dense, mat.l))
    return TransformedBatch(l=batch.l, mats=pruned)


_HEADER = struct.Struct("<5q")


def bcoo_to_bytes(b: BcooMatrix) -> bytes:
    parts = [_HEADER.pack(b.rows, b.cols, b.l, len(b.bn), len(b.an))]
    parts.append(b.bn.astype("<i8").tobytes())
    parts.append(b.bi.astype("<i8").tobytes())
    parts.append(b.ai.astype("<i8").tobytes())
    parts.append(b.aj.astype("<i8").tobytes())
    parts.append(b.an.astype("<f8").tobytes())
    return b"".join(parts)


def bcoo_from_bytes(buf: bytes, offset: int = 0) -> tuple[BcooMatrix, int]:
    """Parse one BCOO record; returns (matrix, next_offset)."""
    if len(buf) - offset < _HEADER.size:
        raise BcooFormatError("truncated BCOO header")
    rows, cols, l, n_blocks, nnz = _HEADER.unpack_from(buf, offset)
    if min(rows, cols, l) < 1 or n_blocks < 0 or nnz < 0:
        raise BcooFormatError("malformed BCOO header")
    pos = offset + _HEADER.size

    def take(count, dtype):
        nonlocal pos
        nbytes = count * 8
        if len(buf) - pos < nbytes:
            raise BcooFormatError("truncated BCOO payload")
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).copy()
        pos += nbytes
        return arr

    bn = take(n_blocks, "<i8")
    bi = take(n_blocks + 1, "<i8")
    ai = take(nnz, "<i8")
    aj = take(nnz, "<i8")
    an = take(nnz, "<f8")
    mat = BcooMatrix(rows=rows, cols=cols, l=l, bn=bn, bi=bi, ai=ai, aj=aj, an=an)
    mat.validate()
    return mat, pos


def save_bcoo(path, b: BcooMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(bcoo_to_bytes(b))


def load_bcoo(path) -> BcooMatrix:
    with open(path, "rb") as fh:
        buf = fh.read()
    mat, pos = bcoo_from_bytes(buf)
    if pos != len(buf):
        raise BcooFormatError("trailing bytes after BCOO record")
    return mat
