"""Blocked tensor layouts.

Feature maps are arrays of shape (C, H, W) and filter banks (K, C, r, r).
Matrices destined for the block engine are stored as ZMortonMatrix: l-by-l
dense blocks ordered along the Z-order curve, with the physical block
address formed by interleaving the bits of the logical block row and
column (column bits in even positions, row bits in odd positions).

Each axis is zero-padded so that the number of blocks along it is a power
of two; padding never leaks into logical reads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .plans import OpCounters, WinogradPlan

__all__ = [
    "morton_encode",
    "morton_decode",
    "ZMortonMatrix",
    "to_zmorton",
    "from_zmorton",
    "zmorton_zeros",
    "extract_tiles",
    "transform_tiles",
    "TransformedBatch",
    "scatter_to_matrices",
    "gather_from_matrices",
    "gather_filters",
    "assemble_output",
]

_AXIS_BITS = 16
_AXIS_LIMIT = 1 << _AXIS_BITS


def _spread_bits(v):
    # Insert a zero bit between each of the low 16 bits.
    v = v & 0xFFFF
    v = (v | (v << 8)) & 0x00FF00FF
    v = (v | (v << 4)) & 0x0F0F0F0F
    v = (v | (v << 2)) & 0x33333333
    v = (v | (v << 1)) & 0x55555555
    return v


def _compact_bits(v):
    v = v & 0x55555555
    v = (v | (v >> 1)) & 0x33333333
    v = (v | (v >> 2)) & 0x0F0F0F0F
    v = (v | (v >> 4)) & 0x00FF00FF
    v = (v | (v >> 8)) & 0x0000FFFF
    return v


def morton_encode(block_row: int, block_col: int) -> int:
    """Bit-interleaved block address: column bits even, row bits odd."""
    if block_row < 0 or block_col < 0:
        raise ValueError("block coordinates must be non-negative")
    if block_row >= _AXIS_LIMIT or block_col >= _AXIS_LIMIT:
        raise ValueError(f"block coordinate exceeds {_AXIS_BITS}-bit axis width")
    return int((_spread_bits(block_row) << 1) | _spread_bits(block_col))


def morton_decode(index: int) -> tuple[int, int]:
    """Inverse of morton_encode."""
    if index < 0:
        raise ValueError("morton index must be non-negative")
    return int(_compact_bits(index >> 1)), int(_compact_bits(index))


def _morton_encode_array(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    return (_spread_bits(rows) << 1) | _spread_bits(cols)


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p <<= 1
    return p


@dataclass
class ZMortonMatrix:
    """A rows-by-cols matrix stored as l-by-l blocks in Morton order.

    `block_codes` holds the sorted Morton codes of all grid blocks (for a
    non-square block grid the codes are not contiguous) and `blocks` the
    matching (n_blocks, l, l) data.  Treat instances as immutable once
    built; they are then safe to share across threads.
    """

    rows: int
    cols: int
    l: int
    block_codes: np.ndarray
    blocks: np.ndarray

    @property
    def block_rows(self) -> int:
        return _next_pow2(-(-self.rows // self.l))

    @property
    def block_cols(self) -> int:
        return _next_pow2(-(-self.cols // self.l))

    @property
    def padded_rows(self) -> int:
        return self.block_rows * self.l

    @property
    def padded_cols(self) -> int:
        return self.block_cols * self.l

    def ranks_of(self, codes) -> np.ndarray:
        """Positions of the given Morton codes in the stored block sequence."""
        return np.searchsorted(self.block_codes, codes)

    def block(self, block_row: int, block_col: int) -> np.ndarray:
        return self.blocks[int(self.ranks_of(morton_encode(block_row, block_col)))]

    def to_dense(self) -> np.ndarray:
        return from_zmorton(self)


def _grid_codes(block_rows: int, block_cols: int) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(block_rows), np.arange(block_cols), indexing="ij")
    return np.sort(_morton_encode_array(rr.ravel(), cc.ravel()))


def to_zmorton(dense, l: int) -> ZMortonMatrix:
    """Pack a row-major matrix into Morton-ordered l-by-l blocks."""
    if l < 1:
        raise ValueError("block side must be >= 1")
    dense = np.asarray(dense, dtype=float)
    rows, cols = dense.shape
    nbr = _next_pow2(-(-rows // l))
    nbc = _next_pow2(-(-cols // l))
    padded = np.zeros((nbr * l, nbc * l))
    padded[:rows, :cols] = dense
    tiles = padded.reshape(nbr, l, nbc, l).transpose(0, 2, 1, 3)
    rr, cc = np.meshgrid(np.arange(nbr), np.arange(nbc), indexing="ij")
    codes = _morton_encode_array(rr.ravel(), cc.ravel())
    order = np.argsort(codes)
    return ZMortonMatrix(
        rows=rows,
        cols=cols,
        l=l,
        block_codes=codes[order],
        blocks=np.ascontiguousarray(tiles.reshape(-1, l, l)[order]),
    )


def from_zmorton(zm: ZMortonMatrix) -> np.ndarray:
    """Recover the logical row-major matrix (padding dropped)."""
    l = zm.l
    nbr, nbc = zm.block_rows, zm.block_cols
    padded = np.zeros((nbr * l, nbc * l))
    rows_idx = _compact_bits(zm.block_codes >> 1)
    cols_idx = _compact_bits(zm.block_codes)
    for k in range(len(zm.block_codes)):
        r0 = int(rows_idx[k]) * l
        c0 = int(cols_idx[k]) * l
        padded[r0 : r0 + l, c0 : c0 + l] = zm.blocks[k]
    return padded[: zm.rows, : zm.cols]


def zmorton_zeros(rows: int, cols: int, l: int) -> ZMortonMatrix:
    nbr = _next_pow2(-(-rows // l))
    nbc = _next_pow2(-(-cols // l))
    codes = _grid_codes(nbr, nbc)
    return ZMortonMatrix(
        rows=rows, cols=cols, l=l, block_codes=codes, blocks=np.zeros((len(codes), l, l))
    )


def extract_tiles(fm: np.ndarray, plan: WinogradPlan, pad: int = 0) -> np.ndarray:
    """Overlapped l-by-l tiles at stride m over the zero-padded input.

    Returns an array of shape (C, tiles_h, tiles_w, l, l).  Adjacent tiles
    overlap by r - 1; reads past the padded input are zero.
    """
    if pad < 0:
        raise ValueError("pad must be >= 0")
    fm = np.asarray(fm, dtype=float)
    C, H, W = fm.shape
    m, l, r = plan.m, plan.l, plan.r
    out_h = H + 2 * pad - r + 1
    out_w = W + 2 * pad - r + 1
    if out_h < 1 or out_w < 1:
        raise ValueError("non-positive output extent")
    th = -(-out_h // m)
    tw = -(-out_w // m)
    ext_h = (th - 1) * m + l
    ext_w = (tw - 1) * m + l
    padded = np.zeros((C, ext_h, ext_w))
    padded[:, pad : pad + H, pad : pad + W] = fm
    win = np.lib.stride_tricks.sliding_window_view(padded, (l, l), axis=(1, 2))
    return np.ascontiguousarray(win[:, ::m, ::m][:, :th, :tw])


def transform_tiles(plan: WinogradPlan, tiles: np.ndarray) -> np.ndarray:
    """Apply Bt . d . Bt.T to every tile in a (..., l, l) stack."""
    return np.einsum("ab,...bd,ed->...ae", plan.Bt, tiles, plan.Bt)


@dataclass
class TransformedBatch:
    """The l*l per-position matrices of a transformed operand.

    Entry (i, j) holds, for every tile/filter, the (i, j) element of its
    transformed l-by-l tile: shape C-by-P for inputs and K-by-C for filters.
    """

    l: int
    mats: list

    def at(self, i: int, j: int) -> ZMortonMatrix:
        return self.mats[i * self.l + j]

    def __iter__(self):
        return iter(self.mats)


def scatter_to_matrices(transformed_tiles: np.ndarray) -> TransformedBatch:
    """Regroup transformed input tiles (C, th, tw, l, l) into l*l C-by-P matrices.

    Tile coordinates collapse row-major: b = x * tw + y.
    """
    C, th, tw, l, _ = transformed_tiles.shape
    flat = transformed_tiles.transpose(3, 4, 0, 1, 2).reshape(l, l, C, th * tw)
    return TransformedBatch(l=l, mats=[to_zmorton(flat[i, j], l) for i in range(l) for j in range(l)])


def gather_from_matrices(batch: TransformedBatch, C: int, th: int, tw: int) -> np.ndarray:
    """Inverse of scatter_to_matrices."""
    l = batch.l
    tiles = np.zeros((C, th, tw, l, l))
    for i in range(l):
        for j in range(l):
            tiles[:, :, :, i, j] = from_zmorton(batch.at(i, j)).reshape(C, th, tw)
    return tiles


def gather_filters(filters: np.ndarray, plan: WinogradPlan) -> TransformedBatch:
    """Transform a (K, C, r, r) filter bank into l*l K-by-C matrices."""
    filters = np.asarray(filters, dtype=float)
    K, C, r, r2 = filters.shape
    if r != plan.r or r2 != plan.r:
        raise ValueError(f"filter width {r}x{r2} != plan r={plan.r}")
    l = plan.l
    u = np.einsum("ab,kcbd,ed->aekc", plan.G, filters, plan.G)
    return TransformedBatch(l=l, mats=[to_zmorton(u[i, j], l) for i in range(l) for j in range(l)])


def assemble_output(
    mats: np.ndarray,
    plan: WinogradPlan,
    K: int,
    out_h: int,
    out_w: int,
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Inverse-transform the l*l product matrices into a (K, out_h, out_w) map.

    `mats` has shape (l, l, K, P).  One inverse transform runs per (k, b)
    pair -- the channel sum already happened inside the matrix product --
    and tiles extending past the logical output extent are clipped.
    """
    l, m = plan.l, plan.m
    th = -(-out_h // m)
    tw = -(-out_w // m)
    P = mats.shape[3]
    if mats.shape != (l, l, K, P) or P != th * tw:
        raise ValueError("product matrices inconsistent with output geometry")
    tiles = np.einsum("ab,bdkp,ed->kpae", plan.At, mats, plan.At)
    if counters is not None:
        counters.inverse_transforms += K * P
    tiles = tiles.reshape(K, th, tw, m, m).transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(tiles.reshape(K, th * m, tw * m)[:, :out_h, :out_w])
