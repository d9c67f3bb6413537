"""Executable convolution numerics.

Provides the direct-correlation oracle, dense and sparse Winograd
convolution lowered to l*l independent block matrix multiplies over
Z-Morton layouts, the divide-and-conquer multiply schedule those blocks
follow, and the auxiliary network layers (fully connected, ReLU, 2x2 max
pooling) plus layer/network descriptions.

Schedule order.  The recursive multiply halves every block dimension
greater than one until single l-by-l blocks remain.  Unrolled, the four
top-level output quadrants advance in lockstep, one accumulation
statement each per turn, which for a 16x16 input (l = 4) starts

    C_0  += A_0 * B_0  + A_1 * B_2
    C_4  += A_0 * B_4  + A_1 * B_6
    C_8  += A_8 * B_0  + A_9 * B_2
    C_12 += A_8 * B_4  + A_9 * B_6

Per output block, contributions always accumulate in ascending order of
the inner (shared) dimension, so results are reproducible regardless of
how the independent multiplies are dispatched.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bcoo import BcooMatrix, bcoo_encode
from .layout import (
    TransformedBatch,
    ZMortonMatrix,
    _morton_encode_array,
    _next_pow2,
    assemble_output,
    extract_tiles,
    from_zmorton,
    gather_filters,
    scatter_to_matrices,
    to_zmorton,
    transform_tiles,
    zmorton_zeros,
)
from .plans import OpCounters, WinogradPlan

__all__ = [
    "LayerSpec",
    "PoolSpec",
    "FcSpec",
    "NetworkSpec",
    "MatmulStream",
    "matmul_streams",
    "matmul_trace",
    "direct_conv",
    "recursive_matmul",
    "block_matmul_sparse",
    "winograd_conv_dense",
    "winograd_conv_sparse",
    "compress_filters",
    "fc_layer",
    "relu",
    "maxpool2",
    "run_network",
    "save_tensor",
    "load_tensor",
    "tensor_to_bytes",
    "tensor_from_bytes",
]


# ---------------------------------------------------------------------------
# layer and network descriptions


@dataclass(frozen=True)
class LayerSpec:
    """Convolution layer geometry.  The Winograd path requires stride 1."""

    name: str
    H: int
    W: int
    C: int
    K: int
    r: int = 3
    pad: int = 1
    stride: int = 1

    def __post_init__(self):
        if min(self.H, self.W, self.C, self.K) < 1:
            raise ValueError(f"{self.name}: extents must be positive")
        if self.r % 2 == 0:
            raise ValueError(f"{self.name}: filter width must be odd")
        if self.stride < 1:
            raise ValueError(f"{self.name}: stride must be >= 1")

    @property
    def out_h(self) -> int:
        return (self.H + 2 * self.pad - self.r) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.W + 2 * self.pad - self.r) // self.stride + 1

    def tile_counts(self, m: int) -> tuple[int, int]:
        return -(-self.out_h // m), -(-self.out_w // m)


@dataclass(frozen=True)
class PoolSpec:
    """2x2 stride-2 max-pooling marker."""

    name: str = "pool"


@dataclass(frozen=True)
class FcSpec:
    """Fully-connected layer marker; weights are an (out, in) matrix."""

    name: str
    in_features: int
    out_features: int


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layers plus pooling/FC markers."""

    items: tuple

    def conv_layers(self) -> list[LayerSpec]:
        return [it for it in self.items if isinstance(it, LayerSpec)]

    def chain_shapes(self, C: int, H: int, W: int) -> list[tuple[int, int, int]]:
        """Propagate (C, H, W) through the network, validating adjacency."""
        shapes = [(C, H, W)]
        for it in self.items:
            C, H, W = shapes[-1]
            if isinstance(it, LayerSpec):
                if (it.C, it.H, it.W) != (C, H, W):
                    raise ValueError(
                        f"{it.name}: expects {(it.C, it.H, it.W)}, got {(C, H, W)}"
                    )
                shapes.append((it.K, it.out_h, it.out_w))
            elif isinstance(it, PoolSpec):
                shapes.append((C, -(-H // 2), -(-W // 2)))
            elif isinstance(it, FcSpec):
                if C * H * W != it.in_features:
                    raise ValueError(f"{it.name}: expects {it.in_features} inputs, got {C * H * W}")
                shapes.append((it.out_features, 1, 1))
            else:
                raise TypeError(f"unknown network item {it!r}")
        return shapes


# ---------------------------------------------------------------------------
# block-multiply schedule


@dataclass(frozen=True)
class MatmulStream:
    """One top-level output quadrant's depth-first block-operation stream."""

    row_half: int
    col_half: int
    c: np.ndarray  # Morton codes of the output block per operation
    a: np.ndarray  # Morton codes of the left operand block
    b: np.ndarray  # Morton codes of the right operand block


def _emit(r0, rn, k0, kn, c0, cn, out_r, out_k, out_c):
    if rn == 1 and kn == 1 and cn == 1:
        out_r.append(r0)
        out_k.append(k0)
        out_c.append(c0)
        return
    r_parts = [(r0, rn)] if rn == 1 else [(r0, rn // 2), (r0 + rn // 2, rn // 2)]
    k_parts = [(k0, kn)] if kn == 1 else [(k0, kn // 2), (k0 + kn // 2, kn // 2)]
    c_parts = [(c0, cn)] if cn == 1 else [(c0, cn // 2), (c0 + cn // 2, cn // 2)]
    for ra, rb in r_parts:
        for ca, cb in c_parts:
            for ka, kb in k_parts:
                _emit(ra, rb, ka, kb, ca, cb, out_r, out_k, out_c)


@lru_cache(maxsize=64)
def matmul_streams(mb: int, nb: int, pb: int) -> tuple[MatmulStream, ...]:
    """Streams for an (mb x nb) by (nb x pb) block-grid multiply.

    All grid extents must be powers of two.  The depth-first order puts
    each top-level output quadrant in one contiguous chunk; those chunks
    are the per-systolic-array streams and advance in lockstep.
    """
    for dim, label in ((mb, "rows"), (nb, "inner"), (pb, "cols")):
        if dim < 1 or dim & (dim - 1):
            raise ValueError(f"block {label} count {dim} is not a power of two")
    rr, kk, cc = [], [], []
    _emit(0, mb, 0, nb, 0, pb, rr, kk, cc)
    rr = np.array(rr, dtype=np.int64)
    kk = np.array(kk, dtype=np.int64)
    cc = np.array(cc, dtype=np.int64)
    c_codes = _morton_encode_array(rr, cc)
    a_codes = _morton_encode_array(rr, kk)
    b_codes = _morton_encode_array(kk, cc)
    n_row_halves = 2 if mb > 1 else 1
    n_col_halves = 2 if pb > 1 else 1
    n_streams = n_row_halves * n_col_halves
    chunk = len(c_codes) // n_streams
    streams = []
    for q in range(n_streams):
        sl = slice(q * chunk, (q + 1) * chunk)
        streams.append(
            MatmulStream(
                row_half=q // n_col_halves,
                col_half=q % n_col_halves,
                c=c_codes[sl],
                a=a_codes[sl],
                b=b_codes[sl],
            )
        )
    return tuple(streams)


@lru_cache(maxsize=64)
def matmul_trace(mb: int, nb: int, pb: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unrolled (c, a, b) block-operation sequence, statement-interleaved.

    Statements (runs of operations accumulating into one output block)
    rotate round-robin across the top-level quadrant streams, reproducing
    the order block memory is visited.
    """
    streams = matmul_streams(mb, nb, pb)
    n = len(streams[0].c)
    # All streams share one run structure, so statement ids come from any one.
    stmt = np.zeros(n, dtype=np.int64)
    if n > 1:
        stmt[1:] = np.cumsum(streams[0].c[1:] != streams[0].c[:-1])
    order = np.argsort(
        np.concatenate([stmt * len(streams) + q for q in range(len(streams))]),
        kind="stable",
    )
    cat = lambda attr: np.concatenate([getattr(s, attr) for s in streams])[order]
    return cat("c"), cat("a"), cat("b")


# ---------------------------------------------------------------------------
# block matrix multiplication


_EXEC_CHUNK = 1 << 15


def _accumulate(out: ZMortonMatrix, rc, pa, pb):
    # np.add.at applies the addends in index order, keeping per-output-block
    # accumulation deterministic even with repeated ranks.
    for lo in range(0, len(rc), _EXEC_CHUNK):
        hi = min(lo + _EXEC_CHUNK, len(rc))
        np.add.at(out.blocks, rc[lo:hi], np.matmul(pa[lo:hi], pb[lo:hi]))


def _check_matmul_operands(a_rows, a_cols, b_rows, b_cols, la, lb):
    if la != lb:
        raise ValueError(f"block sides differ: {la} vs {lb}")
    if a_cols != b_rows:
        raise ValueError(f"inner dimensions differ: {a_cols} vs {b_rows}")


def recursive_matmul(
    A: ZMortonMatrix,
    B: ZMortonMatrix,
    counters: OpCounters | None = None,
    trace: list | None = None,
) -> ZMortonMatrix:
    """Divide-and-conquer block multiply over Z-Morton operands.

    Numerically equal to the dense product of the logical matrices; block
    memory is visited in the unrolled schedule order (pass `trace` to
    collect the (c, a, b) Morton-code triples).
    """
    _check_matmul_operands(A.rows, A.cols, B.rows, B.cols, A.l, B.l)
    cc, aa, bb = matmul_trace(A.block_rows, A.block_cols, B.block_cols)
    if trace is not None:
        trace.extend(zip(cc.tolist(), aa.tolist(), bb.tolist()))
    out = zmorton_zeros(A.rows, B.cols, A.l)
    _accumulate(out, out.ranks_of(cc), A.blocks[A.ranks_of(aa)], B.blocks[B.ranks_of(bb)])
    if counters is not None:
        counters.multiplies += A.rows * A.cols * B.cols
        counters.matmul_additions += A.rows * (A.cols - 1) * B.cols
    return out


def _bcoo_block_stack(U: BcooMatrix) -> np.ndarray:
    stack = np.zeros((len(U.bn), U.l, U.l))
    for t in range(len(U.bn)):
        lo, hi = int(U.bi[t]), int(U.bi[t + 1])
        stack[t, U.ai[lo:hi], U.aj[lo:hi]] = U.an[lo:hi]
    return stack


def block_matmul_sparse(
    U: BcooMatrix,
    V: ZMortonMatrix,
    counters: OpCounters | None = None,
    trace: list | None = None,
) -> ZMortonMatrix:
    """Sparse-left block multiply: products whose U block is absent are skipped.

    Equal to recursive_matmul on the decoded U, since skipped products are
    exactly zero.
    """
    _check_matmul_operands(U.rows, U.cols, V.rows, V.cols, U.l, V.l)
    mb = _next_pow2(-(-U.rows // U.l))
    nb = _next_pow2(-(-U.cols // U.l))
    cc, aa, bb = matmul_trace(mb, nb, V.block_cols)
    present = np.isin(aa, U.bn)
    cc, aa, bb = cc[present], aa[present], bb[present]
    if trace is not None:
        trace.extend(zip(cc.tolist(), aa.tolist(), bb.tolist()))
    out = zmorton_zeros(U.rows, V.cols, U.l)
    ustack = _bcoo_block_stack(U)
    _accumulate(
        out,
        out.ranks_of(cc),
        ustack[np.searchsorted(U.bn, aa)],
        V.blocks[V.ranks_of(bb)],
    )
    if counters is not None:
        rows_hit = len(np.unique(_bcoo_logical_rows(U)))
        counters.multiplies += U.nnz * V.cols
        counters.matmul_additions += max(0, U.nnz - rows_hit) * V.cols
    return out


def _decode_rows(codes: np.ndarray) -> np.ndarray:
    v = np.asarray(codes, dtype=np.int64) >> 1
    v = v & 0x55555555
    v = (v | (v >> 1)) & 0x33333333
    v = (v | (v >> 2)) & 0x0F0F0F0F
    v = (v | (v >> 4)) & 0x00FF00FF
    v = (v | (v >> 8)) & 0x0000FFFF
    return v


def _bcoo_logical_rows(U: BcooMatrix) -> np.ndarray:
    if U.nnz == 0:
        return np.zeros(0, dtype=np.int64)
    return np.repeat(_decode_rows(U.bn), np.diff(U.bi)) * U.l + U.ai


# ---------------------------------------------------------------------------
# convolution paths


def direct_conv(
    fm: np.ndarray,
    filters: np.ndarray,
    stride: int = 1,
    pad: int = 0,
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Literal triple-sum correlation: Y[k,i,j] = sum_{t,p,q} G[k,t,p,q] * D[t,i*s+p,j*s+q]."""
    fm = np.asarray(fm, dtype=float)
    filters = np.asarray(filters, dtype=float)
    C, H, W = fm.shape
    K, Cf, r, r2 = filters.shape
    if Cf != C or r != r2:
        raise ValueError("filter bank does not match the feature map")
    oh = (H + 2 * pad - r) // stride + 1
    ow = (W + 2 * pad - r) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError("non-positive output extent")
    padded = np.zeros((C, H + 2 * pad, W + 2 * pad))
    padded[:, pad : pad + H, pad : pad + W] = fm
    win = np.lib.stride_tricks.sliding_window_view(padded, (r, r), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :oh, :ow]
    out = np.einsum("chwpq,kcpq->khw", win, filters)
    if counters is not None:
        counters.multiplies += K * oh * ow * C * r * r
        counters.matmul_additions += K * oh * ow * (C * r * r - 1)
    return out


def _winograd_geometry(fm, filters, plan, pad):
    C, H, W = fm.shape
    K, Cf, r, r2 = filters.shape
    if Cf != C:
        raise ValueError(f"filter channels {Cf} != input channels {C}")
    if r != plan.r or r2 != plan.r:
        raise ValueError(f"filter width {r} != plan r={plan.r}")
    oh = H + 2 * pad - plan.r + 1
    ow = W + 2 * pad - plan.r + 1
    if oh < 1 or ow < 1:
        raise ValueError("non-positive output extent")
    return C, K, oh, ow


def transform_input_batch(fm, plan: WinogradPlan, pad: int) -> TransformedBatch:
    tiles = extract_tiles(fm, plan, pad)
    return scatter_to_matrices(transform_tiles(plan, tiles))


def winograd_conv_dense(
    fm: np.ndarray,
    filters: np.ndarray,
    plan: WinogradPlan,
    pad: int = 0,
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Winograd convolution via l*l dense block multiplies; equals direct_conv."""
    fm = np.asarray(fm, dtype=float)
    filters = np.asarray(filters, dtype=float)
    C, K, oh, ow = _winograd_geometry(fm, filters, plan, pad)
    vb = transform_input_batch(fm, plan, pad)
    ub = gather_filters(filters, plan)
    l = plan.l
    P = vb.at(0, 0).cols
    mats = np.empty((l, l, K, P))
    for i in range(l):
        for j in range(l):
            prod = recursive_matmul(ub.at(i, j), vb.at(i, j), counters=counters)
            mats[i, j] = from_zmorton(prod)
    return assemble_output(mats, plan, K, oh, ow, counters=counters)


def winograd_conv_sparse(
    fm: np.ndarray,
    u_sparse,
    plan: WinogradPlan,
    pad: int = 0,
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Winograd convolution with pre-transformed, pruned, BCOO-compressed weights.

    `u_sparse` is the sequence of l*l BcooMatrix weight matrices (K-by-C
    each) in (i, j) row-major position order.
    """
    fm = np.asarray(fm, dtype=float)
    l = plan.l
    if len(u_sparse) != l * l:
        raise ValueError(f"expected {l * l} sparse weight matrices, got {len(u_sparse)}")
    K = u_sparse[0].rows
    C = u_sparse[0].cols
    if fm.shape[0] != C:
        raise ValueError(f"weights expect {C} channels, input has {fm.shape[0]}")
    oh = fm.shape[1] + 2 * pad - plan.r + 1
    ow = fm.shape[2] + 2 * pad - plan.r + 1
    vb = transform_input_batch(fm, plan, pad)
    P = vb.at(0, 0).cols
    mats = np.empty((l, l, K, P))
    for i in range(l):
        for j in range(l):
            prod = block_matmul_sparse(u_sparse[i * l + j], vb.at(i, j), counters=counters)
            mats[i, j] = from_zmorton(prod)
    return assemble_output(mats, plan, K, oh, ow, counters=counters)


def compress_filters(filters, plan: WinogradPlan, target_sparsity: float):
    """Transform, magnitude-prune, and BCOO-encode a filter bank.

    Returns (pruned TransformedBatch, list of BcooMatrix, achieved sparsity).
    """
    from .bcoo import prune  # local import keeps module load order simple

    batch = gather_filters(np.asarray(filters, dtype=float), plan)
    pruned = prune(batch, target_sparsity)
    encoded = [bcoo_encode(mat) for mat in pruned]
    total = sum(mat.rows * mat.cols for mat in pruned)
    nnz = sum(enc.nnz for enc in encoded)
    achieved = 1.0 - nnz / total if total else 1.0
    return pruned, encoded, achieved


# ---------------------------------------------------------------------------
# auxiliary layers


def fc_layer(x, W, counters: OpCounters | None = None) -> np.ndarray:
    """W @ x through the block machinery (x widened to a one-column matrix)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("fc_layer expects a vector")
    if isinstance(W, BcooMatrix):
        if W.cols != len(x):
            raise ValueError(f"weight cols {W.cols} != input length {len(x)}")
        xz = to_zmorton(x[:, None], W.l)
        prod = block_matmul_sparse(W, xz, counters=counters)
    else:
        if isinstance(W, np.ndarray):
            W = to_zmorton(W, 4)
        if W.cols != len(x):
            raise ValueError(f"weight cols {W.cols} != input length {len(x)}")
        xz = to_zmorton(x[:, None], W.l)
        prod = recursive_matmul(W, xz, counters=counters)
    return from_zmorton(prod)[:, 0]


def relu(fm: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(fm, dtype=float), 0.0)


def maxpool2(fm: np.ndarray) -> np.ndarray:
    """2x2 stride-2 max pooling; odd trailing rows/columns pool over what exists."""
    fm = np.asarray(fm, dtype=float)
    C, H, W = fm.shape
    ph, pw = -(-H // 2), -(-W // 2)
    padded = np.full((C, ph * 2, pw * 2), -np.inf)
    padded[:, :H, :W] = fm
    return padded.reshape(C, ph, 2, pw, 2).max(axis=(2, 4))


def run_network(
    net: NetworkSpec,
    x: np.ndarray,
    weights,
    mode: str = "direct",
    plan: WinogradPlan | None = None,
    sparsity: float = 0.0,
    relu_after_conv: bool = True,
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Execute a network layer by layer.

    mode is one of "direct", "dense" (Winograd), "sparse" (Winograd with
    magnitude-pruned weights at `sparsity`).  All modes agree when
    sparsity is zero.
    """
    if mode not in ("direct", "dense", "sparse"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=float)
    net.chain_shapes(x.shape[0], x.shape[1], x.shape[2])  # validates adjacency
    for it in net.items:
        if isinstance(it, LayerSpec):
            w = np.asarray(weights[it.name], dtype=float)
            if mode == "direct":
                x = direct_conv(x, w, stride=it.stride, pad=it.pad, counters=counters)
            else:
                if plan is None:
                    raise ValueError("winograd modes need a plan")
                if it.stride != 1:
                    raise ValueError(f"{it.name}: winograd path requires stride 1")
                if mode == "dense":
                    x = winograd_conv_dense(x, w, plan, pad=it.pad, counters=counters)
                else:
                    _, enc, _ = compress_filters(w, plan, sparsity)
                    x = winograd_conv_sparse(x, enc, plan, pad=it.pad, counters=counters)
            if relu_after_conv:
                x = relu(x)
        elif isinstance(it, PoolSpec):
            x = maxpool2(x)
        elif isinstance(it, FcSpec):
            x = fc_layer(x.reshape(-1), to_zmorton(np.asarray(weights[it.name], dtype=float), 4), counters=counters)
            x = x[:, None, None]
        else:
            raise TypeError(f"unknown network item {it!r}")
    return x


# ---------------------------------------------------------------------------
# dense tensor container: int64 ndim, int64 shape[ndim], float64 data (C order)


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=float)
    head = struct.pack("<q", arr.ndim) + struct.pack(f"<{arr.ndim}q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise ValueError("truncated tensor header")
    (ndim,) = struct.unpack_from("<q", buf, 0)
    if ndim < 0 or len(buf) < 8 + 8 * ndim:
        raise ValueError("malformed tensor header")
    shape = struct.unpack_from(f"<{ndim}q", buf, 8)
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=8 + 8 * ndim)
    return data.reshape(shape).copy()


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())
