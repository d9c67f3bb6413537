import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from winosim.bcoo import (
    BcooFormatError,
    BcooMatrix,
    bcoo_decode,
    bcoo_encode,
    bcoo_from_bytes,
    bcoo_to_bytes,
    iter_nonzero_blocks,
    load_bcoo,
    prune,
    save_bcoo,
)
from winosim.layout import TransformedBatch, from_zmorton, to_zmorton


def _random_sparse(rng, rows, cols, sparsity):
    m = rng.uniform(-1, 1, (rows, cols))
    m[rng.uniform(0, 1, m.shape) < sparsity] = 0.0
    return m


def test_encode_empty():
    enc = bcoo_encode(to_zmorton(np.zeros((8, 8)), 4))
    assert enc.bn.tolist() == []
    assert enc.bi.tolist() == [0]
    assert enc.nnz == 0
    assert np.array_equal(from_zmorton(bcoo_decode(enc)), np.zeros((8, 8)))


def test_encode_block5_example():
    # block at morton index 5 = block (row 0, col 3) with nonzeros at
    # (0,0), (1,2), (3,1): row-major listing order
    m = np.zeros((4, 16))
    m[0, 12 + 0] = 1.5
    m[1, 12 + 2] = -2.5
    m[3, 12 + 1] = 3.5
    enc = bcoo_encode(to_zmorton(m, 4))
    assert enc.bn.tolist() == [5]
    assert enc.ai.tolist() == [0, 1, 3]
    assert enc.aj.tolist() == [0, 2, 1]
    assert enc.an.tolist() == [1.5, -2.5, 3.5]


def test_encode_dense_8x8():
    m = np.random.default_rng(0).uniform(0.5, 1.0, (8, 8))
    enc = bcoo_encode(to_zmorton(m, 4))
    assert enc.bn.tolist() == [0, 1, 2, 3]
    assert enc.nnz == 64
    assert np.array_equal(from_zmorton(bcoo_decode(enc)), m)


@settings(max_examples=80, deadline=None)
@given(
    rows=st.integers(1, 20),
    cols=st.integers(1, 20),
    sparsity=st.sampled_from([0.0, 0.3, 0.7, 0.95, 1.0]),
    seed=st.integers(0, 10_000),
)
def test_round_trip_property(rows, cols, sparsity, seed):
    m = _random_sparse(np.random.default_rng(seed), rows, cols, sparsity)
    enc = bcoo_encode(to_zmorton(m, 4))
    assert np.array_equal(from_zmorton(bcoo_decode(enc)), m)


def test_decode_rejects_out_of_range_ai():
    enc = bcoo_encode(to_zmorton(np.eye(4), 4))
    bad = BcooMatrix(
        rows=enc.rows, cols=enc.cols, l=enc.l,
        bn=enc.bn, bi=enc.bi,
        ai=enc.ai.copy(), aj=enc.aj, an=enc.an,
    )
    bad.ai[0] = 4
    with pytest.raises(BcooFormatError):
        bcoo_decode(bad)


def test_decode_rejects_bad_bi():
    enc = bcoo_encode(to_zmorton(np.eye(4), 4))
    bad = BcooMatrix(
        rows=enc.rows, cols=enc.cols, l=enc.l,
        bn=enc.bn, bi=np.array([1, 4]), ai=enc.ai, aj=enc.aj, an=enc.an,
    )
    with pytest.raises(BcooFormatError):
        bcoo_decode(bad)


def test_decode_rejects_duplicate_position():
    bad = BcooMatrix(
        rows=4, cols=4, l=4,
        bn=np.array([0]), bi=np.array([0, 2]),
        ai=np.array([1, 1]), aj=np.array([2, 2]), an=np.array([1.0, 2.0]),
    )
    with pytest.raises(BcooFormatError):
        bcoo_decode(bad)


def test_iter_nonzero_blocks_order():
    m = np.zeros((8, 8))
    m[4, 0] = 1.0  # block (1, 0) -> morton 2
    m[0, 4] = 2.0  # block (0, 1) -> morton 1
    enc = bcoo_encode(to_zmorton(m, 4))
    items = list(iter_nonzero_blocks(enc))
    assert [code for code, _ in items] == [1, 2]
    assert items[0][1][0, 0] == 2.0
    assert items[1][1][0, 0] == 1.0
    assert list(iter_nonzero_blocks(bcoo_encode(to_zmorton(np.zeros((8, 8)), 4)))) == []


def _batch_of(mat):
    zm = to_zmorton(mat, 4)
    return TransformedBatch(l=1, mats=[zm])


def test_prune_identity_and_total():
    m = np.random.default_rng(1).uniform(-1, 1, (6, 6))
    batch = _batch_of(m)
    assert np.array_equal(from_zmorton(prune(batch, 0.0).mats[0]), m)
    assert np.array_equal(from_zmorton(prune(batch, 1.0).mats[0]), np.zeros((6, 6)))


def test_prune_smallest_magnitude():
    m = np.array([[3.0, 1.0], [-4.0, 2.0]])
    got = from_zmorton(prune(_batch_of(m), 0.5).mats[0])
    assert np.array_equal(got, [[3.0, 0.0], [-4.0, 0.0]])


def test_prune_keeps_surviving_values_and_meets_target():
    rng = np.random.default_rng(2)
    m = rng.uniform(-1, 1, (9, 7))
    for target in (0.25, 0.5, 0.8):
        got = from_zmorton(prune(_batch_of(m), target).mats[0])
        sparsity = np.count_nonzero(got == 0.0) / got.size
        assert sparsity >= target
        surviving = got != 0.0
        assert np.array_equal(got[surviving], m[surviving])


def test_prune_counts_existing_zeros():
    m = np.zeros((4, 4))
    m[0, 0] = 5.0
    got = from_zmorton(prune(_batch_of(m), 0.9).mats[0])
    assert np.count_nonzero(got == 0.0) == 15  # ceil(0.9*16) = 15, one survivor
    assert got[0, 0] == 5.0


def test_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    m = _random_sparse(rng, 12, 9, 0.6)
    enc = bcoo_encode(to_zmorton(m, 4))
    blob = bcoo_to_bytes(enc)
    # header: rows, cols, l, n_blocks, nnz as little-endian int64
    head = np.frombuffer(blob[:40], dtype="<i8")
    assert head.tolist() == [12, 9, 4, len(enc.bn), enc.nnz]
    dec, consumed = bcoo_from_bytes(blob)
    assert consumed == len(blob)
    assert np.array_equal(from_zmorton(bcoo_decode(dec)), m)

    path = tmp_path / "w.bcoo"
    save_bcoo(path, enc)
    assert np.array_equal(from_zmorton(bcoo_decode(load_bcoo(path))), m)


def test_deserialization_rejects_truncation():
    enc = bcoo_encode(to_zmorton(np.eye(4), 4))
    blob = bcoo_to_bytes(enc)
    with pytest.raises(BcooFormatError):
        bcoo_from_bytes(blob[:-4])
