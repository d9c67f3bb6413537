import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from winosim.bcoo import bcoo_decode, bcoo_encode
from winosim.engine import (
    FcSpec,
    LayerSpec,
    NetworkSpec,
    PoolSpec,
    block_matmul_sparse,
    compress_filters,
    direct_conv,
    fc_layer,
    load_tensor,
    matmul_streams,
    matmul_trace,
    maxpool2,
    recursive_matmul,
    relu,
    run_network,
    save_tensor,
    winograd_conv_dense,
    winograd_conv_sparse,
)
from winosim.layout import from_zmorton, to_zmorton
from winosim.plans import OpCounters, make_plan


@pytest.fixture(scope="module")
def plan():
    return make_plan(2, 3)


def _rel_err(got, want):
    return float(np.max(np.abs(got - want)) / max(1.0, float(np.max(np.abs(want)))))


# ---------------------------------------------------------------------------
# direct convolution oracle


def test_direct_conv_ones_window():
    out = direct_conv(np.ones((1, 4, 4)), np.ones((1, 1, 3, 3)))
    assert np.array_equal(out, np.full((1, 2, 2), 9.0))


def test_direct_conv_impulse_response():
    fm = np.zeros((1, 5, 5))
    fm[0, 2, 2] = 1.0
    flt = np.arange(9.0).reshape(1, 1, 3, 3)
    out = direct_conv(fm, flt)
    # correlation: the filter reappears reversed across the window positions
    assert np.array_equal(out[0], flt[0, 0, ::-1, ::-1])


def test_direct_conv_against_scalar_reimplementation():
    rng = np.random.default_rng(0)
    fm = rng.uniform(-1, 1, (2, 8, 8))
    flt = rng.uniform(-1, 1, (3, 2, 3, 3))
    pad = 1
    got = direct_conv(fm, flt, pad=pad)

    padded = np.zeros((2, 10, 10))
    padded[:, 1:9, 1:9] = fm
    want = np.zeros((3, 8, 8))
    for k in range(3):
        for i in range(8):
            for j in range(8):
                acc = 0.0
                for t in range(2):
                    for p in range(3):
                        for q in range(3):
                            acc += flt[k, t, p, q] * padded[t, i + p, j + q]
                want[k, i, j] = acc
    assert _rel_err(got, want) <= 1e-12


def test_direct_conv_stride():
    rng = np.random.default_rng(1)
    fm = rng.uniform(-1, 1, (1, 7, 7))
    flt = rng.uniform(-1, 1, (1, 1, 3, 3))
    got = direct_conv(fm, flt, stride=2)
    full = direct_conv(fm, flt, stride=1)
    assert np.array_equal(got, full[:, ::2, ::2])


def test_direct_conv_rejects_empty_output():
    with pytest.raises(ValueError):
        direct_conv(np.ones((1, 2, 2)), np.ones((1, 1, 3, 3)), pad=0)


# ---------------------------------------------------------------------------
# recursive matmul and its schedule


def test_base_case_identity(plan):
    rng = np.random.default_rng(2)
    m = rng.uniform(-1, 1, (4, 4))
    got = recursive_matmul(to_zmorton(np.eye(4), 4), to_zmorton(m, 4))
    assert np.allclose(from_zmorton(got), m, rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(
    rows=st.integers(1, 40),
    inner=st.integers(1, 40),
    cols=st.integers(1, 40),
    seed=st.integers(0, 999),
)
def test_recursive_matmul_matches_dense(rows, inner, cols, seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, (rows, inner))
    B = rng.uniform(-1, 1, (inner, cols))
    got = from_zmorton(recursive_matmul(to_zmorton(A, 4), to_zmorton(B, 4)))
    assert _rel_err(got, A @ B) <= 1e-10


def test_recursive_matmul_desk_scale():
    rng = np.random.default_rng(3)
    A = rng.uniform(-1, 1, (64, 64))
    B = rng.uniform(-1, 1, (64, 64))
    got = from_zmorton(recursive_matmul(to_zmorton(A, 4), to_zmorton(B, 4)))
    assert _rel_err(got, A @ B) <= 1e-10


def test_recursive_matmul_dimension_mismatch():
    with pytest.raises(ValueError):
        recursive_matmul(to_zmorton(np.eye(4), 4), to_zmorton(np.ones((8, 4)), 4))


def test_trace_16x16_reference_schedule():
    # four-array lockstep over the top-level output quadrants
    cc, aa, bb = matmul_trace(4, 4, 4)
    head = list(zip(cc[:8].tolist(), aa[:8].tolist(), bb[:8].tolist()))
    assert head == [
        (0, 0, 0), (0, 1, 2),
        (4, 0, 4), (4, 1, 6),
        (8, 8, 0), (8, 9, 2),
        (12, 8, 4), (12, 9, 6),
    ]
    # later statements revisit C_0 with the second half of the inner dimension
    trail = list(zip(cc.tolist(), aa.tolist(), bb.tolist()))
    assert (0, 4, 8) in trail and (0, 5, 10) in trail


def test_trace_8x8_first_statement():
    cc, aa, bb = matmul_trace(2, 2, 2)
    assert (cc[0], aa[0], bb[0]) == (0, 0, 0)
    assert (cc[1], aa[1], bb[1]) == (0, 1, 2)


def test_trace_first_visit_order_of_left_operand():
    cc, aa, bb = matmul_trace(4, 4, 4)
    assert aa[:8].tolist() == [0, 1, 0, 1, 8, 9, 8, 9]
    assert bb[:8].tolist() == [0, 2, 4, 6, 0, 2, 4, 6]


def test_trace_via_recursive_matmul_argument():
    rng = np.random.default_rng(4)
    A = to_zmorton(rng.uniform(-1, 1, (8, 8)), 4)
    B = to_zmorton(rng.uniform(-1, 1, (8, 8)), 4)
    trace = []
    recursive_matmul(A, B, trace=trace)
    assert trace[:2] == [(0, 0, 0), (0, 1, 2)]
    assert len(trace) == 8


def test_streams_lockstep_operand_sharing():
    streams = matmul_streams(4, 4, 4)
    assert len(streams) == 4
    for p in range(len(streams[0].a)):
        a_set = {int(s.a[p]) for s in streams}
        b_set = {int(s.b[p]) for s in streams}
        assert len(a_set) == 2 and len(b_set) == 2  # pairwise sharing each step


def test_accumulation_ascending_inner(plan):
    # contributions to each output block arrive in ascending inner order
    cc, aa, bb = matmul_trace(4, 4, 4)
    per_c = {}
    for c, a in zip(cc.tolist(), aa.tolist()):
        per_c.setdefault(c, []).append(a)
    for c, a_seq in per_c.items():
        assert a_seq == sorted(a_seq)


# ---------------------------------------------------------------------------
# sparse block matmul


def test_sparse_zero_and_dense_extremes():
    rng = np.random.default_rng(5)
    B = to_zmorton(rng.uniform(-1, 1, (16, 16)), 4)
    zero_u = bcoo_encode(to_zmorton(np.zeros((16, 16)), 4))
    assert np.array_equal(from_zmorton(block_matmul_sparse(zero_u, B)), np.zeros((16, 16)))

    A = rng.uniform(-1, 1, (16, 16))
    dense_u = bcoo_encode(to_zmorton(A, 4))
    got = from_zmorton(block_matmul_sparse(dense_u, B))
    want = from_zmorton(recursive_matmul(to_zmorton(A, 4), B))
    assert np.array_equal(got, want)


def test_sparse_matches_decoded_dense():
    rng = np.random.default_rng(6)
    A = rng.uniform(-1, 1, (20, 12))
    A[np.abs(A) < 0.6] = 0.0
    B = rng.uniform(-1, 1, (12, 28))
    enc = bcoo_encode(to_zmorton(A, 4))
    got = from_zmorton(block_matmul_sparse(enc, to_zmorton(B, 4)))
    want = from_zmorton(recursive_matmul(bcoo_decode(enc), to_zmorton(B, 4)))
    assert _rel_err(got, want) <= 1e-10


def test_sparse_executes_only_present_blocks():
    # left operand holding only blocks 2 and 5 drives exactly the products
    # that consume those blocks
    A = np.zeros((16, 16))
    A[4:8, 0:4] = 1.0  # block (1, 0) -> morton 2
    A[0:4, 12:16] = 2.0  # block (0, 3) -> morton 5
    enc = bcoo_encode(to_zmorton(A, 4))
    assert enc.bn.tolist() == [2, 5]
    trace = []
    B = to_zmorton(np.random.default_rng(7).uniform(-1, 1, (16, 16)), 4)
    block_matmul_sparse(enc, B, trace=trace)
    cc_all, aa_all, bb_all = matmul_trace(4, 4, 4)
    want = [
        (c, a, b)
        for c, a, b in zip(cc_all.tolist(), aa_all.tolist(), bb_all.tolist())
        if a in (2, 5)
    ]
    assert trace == want
    assert len(trace) == 8  # each left block feeds 4 output blocks


# ---------------------------------------------------------------------------
# winograd convolution paths


def test_winograd_single_tile_case(plan):
    rng = np.random.default_rng(8)
    fm = rng.uniform(-1, 1, (1, 2, 2))
    flt = rng.uniform(-1, 1, (1, 1, 3, 3))
    got = winograd_conv_dense(fm, flt, plan, pad=1)
    want = direct_conv(fm, flt, pad=1)
    assert _rel_err(got, want) <= 1e-10


def test_winograd_matches_direct_random(plan):
    rng = np.random.default_rng(9)
    fm = rng.uniform(-1, 1, (8, 16, 16))
    flt = rng.uniform(-1, 1, (4, 8, 3, 3))
    got = winograd_conv_dense(fm, flt, plan, pad=1)
    want = direct_conv(fm, flt, pad=1)
    assert _rel_err(got, want) <= 1e-10


def test_winograd_multiply_counter(plan):
    # element-wise multiply count = tiles * C * K * l^2
    rng = np.random.default_rng(10)
    fm = rng.uniform(-1, 1, (3, 8, 8))
    flt = rng.uniform(-1, 1, (5, 3, 3, 3))
    counters = OpCounters()
    winograd_conv_dense(fm, flt, plan, pad=1, counters=counters)
    assert counters.multiplies == 16 * 3 * 5 * 16
    assert counters.matmul_additions == 16 * (3 - 1) * 5 * 16
    assert counters.inverse_transforms == 5 * 16


def test_winograd_2d_per_tile_multiplies(plan):
    fast, slow = OpCounters(), OpCounters()
    rng = np.random.default_rng(11)
    fm = rng.uniform(-1, 1, (1, 4, 4))
    flt = rng.uniform(-1, 1, (1, 1, 3, 3))
    winograd_conv_dense(fm, flt, plan, pad=0, counters=fast)
    direct_conv(fm, flt, pad=0, counters=slow)
    assert fast.multiplies == 16
    assert slow.multiplies == 36


def test_sparse_conv_extremes(plan):
    rng = np.random.default_rng(12)
    fm = rng.uniform(-1, 1, (4, 8, 8))
    flt = rng.uniform(-1, 1, (3, 4, 3, 3))
    _, enc0, _ = compress_filters(flt, plan, 0.0)
    got = winograd_conv_sparse(fm, enc0, plan, pad=1)
    want = winograd_conv_dense(fm, flt, plan, pad=1)
    assert np.array_equal(got, want)

    _, enc1, _ = compress_filters(flt, plan, 1.0)
    assert np.array_equal(winograd_conv_sparse(fm, enc1, plan, pad=1), np.zeros((3, 8, 8)))


def test_sparse_conv_matches_decoded_dense(plan):
    rng = np.random.default_rng(13)
    fm = rng.uniform(-1, 1, (6, 10, 10))
    flt = rng.uniform(-1, 1, (5, 6, 3, 3))
    pruned, enc, achieved = compress_filters(flt, plan, 0.7)
    assert achieved >= 0.7
    got = winograd_conv_sparse(fm, enc, plan, pad=1)

    l = plan.l
    from winosim.engine import transform_input_batch
    from winosim.layout import assemble_output

    vb = transform_input_batch(fm, plan, 1)
    P = vb.at(0, 0).cols
    mats = np.empty((l, l, 5, P))
    for i in range(l):
        for j in range(l):
            mats[i, j] = from_zmorton(recursive_matmul(bcoo_decode(enc[i * l + j]), vb.at(i, j)))
    want = assemble_output(mats, plan, 5, 10, 10)
    assert _rel_err(got, want) <= 1e-10


# ---------------------------------------------------------------------------
# auxiliary layers


def test_fc_identity_and_oracle():
    x = np.arange(8.0)
    assert np.allclose(fc_layer(x, to_zmorton(np.eye(8), 4)), x, rtol=0, atol=1e-15)
    rng = np.random.default_rng(14)
    W = rng.uniform(-1, 1, (8, 8))
    want = np.array([np.dot(W[i], x) for i in range(8)])
    assert _rel_err(fc_layer(x, to_zmorton(W, 4)), want) <= 1e-12


def test_fc_bcoo_consistency():
    rng = np.random.default_rng(15)
    W = rng.uniform(-1, 1, (12, 8))
    W[np.abs(W) < 0.5] = 0.0
    x = rng.uniform(-1, 1, 8)
    enc = bcoo_encode(to_zmorton(W, 4))
    assert np.array_equal(fc_layer(x, enc), fc_layer(x, bcoo_decode(enc)))


def test_relu():
    assert np.array_equal(relu(np.array([[[-1.0, 2.0]]])), [[[0.0, 2.0]]])


def test_maxpool2_basic_and_odd():
    assert maxpool2(np.array([[[1.0, 2.0], [3.0, 4.0]]]))[0, 0, 0] == 4.0
    ramp = np.arange(16.0).reshape(1, 4, 4)
    got = maxpool2(ramp)
    want = np.array([[[5.0, 7.0], [13.0, 15.0]]])
    assert np.array_equal(got, want)
    # odd extents: missing positions are ignored
    odd = np.arange(9.0).reshape(1, 3, 3)
    assert np.array_equal(maxpool2(odd), [[[4.0, 5.0], [7.0, 8.0]]])


# ---------------------------------------------------------------------------
# networks


def _toy_net():
    return NetworkSpec(
        items=(
            LayerSpec("c1", H=8, W=8, C=2, K=4, r=3, pad=1),
            PoolSpec(),
            LayerSpec("c2", H=4, W=4, C=4, K=3, r=3, pad=1),
            LayerSpec("c3", H=4, W=4, C=3, K=2, r=3, pad=1),
        )
    )


def _toy_weights(rng):
    return {
        "c1": rng.uniform(-1, 1, (4, 2, 3, 3)),
        "c2": rng.uniform(-1, 1, (3, 4, 3, 3)),
        "c3": rng.uniform(-1, 1, (2, 3, 3, 3)),
    }


def test_single_layer_network_equals_layer_op(plan):
    rng = np.random.default_rng(16)
    net = NetworkSpec(items=(LayerSpec("c", H=6, W=6, C=2, K=2, r=3, pad=1),))
    w = {"c": rng.uniform(-1, 1, (2, 2, 3, 3))}
    x = rng.uniform(-1, 1, (2, 6, 6))
    got = run_network(net, x, w, "direct", relu_after_conv=False)
    assert np.array_equal(got, direct_conv(x, w["c"], pad=1))


def test_network_modes_agree(plan):
    rng = np.random.default_rng(17)
    net = _toy_net()
    w = _toy_weights(rng)
    x = rng.uniform(-1, 1, (2, 8, 8))
    y_direct = run_network(net, x, w, "direct")
    y_dense = run_network(net, x, w, "dense", plan=plan)
    y_sparse = run_network(net, x, w, "sparse", plan=plan, sparsity=0.0)
    assert _rel_err(y_dense, y_direct) <= 1e-9
    assert _rel_err(y_sparse, y_direct) <= 1e-9


def test_network_chain_validation():
    net = _toy_net()
    with pytest.raises(ValueError):
        net.chain_shapes(3, 8, 8)  # wrong channel count
    shapes = net.chain_shapes(2, 8, 8)
    assert shapes[-1] == (2, 4, 4)


def test_network_with_fc(plan):
    rng = np.random.default_rng(18)
    net = NetworkSpec(
        items=(
            LayerSpec("c1", H=4, W=4, C=1, K=2, r=3, pad=1),
            FcSpec("f1", 2 * 4 * 4, 3),
        )
    )
    w = {"c1": rng.uniform(-1, 1, (2, 1, 3, 3)), "f1": rng.uniform(-1, 1, (3, 32))}
    x = rng.uniform(-1, 1, (1, 4, 4))
    y = run_network(net, x, w, "direct")
    assert y.shape == (3, 1, 1)


# ---------------------------------------------------------------------------
# layer spec validation and tensor container


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec("bad", H=4, W=4, C=1, K=1, r=4)
    with pytest.raises(ValueError):
        LayerSpec("bad", H=0, W=4, C=1, K=1)


def test_tensor_container_round_trip(tmp_path):
    rng = np.random.default_rng(19)
    arr = rng.uniform(-1, 1, (3, 5, 7))
    path = tmp_path / "t.tensor"
    save_tensor(path, arr)
    back = load_tensor(path)
    assert np.array_equal(back, arr)
    # header: ndim then dims, little-endian int64
    raw = path.read_bytes()
    assert np.frombuffer(raw[:32], dtype="<i8").tolist() == [3, 3, 5, 7]
