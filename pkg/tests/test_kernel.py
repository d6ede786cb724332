import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from veclut.core import ActivationView, KernelConfig, KernelStats, TernaryMatrix
from veclut.errors import (
    BlockBoundViolation,
    ConfigInfeasible,
    DivisibilityError,
    NonFiniteInput,
    ShapeMismatch,
)
from veclut.kernel import (
    FeatureMajorActivation,
    GemmProblem,
    apply_scales,
    config_for_schedule,
    full_lut_bytes,
    hierarchical_accumulate,
    mpgemm,
    quantize_activation,
    select_tiles,
    transpose_to_token_major,
)
from veclut.packing import make_group_schedule, pack_matrix
from veclut.reference import naive_gemm_int

BACKENDS = ["numba", "numpy"]


def problem(rng, M, K, N, mode="mixed", **cfg_kw):
    schedule = make_group_schedule(K, mode)
    cfg = config_for_schedule(schedule, **cfg_kw)
    W = TernaryMatrix(rng.integers(-1, 2, (M, K)))
    A = ActivationView(rng.integers(-127, 128, (K, N)))
    return W, A, cfg, pack_matrix(W, mode, cfg)


# ---- tile selection and sizes ----

def test_select_tiles_examples():
    assert select_tiles(4, 49152, 256) == (16, 32)
    assert select_tiles(5, 65536, 128) == (10, 32)
    assert select_tiles(5, 16384, 128) == (5, 32)
    with pytest.raises(ConfigInfeasible):
        select_tiles(5, 15551, 128)


@pytest.mark.parametrize("g", [4, 5])
@pytest.mark.parametrize("l1", [16384, 32768, 49152, 65536, 1 << 20])
@pytest.mark.parametrize("simd", [128, 256, 512])
def test_select_tiles_fits_l1(g, l1, simd):
    k, n = select_tiles(g, l1, simd)
    assert k % g == 0 and n % (simd // 16) == 0
    assert 3**g * n * (k // g) * 2 <= l1


def test_full_lut_bytes():
    assert full_lut_bytes(14436, 512, 4) == 299_344_896
    assert full_lut_bytes(4, 1, 4) == 162
    assert full_lut_bytes(8640, 32, 5) == 26_873_856
    with pytest.raises(DivisibilityError):
        full_lut_bytes(14436, 1, 5)


def test_config_for_mixed_schedule_fits():
    cfg = config_for_schedule(make_group_schedule(4096, "mixed"))
    assert cfg.lut_tile_bytes(4, 5) <= cfg.l1_bytes
    assert cfg.k_tile == 10


# ---- transposition ----

def test_transpose_examples():
    v = transpose_to_token_major(np.array([[1, 2, 3], [4, 5, 6]]))
    assert v.data.tolist() == [[1, 4], [2, 5], [3, 6]]
    one = transpose_to_token_major(np.array([[7, -3, 2]]))
    assert one.data[:, 0].tolist() == [7, -3, 2]


@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**31))
def test_transpose_involution(n, k, seed):
    a = np.random.default_rng(seed).integers(-127, 128, (n, k)).astype(np.int8)
    back = transpose_to_token_major(transpose_to_token_major(a).data)
    assert np.array_equal(back.data, a)


# ---- hierarchical accumulation ----

def test_adversarial_block_64():
    rows = np.full((81, 8), 508, dtype=np.int16)
    out = hierarchical_accumulate(rows, np.full(64, 80), block_B=64, g=4)
    assert out.dtype == np.int32 and np.all(out == 32512)
    out = hierarchical_accumulate(rows, np.full(640, 80), block_B=64, g=4)
    assert np.all(out == 325120)


def test_block_65_rejected():
    rows = np.zeros((81, 4), dtype=np.int16)
    with pytest.raises(BlockBoundViolation):
        hierarchical_accumulate(rows, np.zeros(65, dtype=np.uint8), block_B=65, g=4)
    with pytest.raises(BlockBoundViolation):
        hierarchical_accumulate(np.zeros((243, 4), np.int16), np.zeros(3, np.uint8), block_B=52, g=5)


@given(st.integers(1, 64), st.integers(0, 300), st.integers(0, 2**31))
def test_hierarchical_equals_int32(block, n, seed):
    rng = np.random.default_rng(seed)
    rows = rng.integers(-508, 509, (81, 16)).astype(np.int16)
    idx = rng.integers(0, 81, n)
    want = rows.astype(np.int32)[idx].sum(axis=0)
    assert np.array_equal(hierarchical_accumulate(rows, idx, block, 4), want)


# ---- mpgemm ----

@pytest.mark.parametrize("backend", BACKENDS)
def test_zero_weights_give_zero(backend, rng):
    W = TernaryMatrix(np.zeros((33, 40), dtype=np.int8))
    A = ActivationView(rng.integers(-127, 128, (40, 9)))
    cfg = config_for_schedule(make_group_schedule(40, "mixed"))
    out = mpgemm(GemmProblem(pack_matrix(W, "mixed", cfg), A, cfg), backend=backend)
    assert not out.data_i32.any()


@pytest.mark.parametrize("backend", BACKENDS)
def test_selector_row(backend, rng):
    W = np.zeros((3, 20), dtype=np.int8)
    W[1, 13] = 1
    A = ActivationView(rng.integers(-127, 128, (20, 5)))
    cfg = config_for_schedule(make_group_schedule(20, "i1"))
    out = mpgemm(GemmProblem(pack_matrix(TernaryMatrix(W), "i1", cfg), A, cfg), backend=backend)
    assert np.array_equal(out.data_i32[1], A.data[13].astype(np.int32))
    assert not out.data_i32[[0, 2]].any()


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("mode,K", [("i1", 320), ("i2", 320), ("mixed", 3200), ("mixed", 23)])
@pytest.mark.parametrize("N", [1, 31, 32, 70])
def test_exact_against_oracle(backend, mode, K, N, rng):
    W, A, cfg, P = problem(rng, 45, K, N, mode)
    assert np.array_equal(mpgemm(GemmProblem(P, A, cfg), backend=backend).data_i32,
                          naive_gemm_int(W, A).data_i32)


def test_extreme_values_exact():
    # every weight +1 and every activation +127: the largest sums possible
    K = 8640
    W = TernaryMatrix(np.ones((40, K), dtype=np.int8))
    A = ActivationView(np.full((K, 33), 127, dtype=np.int8))
    for mode in ("i1", "i2"):
        cfg = config_for_schedule(make_group_schedule(K, mode))
        out = mpgemm(GemmProblem(pack_matrix(W, mode, cfg), A, cfg)).data_i32
        assert np.all(out == 127 * K)
        neg = ActivationView(-A.data)
        assert np.all(mpgemm(GemmProblem(pack_matrix(W, mode, cfg), neg, cfg)).data_i32 == -127 * K)


@pytest.mark.parametrize("backend", BACKENDS)
def test_layouts_and_threads(backend, rng):
    W, A, cfg, P = problem(rng, 100, 230, 45)
    want = naive_gemm_int(W, A).data_i32
    fm = FeatureMajorActivation(np.ascontiguousarray(A.data.T))
    for threads in (1, 3):
        c = dataclasses.replace(cfg, threads=threads)
        for act in (A, fm):
            for layout in ("token", "feature"):
                out = mpgemm(GemmProblem(P, act, c), out_layout=layout, backend=backend)
                assert np.array_equal(out.data_i32, want)
                if layout == "feature":
                    assert out.data_i32.T.flags.c_contiguous


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize(
    "k_tile,n_tile,m_tile,block_B",
    [(5, 16, 8, 1), (10, 32, 32, None), (10, 64, 16, 2), (4, 16, 1, None), (16, 48, 32, 3), (5, 16, 64, None)],
)
def test_any_legal_tiling_is_exact(backend, k_tile, n_tile, m_tile, block_B, rng):
    K, M, N = 57, 70, 50
    sched = make_group_schedule(K, "mixed")
    cfg = KernelConfig(k_tile=k_tile, n_tile=n_tile, block_B=block_B, l1_bytes=1 << 20).check(sched.groups)
    W = TernaryMatrix(rng.integers(-1, 2, (M, K)))
    A = ActivationView(rng.integers(-127, 128, (K, N)))
    P = pack_matrix(W, "mixed", cfg, m_tile=m_tile)
    out = mpgemm(GemmProblem(P, A, cfg), backend=backend)
    assert np.array_equal(out.data_i32, naive_gemm_int(W, A).data_i32)


@given(
    M=st.integers(1, 70),
    K=st.sampled_from([8, 9, 10, 20, 24, 45, 48, 64]),
    N=st.integers(1, 70),
    threads=st.integers(1, 4),
    seed=st.integers(0, 2**31),
)
def test_exact_property(M, K, N, threads, seed):
    rng = np.random.default_rng(seed)
    W, A, cfg, P = problem(rng, M, K, N, threads=threads)
    assert np.array_equal(mpgemm(GemmProblem(P, A, cfg)).data_i32, naive_gemm_int(W, A).data_i32)


@pytest.mark.parametrize("backend", BACKENDS)
def test_stats_and_streaming_bound(backend, rng):
    W, A, cfg, P = problem(rng, 200, 3200, 70, "i1", threads=3)
    st_ = KernelStats()
    mpgemm(GemmProblem(P, A, cfg), stats=st_, backend=backend)
    n_tiles = -(-70 // cfg.n_tile)
    assert st_.lookups == 200 * 640 * n_tiles
    # every worker builds its own private copy of each LUT tile
    assert len(st_.worker_lut_bytes) == 3
    assert st_.precompute_ops == 3 * 640 * 242 * n_tiles
    assert st_.table_builds == 3 * 640 * n_tiles
    bound = cfg.threads * 3**5 * cfg.n_tile * (cfg.k_tile // 5) * 2
    assert 0 < st_.peak_lut_bytes <= bound


def test_backends_report_same_stats(rng):
    W, A, cfg, P = problem(rng, 64, 4096, 40)
    stats = {}
    for b in BACKENDS:
        stats[b] = KernelStats()
        mpgemm(GemmProblem(P, A, cfg), stats=stats[b], backend=b)
    assert stats["numba"] == stats["numpy"]


def test_problem_validation(rng):
    W, A, cfg, P = problem(rng, 8, 40, 4)
    with pytest.raises(ShapeMismatch):
        GemmProblem(P, ActivationView(np.zeros((45, 4))), cfg)
    with pytest.raises(ConfigInfeasible):
        GemmProblem(P, A, dataclasses.replace(cfg, k_tile=5))
    with pytest.raises(ValueError):
        mpgemm(GemmProblem(P, A, cfg), out_layout="diagonal")


def test_empty_token_axis(rng):
    W, A, cfg, P = problem(rng, 8, 40, 0)
    assert mpgemm(GemmProblem(P, A, cfg)).data_i32.shape == (8, 0)


# ---- scales and quantisation ----

def test_apply_scales_unit():
    from veclut.core import OutputMatrix

    O = OutputMatrix(np.array([[3, -4]], dtype=np.int32))
    assert apply_scales(O, 1.0, np.ones(2)).data_f32.tolist() == [[3.0, -4.0]]
    assert apply_scales(O, 0.5, np.full(2, 2.0)).data_f32.tolist() == [[3.0, -4.0]]


def test_apply_scales_one_ulp(rng):
    from veclut.core import OutputMatrix

    O = OutputMatrix(rng.integers(-400000, 400000, (20, 30)).astype(np.int32))
    ws = np.float32(rng.uniform(0.001, 2))
    ts = rng.uniform(0.001, 2, 30).astype(np.float32)
    got = apply_scales(O, ws, ts).data_f32
    exact = O.data_i32.astype(np.float64) * np.float64(ws) * ts.astype(np.float64)
    assert np.all(np.abs(got - exact) <= np.spacing(np.abs(exact).astype(np.float32)))


def test_quantize_examples():
    q = quantize_activation(np.zeros((3, 1), dtype=np.float32))
    assert not q.data.any() and q.token_scales.tolist() == [1.0]
    c = 0.37
    q = quantize_activation(np.array([[127 * c], [-127 * c], [0.0]], dtype=np.float32))
    assert q.data[:, 0].tolist() == [127, -127, 0]
    assert np.isclose(q.token_scales[0], c)


def test_quantize_half_away_from_zero():
    q = quantize_activation(np.array([[127.0, 2.5, -2.5, 0.5, -0.5]], dtype=np.float32).T)
    assert q.data[:, 0].tolist() == [127, 3, -3, 1, -1]


def test_quantize_feature_layout(rng):
    a = rng.standard_normal((5, 40)).astype(np.float32)  # (N, K)
    assert np.array_equal(quantize_activation(a, "feature").data, quantize_activation(a.T).data)


def test_quantize_rejects_nonfinite():
    with pytest.raises(NonFiniteInput):
        quantize_activation(np.array([[1.0], [np.nan]]))


@given(st.integers(1, 64), st.integers(1, 16), st.integers(0, 2**31))
def test_quantize_error_bound(K, N, seed):
    a = (np.random.default_rng(seed).standard_normal((K, N)) * 3).astype(np.float32)
    q = quantize_activation(a)
    deq = q.data.astype(np.float64) * q.token_scales.astype(np.float64)
    tol = q.token_scales.astype(np.float64) / 2 * (1 + 1e-6)
    assert np.all(np.abs(a - deq) <= tol)
    assert q.data.min() >= -127
