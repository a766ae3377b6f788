import io

import numpy as np
import pytest

from swizzlesim.kernels import (
    DEFAULT_SPECS,
    KERNEL_KINDS,
    KernelSpec,
    KernelSpecError,
    default_spec,
    generate_trace,
    launch_grid,
    spec_with_size,
)
from swizzlesim.traces import (
    check_write_coverage,
    dump_trace,
    locality_summary,
    validate_trace_bounds,
)


def small(kind, **dims):
    base = default_spec(kind)
    merged = dict(base.problem_dims)
    merged.update(dims)
    return KernelSpec(kind, merged, base.block_dims, base.dtype_bytes)


# --- launch grids ------------------------------------------------------------


def test_launch_grid_examples():
    g = launch_grid(small("stencil2d", m=2048, n=2048))
    assert (g.num_blocks_m, g.num_blocks_n) == (32, 32)

    g = launch_grid(small("layernorm", rows=512, cols=8192))
    assert (g.num_blocks_m, g.num_blocks_n) == (512, 8)

    g = launch_grid(small("gemm", m=100, n=64, k=64))
    assert g.num_blocks_m == 2  # ceil(100/64)


def test_kernel_spec_validation():
    with pytest.raises(KernelSpecError):
        KernelSpec("nonsense", {"n": 4}, {"n": 2})
    with pytest.raises(KernelSpecError):
        KernelSpec("gemm", {"m": 0, "n": 64, "k": 64}, {"m": 64, "n": 64, "k": 64})


def test_defaults_cover_all_kinds():
    assert set(DEFAULT_SPECS) == set(KERNEL_KINDS)
    for kind in KERNEL_KINDS:
        assert launch_grid(default_spec(kind)).total_blocks > 0


# --- per-kernel trace shapes -------------------------------------------------


def test_transpose_reads_and_transposed_writes():
    spec = small("transpose", m=128, n=128)
    trace = generate_trace(spec)
    es = spec.dtype_bytes
    # workgroup (0,1): reads input rows 0..63 cols 64..127
    recs = trace.records_for(1)
    reads = [r for r in recs if r.mode == "read"]
    writes = [r for r in recs if r.mode == "write"]
    assert reads[0].byte_offset == 64 * es and reads[0].length_bytes == 64 * es
    assert reads[1].byte_offset == (128 + 64) * es
    # writes land in the output tile at row-block 1 / col-block 0
    offsets = {w.byte_offset for w in writes}
    lo, hi = min(offsets), max(offsets)
    assert lo == 64 * 128 * es  # out[64][0]
    assert hi == (127 * 128 + 63) * es  # out[127][63]
    assert all(w.length_bytes == es for w in writes)


def test_transpose_mirror_symmetry():
    a = generate_trace(small("transpose", m=256, n=128))
    b = generate_trace(small("transpose", m=128, n=256))
    assert a.grid.total_blocks == b.grid.total_blocks
    assert a.buffer_by_name("in").length_bytes == b.buffer_by_name("out").length_bytes
    assert a.buffer_by_name("out").length_bytes == b.buffer_by_name("in").length_bytes

    def totals(trace):
        read = written = 0
        for pid in range(trace.grid.total_blocks):
            s = trace.stream(pid)
            read += int(s.lens[~s.writes].sum())
            written += int(s.lens[s.writes].sum())
        return read, written

    assert totals(a) == totals(b)


def test_gemm_row_mates_read_identical_a_bytes():
    spec = small("gemm", m=128, n=128, k=128)
    trace = generate_trace(spec)
    a_id = trace.buffer_by_name("a").buffer_id

    def a_ranges(pid):
        s = trace.stream(pid)
        mask = s.bufs == a_id
        return set(zip(s.offs[mask].tolist(), s.lens[mask].tolist()))

    shared = a_ranges(0) & a_ranges(1)  # tiles (0,0) and (0,1)
    assert a_ranges(0) == a_ranges(1)
    assert sum(l for _, l in shared) == 32 * 1024  # 64 rows x 128 cols x 4B
    assert a_ranges(0) != a_ranges(2)  # different C row reads different A rows


def test_black_scholes_streams_are_disjoint():
    trace = generate_trace(small("black_scholes", n=1 << 14))

    def touched(pid):
        s = trace.stream(pid)
        return {
            (int(b), int(o) + k)
            for b, o, l in zip(s.bufs, s.offs, s.lens)
            for k in (0, int(l) - 1)
        }

    assert not (touched(0) & touched(1))
    assert not (touched(1) & touched(2))


def test_softmax_two_phase_waves():
    spec = small("softmax", rows=4, cols=2048)
    trace = generate_trace(spec)
    assert trace.num_waves == 2
    # phase 1 scans the whole row; phase 2 rereads own chunk and writes it
    r0 = trace.records_for(1, wave=0)
    assert len(r0) == 1 and r0[0].length_bytes == 2048 * 4
    r1 = trace.records_for(1, wave=1)
    assert [r.mode for r in r1] == ["read", "write"]
    assert r1[0].length_bytes == 1024 * 4


def test_smith_waterman_wavefront():
    trace = generate_trace(small("smith_waterman", m=512, n=512))
    nb = trace.grid.num_blocks_m
    assert trace.num_waves == 2 * nb - 1
    for d in range(trace.num_waves):
        for pid in trace.wave_pids[d]:
            tm, tn = divmod(int(pid), trace.grid.num_blocks_n)
            assert tm + tn == d


def test_fdtd_ping_pong():
    trace = generate_trace(small("fdtd2d", ny=256, nx=256))
    assert trace.num_waves == 2
    w0 = trace.records_for(0, wave=0)
    w1 = trace.records_for(0, wave=1)
    e_id = trace.buffer_by_name("e").buffer_id
    h_id = trace.buffer_by_name("h").buffer_id
    assert {r.buffer_id for r in w0 if r.mode == "read"} == {h_id}
    assert {r.buffer_id for r in w0 if r.mode == "write"} == {e_id}
    assert {r.buffer_id for r in w1 if r.mode == "read"} == {e_id}
    assert {r.buffer_id for r in w1 if r.mode == "write"} == {h_id}


def test_stencil_halo_reads():
    spec = small("stencil2d", m=256, n=256)
    trace = generate_trace(spec)
    grid = trace.grid
    # interior tile reads: 64 center rows + 2 halo rows + 2x64 halo columns
    interior = (1 * grid.num_blocks_n) + 1
    recs = trace.records_for(interior)
    reads = [r for r in recs if r.mode == "read"]
    assert len(reads) == 64 + 2 + 64 + 64
    corner_reads = [r for r in trace.records_for(0) if r.mode == "read"]
    assert len(corner_reads) == 64 + 1 + 64  # no top row, no left column


def test_spmv_banded_structure_is_seed_free():
    spec = small("spmv_naive", rows=2048)
    a = generate_trace(spec)
    b = generate_trace(spec)
    assert a.records_for(0) == b.records_for(0)
    assert a.records_for(3) == b.records_for(3)
    # row 0 band is clamped to [0, hw]; middle rows span 2*hw+1 elements
    x_id = a.buffer_by_name("x").buffer_id
    gathers = [r for r in a.records_for(1) if r.buffer_id == x_id]
    assert gathers[16].length_bytes == 33 * 4
    first = [r for r in a.records_for(0) if r.buffer_id == x_id][0]
    assert first.byte_offset == 0 and first.length_bytes == 17 * 4


# --- invariants --------------------------------------------------------------

COVERAGE_CASES = [
    ("gemm", dict(m=256, n=192, k=128), ["c"]),
    ("transpose", dict(m=256, n=192), ["out"]),
    ("stencil2d", dict(m=256, n=320), ["out"]),
    ("softmax", dict(rows=64, cols=2048), ["out"]),
    ("layernorm", dict(rows=64, cols=4096), ["out"]),
    ("smith_waterman", dict(m=512, n=512), ["dp"]),
    ("spmv_naive", dict(rows=4096), ["y"]),
    ("black_scholes", dict(n=1 << 14), ["call", "put"]),
    ("fused_elementwise", dict(n=1 << 14), ["out"]),
]


@pytest.mark.parametrize("kind,dims,out_buffers", COVERAGE_CASES)
def test_write_coverage_and_bounds(kind, dims, out_buffers):
    trace = generate_trace(small(kind, **dims))
    validate_trace_bounds(trace)
    for name in out_buffers:
        check_write_coverage(trace, name)


def test_fdtd_coverage_per_wave():
    trace = generate_trace(small("fdtd2d", ny=256, nx=256))
    validate_trace_bounds(trace)
    check_write_coverage(trace, "e", waves=[0])
    check_write_coverage(trace, "h", waves=[1])


def test_coverage_check_catches_gaps():
    trace = generate_trace(small("gemm", m=256, n=192, k=128))
    with pytest.raises(AssertionError):
        check_write_coverage(trace, "a")  # never written


def test_traces_deterministic_across_generations():
    for kind, dims, _ in COVERAGE_CASES[:4]:
        a = generate_trace(small(kind, **dims))
        b = generate_trace(small(kind, **dims))
        for wave in range(a.num_waves):
            for pid in (0, a.grid.total_blocks // 2, a.grid.total_blocks - 1):
                assert a.records_for(pid, wave) == b.records_for(pid, wave)


def test_dump_trace_format():
    trace = generate_trace(small("fused_elementwise", n=8192))
    out = io.StringIO()
    dump_trace(trace, out)
    lines = out.getvalue().strip().splitlines()
    assert lines[0] == "0,a,0,16384,read"
    assert all(len(line.split(",")) == 5 for line in lines if not line.startswith("#"))


# --- locality summary --------------------------------------------------------


def test_locality_gemm_row_and_column_pairs():
    summary = locality_summary(generate_trace(small("gemm", m=128, n=128, k=128)))
    by_buffer = {}
    for group in summary.groups:
        by_buffer.setdefault(group.buffer_name, []).append(group)
    a_groups = {g.pids for g in by_buffer["a"]}
    b_groups = {g.pids for g in by_buffer["b"]}
    assert (0, 1) in a_groups and (2, 3) in a_groups  # row mates share A
    assert (0, 2) in b_groups and (1, 3) in b_groups  # column mates share B
    for g in by_buffer["a"]:
        assert g.shared_bytes == 32 * 1024


def test_locality_black_scholes_empty():
    summary = locality_summary(generate_trace(small("black_scholes", n=1 << 14)))
    assert not summary.has_sharing


def test_locality_softmax_rows_across_phases():
    summary = locality_summary(generate_trace(small("softmax", rows=4, cols=2048)))
    row_groups = [g for g in summary.groups if g.buffer_name == "x"]
    assert {g.pids for g in row_groups} == {(0, 1), (2, 3), (4, 5), (6, 7)}
    assert all(g.reuse_class == "cross_wave" for g in row_groups)
    assert all(g.shared_bytes == 2048 * 4 for g in row_groups)


def test_locality_groups_sorted_descending():
    summary = locality_summary(generate_trace(small("gemm", m=256, n=128, k=128)))
    sizes = [g.shared_bytes for g in summary.groups]
    assert sizes == sorted(sizes, reverse=True)


def test_spec_with_size_roundtrip():
    spec = spec_with_size("stencil2d", 512)
    assert spec.problem_dims["m"] == 512
    g = launch_grid(spec)
    assert g.total_blocks == 64
