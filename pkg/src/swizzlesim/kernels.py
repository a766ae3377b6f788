"""Deterministic access-trace generators for the benchmark kernels.

All generators are pure functions of the kernel spec: no RNG anywhere, so
traces are byte-identical across runs. Arrays are row-major. Streams model
the memory behavior of straightforward tiled kernels:

* gemm: tile (m,n) streams the K-panel of its A row-block and B col-block,
  then writes its C tile. Tiles in one output row reread the same A rows;
  tiles in one column reread the same B columns.
* transpose: unstaged kernel; tile rows are read coalesced, and the
  transposed store scatters one element per output row, so each output
  line is revisited once per element it holds.
* softmax: one workgroup per row chunk; the reduction pass reads its whole
  row (every chunk workgroup of a row streams the same bytes), then after
  a wave barrier the second pass rereads its own chunk and writes it.
* layernorm: like softmax without the barrier, plus shared weight/bias
  chunk reads.
* spmv_naive: banded CSR, fixed half-width, derived from dims only.
* black_scholes / fused_elementwise: disjoint streaming, no reuse.
* fdtd2d: per timestep (wave), read one field's tile plus its halo, write
  the other field; fields swap roles each step.
* smith_waterman: block wavefront over the DP matrix; one wave per
  anti-diagonal reading left/top/diagonal halos.
* stencil2d: 5-point update reading the center tile plus one-line halos
  (neighbor rows) and one-column halos (neighbor columns).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .patterns import GridSpec
from .traces import AccessTrace, Stream, make_buffers, seg_elements, seg_rows, seg_single

KERNEL_KINDS = (
    "gemm",
    "fused_elementwise",
    "layernorm",
    "softmax",
    "spmv_naive",
    "transpose",
    "black_scholes",
    "fdtd2d",
    "smith_waterman",
    "stencil2d",
)


class KernelSpecError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    problem_dims: Mapping[str, int]
    block_dims: Mapping[str, int]
    dtype_bytes: int = 4

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise KernelSpecError(f"unknown kernel kind {self.kind!r}")
        if self.dtype_bytes < 1:
            raise KernelSpecError("dtype_bytes must be positive")
        for label, dims in (("problem", self.problem_dims), ("block", self.block_dims)):
            for name, value in dims.items():
                if value < 1:
                    raise KernelSpecError(
                        f"{label} dimension {name} must be positive, got {value}"
                    )
        object.__setattr__(self, "problem_dims", dict(self.problem_dims))
        object.__setattr__(self, "block_dims", dict(self.block_dims))

    def dim(self, name: str) -> int:
        return self.problem_dims[name]

    def block(self, name: str) -> int:
        return self.block_dims[name]


def _cdiv(a: int, b: int) -> int:
    return -(-a // b)


# Desk-scale defaults: hardware-scale problem sizes are not meaningful for
# a trace simulator, so sizes are chosen to finish in seconds while keeping
# each kernel's reuse structure intact. The gemm default is rectangular
# (more row-tiles than column-tiles): on a square grid whose column count
# is a multiple of num_xcds, round-robin dispatch already groups whole
# columns per XCD and contiguous row grouping merely mirrors it, so the two
# schedules hit identically and no swizzle can show an effect.
DEFAULT_SPECS: dict[str, KernelSpec] = {
    "gemm": KernelSpec("gemm", {"m": 2048, "n": 512, "k": 1024}, {"m": 64, "n": 64, "k": 64}),
    "fused_elementwise": KernelSpec("fused_elementwise", {"n": 1 << 22}, {"n": 4096}),
    "layernorm": KernelSpec("layernorm", {"rows": 512, "cols": 8192}, {"cols": 1024}),
    "softmax": KernelSpec("softmax", {"rows": 4096, "cols": 4096}, {"cols": 1024}),
    "spmv_naive": KernelSpec(
        "spmv_naive", {"rows": 65536, "half_width": 16}, {"rows": 256}
    ),
    "transpose": KernelSpec("transpose", {"m": 4096, "n": 4096}, {"m": 64, "n": 64}),
    "black_scholes": KernelSpec("black_scholes", {"n": 1 << 22}, {"n": 4096}),
    "fdtd2d": KernelSpec(
        "fdtd2d", {"ny": 1024, "nx": 1024, "steps": 2}, {"y": 64, "x": 64}
    ),
    "smith_waterman": KernelSpec(
        "smith_waterman", {"m": 2048, "n": 2048}, {"m": 128, "n": 128}
    ),
    "stencil2d": KernelSpec("stencil2d", {"m": 2048, "n": 2048}, {"m": 64, "n": 64}),
}


def default_spec(kind: str) -> KernelSpec:
    try:
        return DEFAULT_SPECS[kind]
    except KeyError:
        raise KernelSpecError(f"unknown kernel kind {kind!r}") from None


def spec_with_size(kind: str, size: int) -> KernelSpec:
    """Default spec rescaled to one problem size (square for 2-D kernels)."""
    base = default_spec(kind)
    dims = dict(base.problem_dims)
    if kind in ("gemm",):
        dims.update(m=size, n=size, k=size)
    elif kind in ("transpose", "smith_waterman", "stencil2d"):
        dims.update(m=size, n=size)
    elif kind == "fdtd2d":
        dims.update(ny=size, nx=size)
    elif kind in ("softmax", "layernorm"):
        dims.update(rows=size)
    elif kind in ("fused_elementwise", "black_scholes"):
        dims.update(n=size)
    elif kind == "spmv_naive":
        dims.update(rows=size)
    return KernelSpec(kind, dims, base.block_dims, base.dtype_bytes)


def launch_grid(spec: KernelSpec) -> GridSpec:
    """Ceiling-division tile counts per axis for one dispatch."""
    kind = spec.kind
    if kind == "gemm":
        return GridSpec.tiled((spec.dim("m"), spec.dim("n")), (spec.block("m"), spec.block("n")))
    if kind in ("fused_elementwise", "black_scholes"):
        return GridSpec.tiled((spec.dim("n"),), (spec.block("n"),))
    if kind in ("layernorm", "softmax"):
        return GridSpec.tiled((spec.dim("rows"), spec.dim("cols")), (1, spec.block("cols")))
    if kind == "spmv_naive":
        return GridSpec.tiled((spec.dim("rows"),), (spec.block("rows"),))
    if kind in ("transpose", "smith_waterman", "stencil2d"):
        return GridSpec.tiled((spec.dim("m"), spec.dim("n")), (spec.block("m"), spec.block("n")))
    if kind == "fdtd2d":
        return GridSpec.tiled((spec.dim("ny"), spec.dim("nx")), (spec.block("y"), spec.block("x")))
    raise KernelSpecError(f"unknown kernel kind {kind!r}")


def generate_trace(spec: KernelSpec) -> AccessTrace:
    try:
        gen = _GENERATORS[spec.kind]
    except KeyError:
        raise KernelSpecError(f"unknown kernel kind {spec.kind!r}") from None
    return gen(spec)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _tile_bounds(pid: int, grid: GridSpec, bm: int, bn: int, m: int, n: int):
    tm, tn = divmod(pid, grid.num_blocks_n)
    r0 = tm * bm
    c0 = tn * bn
    return r0, min(r0 + bm, m), c0, min(c0 + bn, n)


def _gen_gemm(spec: KernelSpec) -> AccessTrace:
    m, n, k = spec.dim("m"), spec.dim("n"), spec.dim("k")
    bm, bn, bk = spec.block("m"), spec.block("n"), spec.block("k")
    es = spec.dtype_bytes
    grid = launch_grid(spec)
    buffers = make_buffers([("a", m * k * es), ("b", k * n * es), ("c", m * n * es)])

    def stream(wave: int, pid: int) -> Stream:
        r0, r1, c0, c1 = _tile_bounds(pid, grid, bm, bn, m, n)
        segs = []
        for kb in range(_cdiv(k, bk)):
            k0, k1 = kb * bk, min((kb + 1) * bk, k)
            segs.append(seg_rows(0, (r0 * k + k0) * es, (k1 - k0) * es, k * es, r1 - r0))
            segs.append(seg_rows(1, (k0 * n + c0) * es, (c1 - c0) * es, n * es, k1 - k0))
        segs.append(seg_rows(2, (r0 * n + c0) * es, (c1 - c0) * es, n * es, r1 - r0, write=True))
        return Stream.concat(segs)

    return AccessTrace("gemm", grid, buffers, stream)


def _gen_fused_elementwise(spec: KernelSpec) -> AccessTrace:
    n, bn, es = spec.dim("n"), spec.block("n"), spec.dtype_bytes
    grid = launch_grid(spec)
    buffers = make_buffers([("a", n * es), ("b", n * es), ("out", n * es)])

    def stream(wave: int, pid: int) -> Stream:
        e0, e1 = pid * bn, min((pid + 1) * bn, n)
        length = (e1 - e0) * es
        return Stream.concat(
            [
                seg_single(0, e0 * es, length),
                seg_single(1, e0 * es, length),
                seg_single(2, e0 * es, length, write=True),
            ]
        )

    return AccessTrace("fused_elementwise", grid, buffers, stream)


def _gen_black_scholes(spec: KernelSpec) -> AccessTrace:
    n, bn, es = spec.dim("n"), spec.block("n"), spec.dtype_bytes
    grid = launch_grid(spec)
    buffers = make_buffers(
        [("spot", n * es), ("strike", n * es), ("tte", n * es), ("call", n * es), ("put", n * es)]
    )

    def stream(wave: int, pid: int) -> Stream:
        e0, e1 = pid * bn, min((pid + 1) * bn, n)
        length = (e1 - e0) * es
        return Stream.concat(
            [
                seg_single(0, e0 * es, length),
                seg_single(1, e0 * es, length),
                seg_single(2, e0 * es, length),
                seg_single(3, e0 * es, length, write=True),
                seg_single(4, e0 * es, length, write=True),
            ]
        )

    return AccessTrace("black_scholes", grid, buffers, stream)


def _gen_softmax(spec: KernelSpec) -> AccessTrace:
    rows, cols = spec.dim("rows"), spec.dim("cols")
    chunk, es = spec.block("cols"), spec.dtype_bytes
    grid = launch_grid(spec)
    buffers = make_buffers([("x", rows * cols * es), ("out", rows * cols * es)])
    nchunks = grid.num_blocks_n

    def stream(wave: int, pid: int) -> Stream:
        r, c = divmod(pid, nchunks)
        c0, c1 = c * chunk, min((c + 1) * chunk, cols)
        if wave == 0:
            # reduction pass: every chunk workgroup scans its whole row
            return seg_single(0, r * cols * es, cols * es)
        length = (c1 - c0) * es
        return Stream.concat(
            [
                seg_single(0, (r * cols + c0) * es, length),
                seg_single(1, (r * cols + c0) * es, length, write=True),
            ]
        )

    total = grid.total_blocks
    waves = [np.arange(total), np.arange(total)]
    return AccessTrace("softmax", grid, buffers, stream, wave_pids=waves)


def _gen_layernorm(spec: KernelSpec) -> AccessTrace:
    rows, cols = spec.dim("rows"), spec.dim("cols")
    chunk, es = spec.block("cols"), spec.dtype_bytes
    grid = launch_grid(spec)
    buffers = make_buffers(
        [("x", rows * cols * es), ("weight", cols * es), ("bias", cols * es), ("out", rows * cols * es)]
    )
    nchunks = grid.num_blocks_n

    def stream(wave: int, pid: int) -> Stream:
        r, c = divmod(pid, nchunks)
        c0, c1 = c * chunk, min((c + 1) * chunk, cols)
        length = (c1 - c0) * es
        return Stream.concat(
            [
                seg_single(0, r * cols * es, cols * es),  # mean/variance scan
                seg_single(0, (r * cols + c0) * es, length),
                seg_single(1, c0 * es, length),
                seg_single(2, c0 * es, length),
                seg_single(3, (r * cols + c0) * es, length, write=True),
            ]
        )

    return AccessTrace("layernorm", grid, buffers, stream)


def _gen_spmv(spec: KernelSpec) -> AccessTrace:
    rows = spec.dim("rows")
    hw = spec.dim("half_width")
    br, es = spec.block("rows"), spec.dtype_bytes
    idx_bytes = 4
    grid = launch_grid(spec)

    r = np.arange(rows, dtype=np.int64)
    lo = np.maximum(r - hw, 0)
    hi = np.minimum(r + hw, rows - 1)
    nnz_per_row = hi - lo + 1
    row_ptr = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(nnz_per_row, out=row_ptr[1:])
    nnz = int(row_ptr[-1])

    buffers = make_buffers(
        [
            ("row_ptr", (rows + 1) * idx_bytes),
            ("col_idx", nnz * idx_bytes),
            ("values", nnz * es),
            ("x", rows * es),
            ("y", rows * es),
        ]
    )

    def stream(wave: int, pid: int) -> Stream:
        g0, g1 = pid * br, min((pid + 1) * br, rows)
        p0, p1 = int(row_ptr[g0]), int(row_ptr[g1])
        # per-row gather of the x band [r-hw, r+hw]
        gathers = Stream(
            np.full(g1 - g0, 3, dtype=np.int32),
            lo[g0:g1] * es,
            nnz_per_row[g0:g1] * es,
            np.zeros(g1 - g0, dtype=bool),
        )
        return Stream.concat(
            [
                seg_single(0, g0 * idx_bytes, (g1 - g0 + 1) * idx_bytes),
                seg_single(1, p0 * idx_bytes, (p1 - p0) * idx_bytes),
                seg_single(2, p0 * es, (p1 - p0) * es),
                gathers,
                seg_single(4, g0 * es, (g1 - g0) * es, write=True),
            ]
        )

    return AccessTrace("spmv_naive", grid, buffers, stream)


def _gen_transpose(spec: KernelSpec) -> AccessTrace:
    m, n = spec.dim("m"), spec.dim("n")
    bm, bn, es = spec.block("m"), spec.block("n"), spec.dtype_bytes
    grid = launch_grid(spec)
    buffers = make_buffers([("in", m * n * es), ("out", n * m * es)])

    def stream(wave: int, pid: int) -> Stream:
        r0, r1, c0, c1 = _tile_bounds(pid, grid, bm, bn, m, n)
        nr, nc = r1 - r0, c1 - c0
        # Row i: one coalesced read of the input row followed by the
        # column-scatter of its transposed elements.
        width = 1 + nc
        rows = np.arange(r0, r1, dtype=np.int64)
        cols = np.arange(c0, c1, dtype=np.int64)
        offs = np.empty((nr, width), dtype=np.int64)
        offs[:, 0] = (rows * n + c0) * es
        offs[:, 1:] = (cols[None, :] * m + rows[:, None]) * es
        bufs = np.empty((nr, width), dtype=np.int32)
        bufs[:, 0] = 0
        bufs[:, 1:] = 1
        lens = np.full((nr, width), es, dtype=np.int64)
        lens[:, 0] = nc * es
        writes = np.ones((nr, width), dtype=bool)
        writes[:, 0] = False
        return Stream(bufs.ravel(), offs.ravel(), lens.ravel(), writes.ravel())

    return AccessTrace("transpose", grid, buffers, stream)


def _halo_segments(buf, r0, r1, c0, c1, m, n, es):
    """One-line row halos and per-element column halos around a tile."""
    segs = []
    if r0 > 0:
        segs.append(seg_single(buf, ((r0 - 1) * n + c0) * es, (c1 - c0) * es))
    if r1 < m:
        segs.append(seg_single(buf, (r1 * n + c0) * es, (c1 - c0) * es))
    if c0 > 0:
        rows = np.arange(r0, r1, dtype=np.int64)
        segs.append(seg_elements(buf, (rows * n + c0 - 1) * es, es))
    if c1 < n:
        rows = np.arange(r0, r1, dtype=np.int64)
        segs.append(seg_elements(buf, (rows * n + c1) * es, es))
    return segs


def _gen_stencil2d(spec: KernelSpec) -> AccessTrace:
    m, n = spec.dim("m"), spec.dim("n")
    bm, bn, es = spec.block("m"), spec.block("n"), spec.dtype_bytes
    grid = launch_grid(spec)
    buffers = make_buffers([("in", m * n * es), ("out", m * n * es)])

    def stream(wave: int, pid: int) -> Stream:
        r0, r1, c0, c1 = _tile_bounds(pid, grid, bm, bn, m, n)
        segs = [seg_rows(0, (r0 * n + c0) * es, (c1 - c0) * es, n * es, r1 - r0)]
        segs.extend(_halo_segments(0, r0, r1, c0, c1, m, n, es))
        segs.append(seg_rows(1, (r0 * n + c0) * es, (c1 - c0) * es, n * es, r1 - r0, write=True))
        return Stream.concat(segs)

    return AccessTrace("stencil2d", grid, buffers, stream)


def _gen_fdtd2d(spec: KernelSpec) -> AccessTrace:
    ny, nx = spec.dim("ny"), spec.dim("nx")
    steps = spec.dim("steps")
    by, bx, es = spec.block("y"), spec.block("x"), spec.dtype_bytes
    grid = launch_grid(spec)
    buffers = make_buffers([("e", ny * nx * es), ("h", ny * nx * es)])

    def stream(wave: int, pid: int) -> Stream:
        src, dst = (1, 0) if wave % 2 == 0 else (0, 1)
        r0, r1, c0, c1 = _tile_bounds(pid, grid, by, bx, ny, nx)
        segs = [seg_rows(src, (r0 * nx + c0) * es, (c1 - c0) * es, nx * es, r1 - r0)]
        segs.extend(_halo_segments(src, r0, r1, c0, c1, ny, nx, es))
        segs.append(
            seg_rows(dst, (r0 * nx + c0) * es, (c1 - c0) * es, nx * es, r1 - r0, write=True)
        )
        return Stream.concat(segs)

    total = grid.total_blocks
    waves = [np.arange(total) for _ in range(steps)]
    return AccessTrace("fdtd2d", grid, buffers, stream, wave_pids=waves)


def _gen_smith_waterman(spec: KernelSpec) -> AccessTrace:
    m, n = spec.dim("m"), spec.dim("n")
    bm, bn, es = spec.block("m"), spec.block("n"), spec.dtype_bytes
    grid = launch_grid(spec)
    buffers = make_buffers([("seq_a", m * es), ("seq_b", n * es), ("dp", m * n * es)])
    nbn = grid.num_blocks_n

    def stream(wave: int, pid: int) -> Stream:
        r0, r1, c0, c1 = _tile_bounds(pid, grid, bm, bn, m, n)
        segs = [
            seg_single(0, r0 * es, (r1 - r0) * es),
            seg_single(1, c0 * es, (c1 - c0) * es),
        ]
        if r0 > 0:
            segs.append(seg_single(2, ((r0 - 1) * n + c0) * es, (c1 - c0) * es))
        if c0 > 0:
            rows = np.arange(r0, r1, dtype=np.int64)
            segs.append(seg_elements(2, (rows * n + c0 - 1) * es, es))
        if r0 > 0 and c0 > 0:
            segs.append(seg_single(2, ((r0 - 1) * n + c0 - 1) * es, es))
        segs.append(seg_rows(2, (r0 * n + c0) * es, (c1 - c0) * es, n * es, r1 - r0, write=True))
        return Stream.concat(segs)

    diag = np.arange(grid.total_blocks) // nbn + np.arange(grid.total_blocks) % nbn
    waves = [
        np.nonzero(diag == d)[0].astype(np.int64)
        for d in range(grid.num_blocks_m + nbn - 1)
    ]
    return AccessTrace("smith_waterman", grid, buffers, stream, wave_pids=waves)


_GENERATORS = {
    "gemm": _gen_gemm,
    "fused_elementwise": _gen_fused_elementwise,
    "layernorm": _gen_layernorm,
    "softmax": _gen_softmax,
    "spmv_naive": _gen_spmv,
    "transpose": _gen_transpose,
    "black_scholes": _gen_black_scholes,
    "fdtd2d": _gen_fdtd2d,
    "smith_waterman": _gen_smith_waterman,
    "stencil2d": _gen_stencil2d,
}
