"""Periodic fields on Y^m and the constrained spectral projection.

Fields are real samples on the uniform grid in basis coordinates; discrete
Fourier coefficients use the cell-mean normalization (the k=0 coefficient is
the grid mean), matching the cell-average convention of the continuum
formulas.  The central operation projects, mode by mode, onto ker S(R*k) and
zeroes the mean, which characterizes the admissible corrector space.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass

import numpy as np

from .cutproject import CellLattice, CutProjectMap, unit_cell
from .errors import InvalidInputError
from .operators import OperatorSpec, check_constant_rank, kernel_projector_batch, symbol

SPARSE_COEFF_CUTOFF = 1e-13


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real Y^m-periodic data on the cell grid, with optional cached spectrum.

    values has shape grid_shape + comp_shape, where comp_shape is () for a
    scalar, (d,) for a vector field, or (d, d) for matrix data.  coeffs, when
    present, holds the normalized DFT over the grid axes (same shape,
    complex); the inverse transform of coeffs reproduces values.
    """

    cell: CellLattice
    values: np.ndarray
    coeffs: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        m = self.cell.dimension
        if values.shape[:m] != self.cell.grid_shape:
            raise InvalidInputError(
                f"values shape {values.shape} does not start with the grid "
                f"shape {self.cell.grid_shape}"
            )
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.coeffs is not None:
            coeffs = np.asarray(self.coeffs, dtype=complex)
            if coeffs.shape != values.shape:
                raise InvalidInputError("coeffs shape must match values shape")
            coeffs = coeffs.copy()
            coeffs.setflags(write=False)
            object.__setattr__(self, "coeffs", coeffs)

    @property
    def grid_axes(self) -> tuple[int, ...]:
        return tuple(range(self.cell.dimension))

    @property
    def comp_shape(self) -> tuple[int, ...]:
        return self.values.shape[self.cell.dimension:]

    @property
    def components(self) -> int:
        return int(np.prod(self.comp_shape, dtype=int)) if self.comp_shape else 1

    def spectrum(self) -> np.ndarray:
        """DFT coefficients, computing and caching them on first use."""
        if self.coeffs is None:
            object.__setattr__(self, "coeffs", _forward(self.values, self.cell))
            self.coeffs.setflags(write=False)
        return self.coeffs


def _grid_size(cell: CellLattice) -> int:
    return int(np.prod(cell.grid_shape))

def _forward(values: np.ndarray, cell: CellLattice) -> np.ndarray:
    axes = tuple(range(cell.dimension))
    return np.fft.fftn(values, axes=axes) / _grid_size(cell)

def _inverse(coeffs: np.ndarray, cell: CellLattice) -> np.ndarray:
    axes = tuple(range(cell.dimension))
    return np.fft.ifftn(coeffs * _grid_size(cell), axes=axes).real


def field_from_values(cell: CellLattice, values) -> SpectralField:
    return SpectralField(cell, np.asarray(values, dtype=float))


def field_from_coeffs(cell: CellLattice, coeffs) -> SpectralField:
    coeffs = np.asarray(coeffs, dtype=complex)
    return SpectralField(cell, _inverse(coeffs, cell), coeffs)


def forward_transform(field: SpectralField) -> SpectralField:
    """Return the same field with coeffs populated (k=0 entry = grid mean)."""
    return SpectralField(field.cell, field.values, _forward(field.values, field.cell))


def rms(field: SpectralField) -> float:
    """Root-mean-square over grid nodes of the euclidean component norm."""
    sq = field.values ** 2
    per_node = sq.reshape(_grid_size(field.cell), -1).sum(axis=1)
    return float(np.sqrt(per_node.mean()))


def integer_frequencies(grid_shape) -> list[np.ndarray]:
    """Signed integer DFT frequencies per axis in FFT layout order."""
    return [np.rint(np.fft.fftfreq(g) * g).astype(np.int64) for g in grid_shape]


def frequency_lattice(grid_shape) -> np.ndarray:
    """All integer frequency vectors in FFT layout, flattened to (K, m)."""
    axes = integer_frequencies(grid_shape)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


# ---------------------------------------------------------------------------
# Point evaluation of the truncated series
# ---------------------------------------------------------------------------

def evaluate_at_fractional(field: SpectralField, frac: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant at fractional cell coordinates.

    Exact for band-limited data.  Only modes whose magnitude exceeds a tiny
    relative cutoff are summed, so sparse spectra (trig polynomials) evaluate
    in O(#points x #modes).
    """
    coeffs = field.spectrum()
    m = field.cell.dimension
    comp = field.comp_shape
    K = _grid_size(field.cell)
    flat = coeffs.reshape(K, -1)
    klat = frequency_lattice(field.cell.grid_shape)

    mags = np.max(np.abs(flat), axis=1)
    top = mags.max()
    if top == 0.0:
        return np.zeros((frac.shape[0],) + comp)
    keep = mags > SPARSE_COEFF_CUTOFF * top
    ks = klat[keep]
    cs = flat[keep]

    out = np.empty((frac.shape[0], flat.shape[1]))
    chunk = max(1, int(4e6) // max(len(ks), 1))
    for start in range(0, frac.shape[0], chunk):
        block = frac[start:start + chunk]
        phases = np.exp(2j * np.pi * (block @ ks.T))
        out[start:start + chunk] = (phases @ cs).real
    return out.reshape((frac.shape[0],) + comp)


# ---------------------------------------------------------------------------
# Projection onto the constrained, mean-zero subspace
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionStats:
    removed_mean: np.ndarray
    residual_norm: float
    modes_touched: int


@functools.lru_cache(maxsize=32)
def _verified_rank(op: OperatorSpec) -> int:
    report = check_constant_rank(op, samples=32, seed=0)
    if not report.constant_rank:
        raise InvalidInputError(
            f"operator {op.name or ''} is not constant-rank: observed ranks "
            f"{report.observed_ranks}"
        )
    return report.r


@functools.lru_cache(maxsize=16)
def _projector_stack(op: OperatorSpec, cpmap: CutProjectMap):
    """(K, d, d) kernel projectors at every grid frequency, plus unit slice
    directions (K, n) and the constant rank.  Row 0 (k=0) is a placeholder
    identity; the mean mode is handled by explicit zeroing."""
    rank = _verified_rank(op)
    klat = frequency_lattice(cpmap.cell.grid_shape)
    ws = cpmap.dual_frequency(klat)
    norms = np.linalg.norm(ws, axis=1)
    if np.any(norms[1:] == 0.0):
        bad = klat[1:][norms[1:] == 0.0][0]
        raise InvalidInputError(
            f"R*k vanishes at grid frequency k={tuple(int(v) for v in bad)}; "
            "the map resonates inside the grid band"
        )
    dirs = ws.copy()
    dirs[0] = 0.0
    dirs[0, 0] = 1.0
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    projectors = kernel_projector_batch(op, dirs, rank)
    projectors[0] = np.eye(op.d)
    projectors.setflags(write=False)
    dirs.setflags(write=False)
    return projectors, dirs, rank


def projection_kernel_dimension(op: OperatorSpec) -> int:
    return op.d - _verified_rank(op)


def project_AR_free(field: SpectralField, op: OperatorSpec,
                    cpmap: CutProjectMap) -> tuple[SpectralField, ProjectionStats]:
    """Project a d-component field onto the admissible corrector space: each
    coefficient v_k is mapped into ker S(R*k) and the mean is zeroed.

    Idempotent, linear, and a contraction in the RMS norm.  Refuses when the
    map has not passed the diophantine gate (at a resonant k the kernel would
    be the whole space and the characterization breaks).
    """
    cpmap.require_validated()
    if field.cell.grid_shape != cpmap.cell.grid_shape:
        raise InvalidInputError("field grid does not match the map cell grid")
    if field.comp_shape != (op.d,):
        raise InvalidInputError(
            f"field must have component shape ({op.d},), got {field.comp_shape}"
        )
    projectors, dirs, _ = _projector_stack(op, cpmap)

    coeffs = field.spectrum()
    K = _grid_size(field.cell)
    flat = coeffs.reshape(K, op.d)
    removed_mean = flat[0].real.copy()
    modes_touched = int(np.count_nonzero(np.any(flat[1:] != 0.0, axis=1)))

    out = np.einsum("kij,kj->ki", projectors, flat)
    out[0] = 0.0

    # scale-invariant constraint residual: symbol at unit directions
    sym = symbol(op, dirs[1:])
    res = np.einsum("kld,kd->kl", sym, out[1:])
    residual = float(np.sqrt(np.sum(np.abs(res) ** 2)))

    new_coeffs = out.reshape(coeffs.shape)
    projected = SpectralField(field.cell, _inverse(new_coeffs, field.cell), new_coeffs)
    stats = ProjectionStats(removed_mean=removed_mean, residual_norm=residual,
                            modes_touched=modes_touched)
    return projected, stats


# ---------------------------------------------------------------------------
# Synthesis of gradient-type corrector fields (curl case)
# ---------------------------------------------------------------------------

def _canonical(k: tuple[int, ...]) -> bool:
    for v in k:
        if v > 0:
            return True
        if v < 0:
            return False
    return False


def synthesize_G_R(cpmap: CutProjectMap, lambdas: dict, n: int) -> SpectralField:
    """Build the n-component field whose k-th coefficient is lambda_k R*k.

    lambdas maps integer m-tuples to complex scalars and must be
    conjugate-symmetric with lambda_0 absent (or zero); coefficients are set
    on canonical representatives and mirrored Hermitianly so the field is
    real.  The result is a fixed point of the curl-case projection.
    """
    if n != cpmap.n:
        raise InvalidInputError(f"G_R fields have {cpmap.n} components, got n={n}")
    grid = cpmap.cell.grid_shape
    m = cpmap.m
    cleaned: dict[tuple[int, ...], complex] = {}
    for key, lam in lambdas.items():
        k = tuple(int(v) for v in key)
        if len(k) != m:
            raise InvalidInputError(f"frequency {k} must have {m} entries")
        lam = complex(lam)
        if all(v == 0 for v in k):
            if lam != 0:
                raise InvalidInputError("lambda_0 must be absent or zero")
            continue
        for j, v in enumerate(k):
            if abs(v) >= grid[j] // 2:
                raise InvalidInputError(
                    f"frequency {k} is at or beyond the Nyquist band of grid {grid}"
                )
        cleaned[k] = lam

    for k, lam in cleaned.items():
        neg = tuple(-v for v in k)
        if neg in cleaned:
            other = cleaned[neg]
            scale = max(abs(lam), abs(other), 1.0)
            if abs(other - np.conj(lam)) > 1e-12 * scale:
                raise InvalidInputError(
                    f"lambdas are not conjugate-symmetric at k={k}"
                )

    coeffs = np.zeros(grid + (n,), dtype=complex)
    shape = np.array(grid)
    for k, lam in cleaned.items():
        if not _canonical(k):
            continue
        w = cpmap.dual_frequency(np.array(k, dtype=float))
        idx = tuple(np.mod(k, shape))
        nidx = tuple(np.mod([-v for v in k], shape))
        coeffs[idx] = lam * w
        coeffs[nidx] = np.conj(lam * w)
    # pairs where only the non-canonical side was supplied
    for k, lam in cleaned.items():
        if _canonical(k) or tuple(-v for v in k) in cleaned:
            continue
        neg = tuple(-v for v in k)
        w = cpmap.dual_frequency(np.array(neg, dtype=float))
        idx = tuple(np.mod(neg, shape))
        nidx = tuple(np.mod(k, shape))
        coeffs[idx] = np.conj(lam) * w
        coeffs[nidx] = np.conj(np.conj(lam) * w)
    return field_from_coeffs(cpmap.cell, coeffs)


def truncate(field: SpectralField, N: int) -> SpectralField:
    """Zero every coefficient with |k|_inf > N (square partial sum)."""
    if N < 0:
        raise InvalidInputError("truncation order must be >= 0")
    coeffs = field.spectrum()
    klat = frequency_lattice(field.cell.grid_shape)
    keep = np.max(np.abs(klat), axis=1) <= N
    flat = coeffs.reshape(klat.shape[0], -1).copy()
    flat[~keep] = 0.0
    return field_from_coeffs(field.cell, flat.reshape(coeffs.shape))


# ---------------------------------------------------------------------------
# Field construction helpers
# ---------------------------------------------------------------------------

def fractional_grid(cell: CellLattice) -> np.ndarray:
    axes = [np.arange(g) / g for g in cell.grid_shape]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def trig_scalar_field(cell: CellLattice, const: float = 0.0, terms=()) -> SpectralField:
    """const + sum of cos/sin harmonics: terms are (k, cos_amp, sin_amp)."""
    t = fractional_grid(cell)
    vals = np.full(cell.grid_shape, float(const))
    for k, ca, sa in terms:
        phase = 2.0 * np.pi * np.tensordot(t, np.asarray(k, dtype=float), axes=(-1, 0))
        if ca:
            vals = vals + ca * np.cos(phase)
        if sa:
            vals = vals + sa * np.sin(phase)
    return SpectralField(cell, vals)


def exp_trig_scalar_field(cell: CellLattice, beta: float, terms=()) -> SpectralField:
    """exp(beta * trig sum); analytic, with geometrically decaying spectrum."""
    base = trig_scalar_field(cell, 0.0, terms)
    return SpectralField(cell, np.exp(beta * base.values))


# ---------------------------------------------------------------------------
# Binary serialization ("QLHF")
# ---------------------------------------------------------------------------

FIELD_MAGIC = b"QLHF"
FIELD_VERSION = 1
_HEADER = struct.Struct("<4sIII8H")  # magic, version, m, d, grid dims (zero padded)


def save_field(path, field: SpectralField) -> None:
    """Write the 32-byte header followed by the little-endian float64 samples.

    Only scalar and vector fields are serialized; scalars are stored with
    d=1.  The cell basis is not part of the format (it lives in the run
    manifest); payload order is C-contiguous over grid axes then components.
    """
    comp = field.comp_shape
    if len(comp) > 1:
        raise InvalidInputError("only scalar or vector fields can be serialized")
    d = comp[0] if comp else 1
    m = field.cell.dimension
    if m > 8:
        raise InvalidInputError("serialization supports at most 8 grid axes")
    dims = list(field.cell.grid_shape) + [0] * (8 - m)
    header = _HEADER.pack(FIELD_MAGIC, FIELD_VERSION, m, d, *dims)
    payload = field.values.reshape(field.cell.grid_shape + (d,))
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def load_field(path, cell: CellLattice | None = None) -> SpectralField:
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise InvalidInputError(f"{path}: truncated field header")
        magic, version, m, d, *dims = _HEADER.unpack(raw)
        if magic != FIELD_MAGIC:
            raise InvalidInputError(f"{path}: bad magic {magic!r}")
        if version != FIELD_VERSION:
            raise InvalidInputError(f"{path}: unsupported version {version}")
        grid = tuple(int(g) for g in dims[:m])
        count = int(np.prod(grid)) * d
        data = np.frombuffer(f.read(count * 8), dtype="<f8")
        if data.size != count:
            raise InvalidInputError(f"{path}: truncated payload")
    if cell is None:
        cell = unit_cell(m, grid)
    elif cell.grid_shape != grid or cell.dimension != m:
        raise InvalidInputError(
            f"{path}: stored grid {grid} does not match the supplied cell"
        )
    return SpectralField(cell, data.reshape(grid + (d,)))
