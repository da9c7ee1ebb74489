"""Cut-and-project maps and quasiperiodic sampling.

A slice map takes points of the low-dimensional physical space R^n into a
high-dimensional torus R^m / lattice(Y^m); composing a Y^m-periodic field
sigma with the map produces the quasiperiodic field sigma(R x).  The whole
theory is only well posed when the transposed map annihilates no nonzero
integer frequency, which `check_diophantine` tests exhaustively on a box.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, MapValidationError, UnsupportedDemoError

TAU = (1.0 + math.sqrt(5.0)) / 2.0

#: per-axis grid defaults by torus dimension (desk-scale runs)
DEFAULT_GRID_PER_AXIS = {1: 128, 2: 128, 3: 64, 4: 24, 5: 12, 6: 8}

DEFAULT_K_MAX = 8
DEFAULT_HARD_TOLERANCE = 1e-12
NEAR_RESONANCE_THRESHOLD = 1e-3


def default_grid_shape(m: int) -> tuple[int, ...]:
    per_axis = DEFAULT_GRID_PER_AXIS.get(m, 4)
    return (per_axis,) * m


@dataclass(frozen=True, eq=False)
class CellLattice:
    """Periodicity cell Y^m: a parallelotope spanned by the basis columns,
    sampled on a uniform grid in basis coordinates."""

    dimension: int
    basis: np.ndarray
    grid_shape: tuple[int, ...]

    def __post_init__(self):
        basis = np.array(self.basis, dtype=float)
        if basis.shape != (self.dimension, self.dimension):
            raise InvalidInputError(
                f"cell basis must be {self.dimension}x{self.dimension}, got {basis.shape}"
            )
        det = np.linalg.det(basis)
        if abs(det) <= 1e-14:
            raise InvalidInputError(f"cell basis is singular (|det| = {abs(det):.3e})")
        grid = tuple(int(g) for g in self.grid_shape)
        if len(grid) != self.dimension:
            raise InvalidInputError(
                f"grid_shape must have {self.dimension} entries, got {len(grid)}"
            )
        for g in grid:
            if g < 2 or g % 2 != 0:
                raise InvalidInputError(f"grid_shape entries must be even and >= 2, got {g}")
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "grid_shape", grid)
        inv = np.linalg.inv(basis)
        inv.setflags(write=False)
        object.__setattr__(self, "_inverse_basis", inv)
        object.__setattr__(self, "_volume", abs(det))

    @property
    def inverse_basis(self) -> np.ndarray:
        return self._inverse_basis

    @property
    def dual_basis(self) -> np.ndarray:
        """Rows of B^{-1}, i.e. the matrix B^{-T} whose columns are the
        frequency vectors of exp(2*pi*i k . B^{-1} y)."""
        return self._inverse_basis.T

    @property
    def volume(self) -> float:
        return self._volume

    def nodes(self) -> np.ndarray:
        """Grid node coordinates in physical space, shape grid_shape + (m,)."""
        axes = [np.arange(g) / g for g in self.grid_shape]
        mesh = np.meshgrid(*axes, indexing="ij")
        frac = np.stack(mesh, axis=-1)
        return frac @ self.basis.T

    def is_unit_cube(self) -> bool:
        return np.array_equal(self.basis, np.eye(self.dimension))


def unit_cell(m: int, grid_shape=None) -> CellLattice:
    if grid_shape is None:
        grid_shape = default_grid_shape(m)
    return CellLattice(m, np.eye(m), tuple(grid_shape))


@dataclass(frozen=True, eq=False)
class CutProjectMap:
    """Linear slice map R: R^n -> R^m together with its periodicity cell.

    `validate` caches diophantine reports; operations that rely on unique
    ergodic means call `require_validated` and refuse until a violation-free
    report exists.
    """

    n: int
    m: int
    R: np.ndarray
    cell: CellLattice
    _reports: dict = field(init=False, default_factory=dict, repr=False)

    def __post_init__(self):
        if not (self.m >= self.n >= 1):
            raise InvalidInputError(f"need m >= n >= 1, got m={self.m}, n={self.n}")
        R = np.array(self.R, dtype=float)
        if R.shape != (self.m, self.n):
            raise InvalidInputError(f"R must be {self.m}x{self.n}, got {R.shape}")
        svals = np.linalg.svd(R, compute_uv=False)
        if svals[-1] <= 1e-12 * svals[0]:
            raise InvalidInputError(
                "R does not have full column rank "
                f"(singular values {svals[0]:.3e} .. {svals[-1]:.3e})"
            )
        if self.cell.dimension != self.m:
            raise InvalidInputError(
                f"cell dimension {self.cell.dimension} does not match m={self.m}"
            )
        R.setflags(write=False)
        object.__setattr__(self, "R", R)
        # R^T B^{-T}: maps an integer cell frequency k to its slice frequency.
        dual = R.T @ self.cell.dual_basis
        dual.setflags(write=False)
        object.__setattr__(self, "_dual_map", dual)

    def dual_frequency(self, k) -> np.ndarray:
        """Slice frequency R* B^{-T} k of the periodic exponential with
        integer index k; accepts a single m-vector or a (..., m) batch."""
        k = np.asarray(k, dtype=float)
        return k @ self._dual_map.T

    def validate(self, k_max: int = DEFAULT_K_MAX,
                 hard_tolerance: float = DEFAULT_HARD_TOLERANCE) -> "DiophantineReport":
        key = (int(k_max), float(hard_tolerance))
        report = self._reports.get(key)
        if report is None:
            report = check_diophantine(self, k_max, hard_tolerance)
            self._reports[key] = report
        return report

    @property
    def is_validated(self) -> bool:
        return any(not rep.violations for rep in self._reports.values())

    def require_validated(self) -> None:
        if not self.is_validated:
            for rep in self._reports.values():
                if rep.violations:
                    raise MapValidationError(
                        "map failed the diophantine criterion: R*k = 0 at "
                        f"k = {tuple(rep.violations[0])}"
                    )
            raise MapValidationError(
                "map has not been validated; call validate() before using "
                "operations that need unique ergodic means"
            )


@dataclass(frozen=True)
class DiophantineReport:
    """Result of an exhaustive small-divisor scan over 0 < |k|_inf <= k_max."""

    k_max: int
    min_norm: float
    argmin_k: tuple[int, ...]
    violations: tuple[tuple[int, ...], ...]
    hard_tolerance: float

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def near_resonant(self) -> bool:
        """True when the smallest divisor is nonzero but below 1e-3; reported
        as a warning, never as a violation (the theory only needs R*k != 0)."""
        return self.passed and self.min_norm < NEAR_RESONANCE_THRESHOLD


def check_diophantine(cpmap: CutProjectMap, k_max: int,
                      hard_tolerance: float = DEFAULT_HARD_TOLERANCE) -> DiophantineReport:
    """Exhaustively scan all integer k with 0 < |k|_inf <= k_max and return
    the exact minimum of |R* B^{-T} k| over the box.

    The scan is lexicographic in k, and ties keep the earliest k, so the
    reported argmin is deterministic.
    """
    if k_max < 1:
        raise InvalidInputError(f"k_max must be >= 1, got {k_max}")
    if not hard_tolerance > 0:
        raise InvalidInputError(f"hard_tolerance must be positive, got {hard_tolerance}")
    m = cpmap.m
    dual = cpmap._dual_map  # (n, m)
    side = np.arange(-k_max, k_max + 1, dtype=np.int64)

    if m == 1:
        rest = np.empty((1, 0), dtype=np.int64)
    else:
        mesh = np.meshgrid(*([side] * (m - 1)), indexing="ij")
        rest = np.stack([g.ravel() for g in mesh], axis=1)

    best = np.inf
    best_k: tuple[int, ...] | None = None
    violations: list[tuple[int, ...]] = []
    for k0 in side:
        ks = np.concatenate(
            [np.full((rest.shape[0], 1), k0, dtype=np.int64), rest], axis=1
        )
        if k0 == 0:
            ks = ks[np.any(ks != 0, axis=1)]
            if ks.size == 0:
                continue
        norms = np.linalg.norm(ks @ dual.T, axis=1)
        i = int(np.argmin(norms))
        if norms[i] < best:
            best = float(norms[i])
            best_k = tuple(int(v) for v in ks[i])
        bad = np.nonzero(norms < hard_tolerance)[0]
        for j in bad:
            violations.append(tuple(int(v) for v in ks[j]))
    assert best_k is not None
    return DiophantineReport(
        k_max=int(k_max),
        min_norm=best,
        argmin_k=best_k,
        violations=tuple(violations),
        hard_tolerance=float(hard_tolerance),
    )


# ---------------------------------------------------------------------------
# Quasiperiodic fields sigma(R x)
# ---------------------------------------------------------------------------

INTERPOLATION_MODES = ("fourier", "trilinear")


@dataclass(frozen=True, eq=False)
class QuasiperiodicField:
    """Periodic data sigma on Y^m restricted to the slice: value(x) = sigma(R x).

    `fourier` interpolation evaluates the truncated Fourier series exactly at
    the reduced coordinates (exact for band-limited sigma); `trilinear` does
    periodic multilinear interpolation, which is preferable for indicator-type
    data where Gibbs ringing is worse than blur.
    """

    map: CutProjectMap
    sigma: "object"  # SpectralField; typed loosely to avoid an import cycle
    interpolation: str = "fourier"

    def __post_init__(self):
        if self.interpolation not in INTERPOLATION_MODES:
            raise InvalidInputError(
                f"interpolation must be one of {INTERPOLATION_MODES}, "
                f"got {self.interpolation!r}"
            )
        if self.sigma.cell.grid_shape != self.map.cell.grid_shape:
            raise InvalidInputError(
                f"sigma grid {self.sigma.cell.grid_shape} does not match the "
                f"map cell grid {self.map.cell.grid_shape}"
            )


def ergodic_mean(qfield: QuasiperiodicField, k_max: int = DEFAULT_K_MAX,
                 hard_tolerance: float = DEFAULT_HARD_TOLERANCE):
    """Cell average of sigma over Y^m, which equals the large-volume mean of
    sigma(R x) whenever the diophantine criterion holds.

    Refuses with MapValidationError when the scan at the configured k_max
    finds violations: the mean is then not uniquely defined.
    """
    report = qfield.map.validate(k_max, hard_tolerance)
    if report.violations:
        raise MapValidationError(
            "ergodic mean not uniquely defined: R*k = 0 at "
            f"k = {report.violations[0]} (and {len(report.violations) - 1} more)"
        )
    m = qfield.map.m
    values = qfield.sigma.values
    mean = values.mean(axis=tuple(range(m)))
    if mean.ndim == 0:
        return float(mean)
    return mean


def sample_slice(qfield: QuasiperiodicField, points) -> np.ndarray:
    """Evaluate sigma(R x) at each point x.

    Points are reduced into the fundamental cell via the basis coordinates
    modulo 1 before interpolation, so the result is invariant under adding
    any integer combination of cell basis vectors to R x.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != qfield.map.n:
        raise InvalidInputError(
            f"points must have {qfield.map.n} coordinates, got {pts.shape[-1]}"
        )
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("points must be finite")
    y = pts @ qfield.map.R.T
    frac = (y @ qfield.map.cell.inverse_basis.T) % 1.0
    if qfield.interpolation == "fourier":
        from .fourier import evaluate_at_fractional
        return evaluate_at_fractional(qfield.sigma, frac)
    return _multilinear_periodic(qfield.sigma.values, qfield.map.cell.grid_shape, frac)


def _multilinear_periodic(values: np.ndarray, grid_shape, frac: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation at fractional coordinates (Q, m)."""
    m = len(grid_shape)
    shape = np.array(grid_shape)
    scaled = frac * shape
    base = np.floor(scaled).astype(np.int64)
    t = scaled - base
    comp_shape = values.shape[m:]
    out = np.zeros((frac.shape[0],) + comp_shape)
    for corner in itertools.product((0, 1), repeat=m):
        idx = tuple((base[:, a] + corner[a]) % shape[a] for a in range(m))
        w = np.ones(frac.shape[0])
        for a in range(m):
            w = w * (t[:, a] if corner[a] else 1.0 - t[:, a])
        out += w.reshape((-1,) + (1,) * len(comp_shape)) * values[idx]
    return out


# ---------------------------------------------------------------------------
# Strip-projection demo (5 -> 2)
# ---------------------------------------------------------------------------

def penrose_demo(cpmap: CutProjectMap, window_radius: float, extent: float,
                 resolution: int) -> np.ndarray:
    """Raster the strip-projection indicator field for a 5 -> 2 map.

    sigma is the indicator of the open cubical window |p|_inf < window_radius
    in the 3 perpendicular coordinates of the wrapped lift, so the pixel value
    only depends on the lattice point the lift rounds to.  Returns a uint8
    image (resolution x resolution) with 255 inside the window.
    """
    if cpmap.m != 5 or cpmap.n != 2:
        raise UnsupportedDemoError(
            f"strip-projection demo needs m=5, n=2, got m={cpmap.m}, n={cpmap.n}"
        )
    if window_radius < 0:
        raise InvalidInputError("window_radius must be >= 0")
    if extent <= 0 or resolution < 1:
        raise InvalidInputError("extent must be > 0 and resolution >= 1")

    # orthonormal basis of the perpendicular space (complement of col R)
    u, _, _ = np.linalg.svd(cpmap.R, full_matrices=True)
    perp = u[:, cpmap.n:]

    coords = np.linspace(-extent, extent, resolution)
    x1, x2 = np.meshgrid(coords, coords, indexing="xy")
    pts = np.stack([x1.ravel(), x2.ravel()], axis=1)
    y = pts @ cpmap.R.T
    c = y @ cpmap.cell.inverse_basis.T
    wrapped = (c - np.round(c)) @ cpmap.cell.basis.T
    p = wrapped @ perp
    inside = np.max(np.abs(p), axis=1) < window_radius
    img = np.where(inside, 255, 0).astype(np.uint8)
    return img.reshape(resolution, resolution)


def encode_pgm(image: np.ndarray) -> bytes:
    """Binary PGM (P5, maxval 255) encoding of a uint8 image."""
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise InvalidInputError("PGM encoding expects a 2-D image")
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_pgm(image))


# ---------------------------------------------------------------------------
# Named map presets
# ---------------------------------------------------------------------------

def golden_ratio_map(grid_shape=None) -> CutProjectMap:
    """R = [1; tau]: the 1-D slice of the 2-torus with golden-ratio slope."""
    return CutProjectMap(1, 2, np.array([[1.0], [TAU]]), unit_cell(2, grid_shape))


def identity_map(m: int = 2, grid_shape=None) -> CutProjectMap:
    """Periodic reduction: m = n and R = I, the classical periodic setting."""
    return CutProjectMap(m, m, np.eye(m), unit_cell(m, grid_shape))


def alcufe_map(grid_shape=None) -> CutProjectMap:
    """The 6x3 icosahedral matrix of the Al-Cu-Fe quasicrystalline phase."""
    scale = 1.0 / math.sqrt(2.0 * (TAU + 2.0))
    R = scale * np.array(
        [
            [1.0, TAU, 0.0],
            [TAU, 0.0, 1.0],
            [0.0, 1.0, TAU],
            [-1.0, TAU, 0.0],
            [TAU, 0.0, -1.0],
            [0.0, -1.0, TAU],
        ]
    )
    return CutProjectMap(3, 6, R, unit_cell(6, grid_shape))


def penrose_map(grid_shape=None) -> CutProjectMap:
    """Canonical 5 -> 2 projection onto the plane of five-fold symmetry."""
    j = np.arange(5)
    R = np.sqrt(2.0 / 5.0) * np.stack(
        [np.cos(2.0 * np.pi * j / 5.0), np.sin(2.0 * np.pi * j / 5.0)], axis=1
    )
    return CutProjectMap(2, 5, R, unit_cell(5, grid_shape))


MAP_PRESETS = {
    "golden": golden_ratio_map,
    "identity2": lambda grid_shape=None: identity_map(2, grid_shape),
    "identity3": lambda grid_shape=None: identity_map(3, grid_shape),
    "alcufe": alcufe_map,
    "penrose5": penrose_map,
}
