"""Homogenized-density cell problem on the torus.

The homogenized density at a slope xi is the infimum, over mean-zero fields
in the constrained corrector space, of the cell average of f(y, xi + v(y)).
Quadratic densities are solved by projected preconditioned CG on the
stationarity equations; convex C^1 densities by projected gradient descent
with Armijo backtracking.  Both iterate directly on grid values, projecting
in Fourier space every step, so every iterate is admissible.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .cutproject import CutProjectMap
from .errors import InternalError, InvalidInputError
from .fourier import (SpectralField, _grid_size, _projector_stack,
                      _verified_rank, frequency_lattice)
from .operators import OperatorSpec

ENERGY_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class EnergyDensity:
    """Integrand f(y, zeta): either quadratic form data sampled on the grid,
    zeta . A(y) zeta + b(y) . zeta + c(y), or a convex C^1 callback pair
    evaluating f and df/dzeta on whole grid fields at once."""

    kind: str
    d: int
    growth_C: float
    growth_p: float
    A: Optional[SpectralField] = None
    b: Optional[SpectralField] = None
    c: Optional[SpectralField] = None
    value_fn: Optional[Callable] = None
    grad_fn: Optional[Callable] = None


def quadratic_density(A: SpectralField, b: Optional[SpectralField] = None,
                      c: Optional[SpectralField] = None,
                      growth_C: Optional[float] = None,
                      growth_p: float = 2.0) -> EnergyDensity:
    """Quadratic density from an SPD matrix field (plus optional linear and
    constant parts).  Rejects non-symmetric or non-SPD data."""
    comp = A.comp_shape
    if len(comp) != 2 or comp[0] != comp[1]:
        raise InvalidInputError(f"A must be a d x d matrix field, got {comp}")
    d = comp[0]
    mats = A.values
    if not np.allclose(mats, np.swapaxes(mats, -1, -2), atol=1e-12):
        raise InvalidInputError("A(y) must be symmetric at every grid node")
    eigmin = float(np.linalg.eigvalsh(mats)[..., 0].min())
    if eigmin <= 0.0:
        raise InvalidInputError(
            f"A(y) must be positive definite at every node (min eigenvalue {eigmin:.3e})"
        )
    if b is not None and b.comp_shape != (d,):
        raise InvalidInputError(f"b must have component shape ({d},)")
    if c is not None and c.comp_shape != ():
        raise InvalidInputError("c must be a scalar field")
    a_max = float(np.linalg.eigvalsh(mats)[..., -1].max())
    b_max = float(np.linalg.norm(b.values, axis=-1).max()) if b is not None else 0.0
    c_max = float(np.abs(c.values).max()) if c is not None else 0.0
    if b is not None or c is not None:
        _check_nonnegative_quadratic(mats, b, c)
    if growth_C is None:
        growth_C = a_max + b_max + c_max
    return EnergyDensity(kind="quadratic", d=d, growth_C=growth_C,
                         growth_p=growth_p, A=A, b=b, c=c)


def _check_nonnegative_quadratic(mats, b, c):
    # f >= 0 pointwise iff c >= b . A^{-1} b / 4
    bv = b.values if b is not None else np.zeros(mats.shape[:-1])
    cv = c.values if c is not None else np.zeros(mats.shape[:-2])
    sol = np.linalg.solve(mats, bv[..., None])[..., 0]
    worst = float((cv - 0.25 * np.einsum("...i,...i->...", bv, sol)).min())
    if worst < -1e-12:
        raise InvalidInputError(
            f"density is negative somewhere (min f = {worst:.3e}); growth "
            "hypothesis needs f >= 0"
        )


def isotropic_quadratic(a: SpectralField, d: int,
                        growth_C: Optional[float] = None) -> EnergyDensity:
    """A(y) = a(y) I_d from a positive scalar field."""
    if a.comp_shape != ():
        raise InvalidInputError("isotropic coefficient must be a scalar field")
    mats = a.values[..., None, None] * np.eye(d)
    return quadratic_density(SpectralField(a.cell, mats), growth_C=growth_C)


def convex_density(value_fn: Callable, grad_fn: Callable, d: int,
                   growth_C: float, growth_p: float) -> EnergyDensity:
    """Convex C^1 density from grid-level callbacks.

    value_fn(zeta) maps a grid + (d,) array to the grid of f values;
    grad_fn(zeta) returns df/dzeta with the same shape as zeta.  Convexity
    and the growth bound are the caller's responsibility (they are spot
    checked by `check_growth`).
    """
    return EnergyDensity(kind="convex_c1", d=d, growth_C=growth_C,
                         growth_p=growth_p, value_fn=value_fn, grad_fn=grad_fn)


def density_value(density: EnergyDensity, zeta: np.ndarray) -> np.ndarray:
    if density.kind == "quadratic":
        out = np.einsum("...i,...ij,...j->...", zeta, density.A.values, zeta)
        if density.b is not None:
            out = out + np.einsum("...i,...i->...", density.b.values, zeta)
        if density.c is not None:
            out = out + density.c.values
        return out
    return np.asarray(density.value_fn(zeta), dtype=float)


def density_grad(density: EnergyDensity, zeta: np.ndarray) -> np.ndarray:
    if density.kind == "quadratic":
        out = 2.0 * np.einsum("...ij,...j->...i", density.A.values, zeta)
        if density.b is not None:
            out = out + density.b.values
        return out
    return np.asarray(density.grad_fn(zeta), dtype=float)


def mean_energy(density: EnergyDensity, zeta: np.ndarray) -> float:
    """Cell quadrature of f(y, zeta(y)): the grid mean (midpoint rule,
    spectrally accurate for smooth periodic integrands)."""
    return float(density_value(density, zeta).mean())


def check_growth(density: EnergyDensity, seed: int = 0, samples: int = 64,
                 xi_scale: float = 3.0) -> None:
    """Spot check 0 <= f(y, zeta) <= C (1 + |zeta|^p) at random (node, zeta)."""
    rng = np.random.default_rng(seed)
    grid_shape = None
    if density.A is not None:
        grid_shape = density.A.cell.grid_shape
    for _ in range(samples):
        zeta = xi_scale * rng.standard_normal(density.d)
        if grid_shape is not None:
            node = tuple(rng.integers(0, g) for g in grid_shape)
            zfield = np.broadcast_to(zeta, grid_shape + (density.d,))
            val = float(density_value(density, np.array(zfield))[node])
        else:
            zfield = zeta[(None,) * 1]
            val = float(density_value(density, np.array(zfield))[0])
        bound = density.growth_C * (1.0 + np.linalg.norm(zeta) ** density.growth_p)
        if val < -1e-12 or val > bound * (1.0 + 1e-12):
            raise InvalidInputError(
                f"growth hypothesis violated: f={val:.6e} outside [0, {bound:.6e}]"
            )


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CellSolution:
    v: SpectralField
    energy: float
    iterations: int
    residual: float
    history: tuple
    converged: bool
    xi: np.ndarray


@dataclass(frozen=True)
class StepRule:
    """Backtracking parameters for the convex path: sufficient decrease
    coefficient (Armijo constant), the factor the step shrinks by on a
    violation, and a mild per-acceptance recovery factor."""
    armijo_c: float = 0.25
    backtrack: float = 0.5
    grow: float = 1.03
    initial_step: Optional[float] = None
    max_backtracks: int = 60


@dataclass(frozen=True, eq=False)
class EffectiveTensor:
    tensor: np.ndarray
    per_direction_solutions: tuple


class _ConstrainedSpace:
    """Projection machinery for one (operator, map, grid) triple, with the
    per-mode reference-medium scaling used as the CG preconditioner."""

    def __init__(self, op: OperatorSpec, cpmap: CutProjectMap,
                 band_limit: Optional[int] = None):
        self.op = op
        self.cell = cpmap.cell
        self.grid = cpmap.cell.grid_shape
        self.K = _grid_size(cpmap.cell)
        self.d = op.d
        projectors, _, rank = _projector_stack(op, cpmap)
        self.projectors = projectors
        self.kernel_dim = op.d - rank
        self.mask = None
        if band_limit is not None:
            klat = frequency_lattice(self.grid)
            self.mask = np.max(np.abs(klat), axis=1) <= band_limit

    def _hat(self, vals: np.ndarray) -> np.ndarray:
        axes = tuple(range(len(self.grid)))
        return np.fft.fftn(vals, axes=axes).reshape(self.K, self.d)

    def _unhat(self, flat: np.ndarray) -> np.ndarray:
        axes = tuple(range(len(self.grid)))
        return np.fft.ifftn(flat.reshape(self.grid + (self.d,)), axes=axes).real

    def project(self, vals: np.ndarray) -> np.ndarray:
        flat = self._hat(vals)
        out = np.einsum("kij,kj->ki", self.projectors, flat)
        out[0] = 0.0
        if self.mask is not None:
            out[~self.mask] = 0.0
        return self._unhat(out)

    def make_preconditioner(self, reference: np.ndarray):
        """M^{-1} r: per-mode (1/gamma_k) P_k r_k with gamma_k the mean
        Rayleigh quotient of the reference matrix on the mode's kernel."""
        if self.kernel_dim == 0:
            return lambda vals: vals
        gammas = np.einsum("ij,kji->k", reference, self.projectors) / self.kernel_dim
        gammas = np.maximum(gammas, 1e-300)

        def apply(vals: np.ndarray) -> np.ndarray:
            flat = self._hat(vals)
            out = np.einsum("kij,kj->ki", self.projectors, flat)
            out /= gammas[:, None]
            out[0] = 0.0
            if self.mask is not None:
                out[~self.mask] = 0.0
            return self._unhat(out)

        return apply


def _inner(a: np.ndarray, b: np.ndarray, K: int) -> float:
    """Cell-mean inner product: mean over nodes of the component dot."""
    return float(np.dot(a.ravel(), b.ravel()) / K)


def _prepare(density: EnergyDensity, xi, op: OperatorSpec, cpmap: CutProjectMap):
    if op.d != density.d:
        raise InvalidInputError(
            f"operator acts on {op.d}-component fields, density has d={density.d}"
        )
    cpmap.require_validated()
    _verified_rank(op)
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.shape != (density.d,):
        raise InvalidInputError(f"xi must be a {density.d}-vector")
    if density.A is not None and density.A.cell.grid_shape != cpmap.cell.grid_shape:
        raise InvalidInputError("density grid does not match the map cell grid")
    return xi


def solve_cell_quadratic(density: EnergyDensity, xi, op: OperatorSpec,
                         cpmap: CutProjectMap, tol: float = 1e-8,
                         max_iter: int = 500) -> CellSolution:
    """Minimize the cell average of the quadratic density over the
    constrained mean-zero space by projected preconditioned CG.

    Starts from v = 0 (admissible), so the energy history is non-increasing
    and the final energy never exceeds the unrelaxed cell mean.  Terminates
    on relative projected-gradient residual; a run that hits max_iter returns
    the best iterate flagged non-converged.
    """
    if density.kind != "quadratic":
        raise InvalidInputError("solve_cell_quadratic needs a quadratic density")
    xi = _prepare(density, xi, op, cpmap)
    space = _ConstrainedSpace(op, cpmap)
    grid = cpmap.cell.grid_shape
    K = space.K

    A_vals = density.A.values
    reference = A_vals.reshape(K, density.d, density.d).mean(axis=0)
    precond = space.make_preconditioner(reference)

    def apply_T(v):
        return space.project(np.einsum("...ij,...j->...i", A_vals, v))

    zeta0 = np.broadcast_to(xi, grid + (density.d,)).copy()
    rhs = -space.project(density_grad(density, zeta0) / 2.0)

    v = np.zeros(grid + (density.d,))
    history = []

    def record(it, vcur, r):
        energy = mean_energy(density, zeta0 + vcur)
        residual = 2.0 * np.sqrt(max(_inner(r, r, K), 0.0))
        history.append((it, energy, residual))
        return energy, residual

    r = rhs.copy()
    _, res0 = record(0, v, r)
    if res0 == 0.0 or space.kernel_dim == 0:
        return CellSolution(v=SpectralField(cpmap.cell, v), energy=history[0][1],
                            iterations=0, residual=res0, history=tuple(history),
                            converged=True, xi=xi)

    z = precond(r)
    p = z.copy()
    rz = _inner(r, z, K)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Tp = apply_T(p)
        pTp = _inner(p, Tp, K)
        if pTp <= 0.0:
            break
        alpha = rz / pTp
        v += alpha * p
        r -= alpha * Tp
        _, res = record(it, v, r)
        if res <= tol * res0:
            converged = True
            break
        z = precond(r)
        rz_new = _inner(r, z, K)
        p = z + (rz_new / rz) * p
        rz = rz_new

    v = space.project(v)
    energy, residual = history[-1][1], history[-1][2]
    return CellSolution(v=SpectralField(cpmap.cell, v), energy=energy,
                        iterations=it, residual=residual, history=tuple(history),
                        converged=converged, xi=xi)


def gradient_consistency_check(density: EnergyDensity, xi, grid_shape,
                               seed: int = 0, probes: int = 8,
                               rel_tol: float = 1e-5) -> float:
    """Central finite differences of f against the gradient callback at
    random (node, direction) probes; returns the worst relative mismatch and
    raises when it exceeds rel_tol."""
    rng = np.random.default_rng(seed)
    xi = np.asarray(xi, dtype=float)
    d = density.d
    base = np.broadcast_to(xi, tuple(grid_shape) + (d,)).copy()
    base += 0.1 * rng.standard_normal(base.shape)
    grad = density_grad(density, base)
    worst = 0.0
    for _ in range(probes):
        node = tuple(rng.integers(0, g) for g in grid_shape)
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        h = 1e-4 * max(1.0, float(np.linalg.norm(base[node])))
        plus = base.copy()
        plus[node] += h * direction
        minus = base.copy()
        minus[node] -= h * direction
        fd = (density_value(density, plus)[node]
              - density_value(density, minus)[node]) / (2.0 * h)
        an = float(grad[node] @ direction)
        mismatch = abs(fd - an) / max(1.0, abs(an))
        worst = max(worst, mismatch)
    if worst > rel_tol:
        raise InvalidInputError(
            f"gradient callback disagrees with finite differences "
            f"(relative mismatch {worst:.3e} > {rel_tol:g})"
        )
    return worst


def solve_cell_convex(density: EnergyDensity, xi, op: OperatorSpec,
                      cpmap: CutProjectMap, tol: float = 1e-6,
                      max_iter: int = 20000,
                      step_rule: Optional[StepRule] = None,
                      band_limit: Optional[int] = None,
                      seed: int = 0) -> CellSolution:
    """Projected gradient descent with Armijo backtracking for convex C^1
    densities (quadratic densities are accepted too and must agree with the
    CG path).

    The gradient callback is checked against finite differences before
    iterating.  Every iterate is re-projected; an energy increase beyond
    roundoff slack raises InternalError since backtracking enforces descent.
    """
    xi = _prepare(density, xi, op, cpmap)
    rule = step_rule or StepRule()
    space = _ConstrainedSpace(op, cpmap, band_limit=band_limit)
    grid = cpmap.cell.grid_shape
    K = space.K

    gradient_consistency_check(density, xi, grid, seed=seed)

    zeta0 = np.broadcast_to(xi, grid + (density.d,)).copy()
    v = np.zeros(grid + (density.d,))
    energy = mean_energy(density, zeta0)
    g = space.project(density_grad(density, zeta0 + v))
    res0 = np.sqrt(max(_inner(g, g, K), 0.0))
    history = [(0, energy, res0)]
    if res0 == 0.0 or space.kernel_dim == 0:
        return CellSolution(v=SpectralField(cpmap.cell, v), energy=energy,
                            iterations=0, residual=res0, history=tuple(history),
                            converged=True, xi=xi)

    if rule.initial_step is not None:
        step = rule.initial_step
    else:
        # probe the gradient Lipschitz constant along the descent direction
        delta = 1e-4 * max(1.0, float(np.linalg.norm(xi)))
        probe = space.project(density_grad(density, zeta0 + v - (delta / res0) * g))
        lip = np.sqrt(max(_inner(probe - g, probe - g, K), 0.0)) / delta
        step = 1.0 / max(lip, 1e-12)

    # measured decrease saturates at the energy roundoff floor; below it the
    # descent-lemma check is trivially true and progress is tracked by the
    # residual alone
    noise = ENERGY_SLACK * max(1.0, abs(energy))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gg = _inner(g, g, K)
        accepted = False
        for _ in range(rule.max_backtracks):
            candidate = space.project(v - step * g)
            cand_energy = mean_energy(density, zeta0 + candidate)
            if cand_energy <= energy - rule.armijo_c * step * gg + noise:
                accepted = True
                break
            step *= rule.backtrack
        if not accepted:
            break
        if cand_energy > energy + 1e-9 * max(1.0, abs(energy)):
            raise InternalError(
                "energy increased along an accepted descent step; projection "
                "or gradient is inconsistent"
            )
        v = candidate
        energy = cand_energy
        g = space.project(density_grad(density, zeta0 + v))
        res = np.sqrt(max(_inner(g, g, K), 0.0))
        history.append((it, energy, res))
        if res <= tol * res0:
            converged = True
            break
        step *= rule.grow

    residual = history[-1][2]
    return CellSolution(v=SpectralField(cpmap.cell, v), energy=energy,
                        iterations=it, residual=residual, history=tuple(history),
                        converged=converged, xi=xi)


# ---------------------------------------------------------------------------
# Effective tensors and density tables
# ---------------------------------------------------------------------------

def effective_tensor(density: EnergyDensity, op: OperatorSpec,
                     cpmap: CutProjectMap, tol: float = 1e-8,
                     max_iter: int = 500, threads: int = 1) -> EffectiveTensor:
    """Assemble the homogenized matrix of a pure quadratic density: solve one
    cell problem per basis slope, recover off-diagonals by polarization."""
    if density.kind != "quadratic" or density.b is not None or density.c is not None:
        raise InvalidInputError(
            "effective_tensor needs a pure quadratic density (b = 0, c = 0)"
        )
    d = density.d
    slopes = [np.eye(d)[i] for i in range(d)]
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    slopes += [np.eye(d)[i] + np.eye(d)[j] for i, j in pairs]

    def solve(s):
        return solve_cell_quadratic(density, s, op, cpmap, tol=tol, max_iter=max_iter)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            solutions = list(pool.map(solve, slopes))
    else:
        solutions = [solve(s) for s in slopes]

    tensor = np.zeros((d, d))
    for i in range(d):
        tensor[i, i] = solutions[i].energy
    for idx, (i, j) in enumerate(pairs):
        mixed = solutions[d + idx].energy
        tensor[i, j] = tensor[j, i] = 0.5 * (mixed - tensor[i, i] - tensor[j, j])
    return EffectiveTensor(tensor=tensor,
                           per_direction_solutions=tuple(solutions[:d]))


def f_hom_table(density: EnergyDensity, op: OperatorSpec, cpmap: CutProjectMap,
                xis, tol: float = 1e-8, max_iter: int = 500,
                threads: int = 1) -> list:
    """Evaluate the homogenized density at each supplied slope."""
    xis = [np.asarray(x, dtype=float).reshape(-1) for x in xis]

    def solve(x):
        if density.kind == "quadratic":
            sol = solve_cell_quadratic(density, x, op, cpmap, tol=tol,
                                       max_iter=max_iter)
        else:
            sol = solve_cell_convex(density, x, op, cpmap, tol=tol,
                                    max_iter=max_iter)
        return sol.energy

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            energies = list(pool.map(solve, xis))
    else:
        energies = [solve(x) for x in xis]
    return list(zip(xis, energies))


def arithmetic_mean_tensor(density: EnergyDensity) -> np.ndarray:
    mats = density.A.values
    return mats.reshape(-1, density.d, density.d).mean(axis=0)


def harmonic_mean_tensor(density: EnergyDensity) -> np.ndarray:
    mats = density.A.values.reshape(-1, density.d, density.d)
    return np.linalg.inv(np.linalg.inv(mats).mean(axis=0))
