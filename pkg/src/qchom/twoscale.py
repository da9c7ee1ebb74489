"""Numerical experiments around slice two-scale convergence.

Test functions are finite trigonometric sums with an explicit slow part in x
and a fast part evaluated at the wrapped slice coordinates, so every pairing
limit has a closed form and the oscillatory integrals can be resolved by
composite Gauss-Legendre panels scaled with the oscillation length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .cell import effective_tensor, isotropic_quadratic
from .cutproject import CutProjectMap, QuasiperiodicField, sample_slice
from .errors import InvalidInputError, MapValidationError
from .operators import preset

QUADRATURE_BUDGET = 1 << 24
OSCILLATION_POINTS_PER_UNIT = 10.0


# ---------------------------------------------------------------------------
# Closed-form test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrigTerm:
    """amplitude * cos(2 pi x_freq . x + x_phase) * cos(2 pi k . t + y_phase),
    with t the fast torus coordinate (fractional, i.e. B^{-1} y)."""

    amplitude: float
    x_freq: tuple
    x_phase: float
    k: tuple
    y_phase: float


def term(amplitude=1.0, x_freq=(), x_phase=0.0, k=(), y_phase=0.0) -> TrigTerm:
    return TrigTerm(float(amplitude), tuple(float(a) for a in x_freq),
                    float(x_phase), tuple(int(v) for v in k), float(y_phase))


@dataclass(frozen=True, eq=False)
class TrigFunction:
    """Finite trig sum phi(x, y) on Omega x Y^m."""

    n: int
    m: int
    terms: tuple

    def __post_init__(self):
        for t in self.terms:
            if len(t.x_freq) != self.n or len(t.k) != self.m:
                raise InvalidInputError(
                    f"term frequencies must have lengths (n={self.n}, m={self.m})"
                )

    def eval_xy(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        t = np.atleast_2d(t)
        out = np.zeros(x.shape[0])
        for trm in self.terms:
            slow = np.cos(2.0 * np.pi * (x @ np.asarray(trm.x_freq)) + trm.x_phase)
            fast = np.cos(2.0 * np.pi * (t @ np.asarray(trm.k, dtype=float)) + trm.y_phase)
            out += trm.amplitude * slow * fast
        return out

    def eval_slice(self, x: np.ndarray, cpmap: CutProjectMap, eps: float) -> np.ndarray:
        """phi(x, R x / eps)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = (x @ cpmap.R.T) / eps
        t = (y @ cpmap.cell.inverse_basis.T) % 1.0
        return self.eval_xy(x, t)

    def grad_x(self, x: np.ndarray) -> np.ndarray:
        """Gradient in x of a y-independent function (all k must be zero)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros((x.shape[0], self.n))
        for trm in self.terms:
            if any(trm.k):
                raise InvalidInputError("grad_x needs a y-independent function")
            a = np.asarray(trm.x_freq)
            theta = 2.0 * np.pi * (x @ a) + trm.x_phase if trm.x_freq else trm.x_phase
            scale = trm.amplitude * math.cos(trm.y_phase)
            out += (-scale * 2.0 * np.pi * np.sin(theta))[:, None] * a
        return out

    def cell_mean(self) -> "TrigFunction":
        """The y-average: keeps k = 0 terms with the constant fast factor folded."""
        kept = tuple(
            TrigTerm(t.amplitude * math.cos(t.y_phase), t.x_freq, t.x_phase,
                     t.k, 0.0)
            for t in self.terms if not any(t.k)
        )
        return TrigFunction(self.n, self.m, kept)


@dataclass(frozen=True, eq=False)
class Domain:
    """Axis-aligned box in R^n."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise InvalidInputError("domain lo/hi must have equal lengths")
        if not all(h > l for l, h in zip(self.lo, self.hi)):
            raise InvalidInputError("domain must have positive extent on every axis")

    @property
    def n(self) -> int:
        return len(self.lo)


def _interval_exponential(c: float, lo: float, hi: float) -> complex:
    """Integral of exp(2 pi i c x) over [lo, hi]."""
    if c == 0.0:
        return complex(hi - lo)
    s = 2.0j * np.pi * c
    return (np.exp(s * hi) - np.exp(s * lo)) / s


def _box_cosine_integral(freq: np.ndarray, phase: float, domain: Domain) -> float:
    prod = complex(np.exp(1j * phase))
    for c, lo, hi in zip(freq, domain.lo, domain.hi):
        prod *= _interval_exponential(float(c), float(lo), float(hi))
    return prod.real


def _x_pair_integral(a, pa, b, pb, domain: Domain) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.5 * (_box_cosine_integral(a - b, pa - pb, domain)
                  + _box_cosine_integral(a + b, pa + pb, domain))


def _y_pair_mean(k, pk, q, pq) -> float:
    k = tuple(k)
    q = tuple(q)
    zero_k = not any(k)
    zero_q = not any(q)
    if zero_k and zero_q:
        return math.cos(pk) * math.cos(pq)
    if zero_k or zero_q:
        return 0.0
    negq = tuple(-v for v in q)
    out = 0.0
    if k == q:
        out += 0.5 * math.cos(pk - pq)
    if k == negq:
        out += 0.5 * math.cos(pk + pq)
    return out


def limit_pairing(u: TrigFunction, phi: TrigFunction, domain: Domain) -> float:
    """Closed form of the two-scale pairing limit: the x-integral over the
    box of the cell mean of u(x, .) phi(x, .)."""
    total = 0.0
    for s in u.terms:
        for r in phi.terms:
            ym = _y_pair_mean(s.k, s.y_phase, r.k, r.y_phase)
            if ym == 0.0:
                continue
            total += (s.amplitude * r.amplitude * ym
                      * _x_pair_integral(s.x_freq, s.x_phase, r.x_freq,
                                         r.x_phase, domain))
    return total


# ---------------------------------------------------------------------------
# Oscillatory quadrature
# ---------------------------------------------------------------------------

def _composite_gauss(domain: Domain, eps: float, points_per_panel: int,
                     budget: int = QUADRATURE_BUDGET):
    """Tensor-product composite Gauss-Legendre grid resolving oscillations at
    scale eps: at least 10/eps points per unit length per axis.  Returns
    (nodes (Q, n), weights (Q,)) or None when the budget would be exceeded."""
    base_nodes, base_weights = np.polynomial.legendre.leggauss(points_per_panel)
    axes_nodes = []
    axes_weights = []
    total = 1
    for lo, hi in zip(domain.lo, domain.hi):
        length = hi - lo
        panels = max(1, math.ceil(OSCILLATION_POINTS_PER_UNIT * length
                                  / (eps * points_per_panel)))
        total *= panels * points_per_panel
        if total > budget:
            return None
        edges = lo + length * np.arange(panels + 1) / panels
        half = 0.5 * length / panels
        centers = 0.5 * (edges[:-1] + edges[1:])
        nodes = (centers[:, None] + half * base_nodes[None, :]).ravel()
        weights = np.tile(half * base_weights, panels)
        axes_nodes.append(nodes)
        axes_weights.append(weights)
    mesh = np.meshgrid(*axes_nodes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    wmesh = np.meshgrid(*axes_weights, indexing="ij")
    w = np.ones(pts.shape[0])
    for g in wmesh:
        w = w * g.ravel()
    return pts, w


def integrate_slice_product(fn_x: Callable, phi: TrigFunction,
                            cpmap: CutProjectMap, eps: float, domain: Domain,
                            points_per_panel: int = 8,
                            budget: int = QUADRATURE_BUDGET) -> Optional[float]:
    """Quadrature of integral over the box of fn(x) * phi(x, R x / eps).

    fn_x maps (Q, n) points to (Q,) values.  Returns None when the point
    budget would be exceeded (callers flag the report as partial)."""
    grid = _composite_gauss(domain, eps, points_per_panel, budget)
    if grid is None:
        return None
    pts, w = grid
    vals = np.asarray(fn_x(pts)) * phi.eval_slice(pts, cpmap, eps)
    return float(np.dot(w, vals))


# ---------------------------------------------------------------------------
# Pairing experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PairingExperiment:
    domain: Domain
    epsilons: tuple
    quadrature_points_per_axis: int
    u: TrigFunction
    phi: TrigFunction

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps or any(e <= 0 for e in eps):
            raise InvalidInputError("epsilons must be positive")
        if not all(b < a for a, b in zip(eps, eps[1:])):
            raise InvalidInputError("epsilons must be strictly decreasing")
        object.__setattr__(self, "epsilons", eps)


@dataclass(frozen=True)
class ConvergenceReport:
    values: tuple
    limit: float
    errors: tuple
    fitted_rate: float
    complete: bool


def _fit_rate(epsilons, errors) -> float:
    """Least-squares slope of log error against log eps over the last half of
    the list (pre-asymptotic transients excluded); diagnostic output only."""
    if len(epsilons) < 2:
        return float("nan")
    half = len(epsilons) // 2
    eps = np.asarray(epsilons[half:], dtype=float)
    err = np.maximum(np.asarray(errors[half:], dtype=float), 1e-300)
    if len(eps) < 2:
        eps = np.asarray(epsilons, dtype=float)
        err = np.maximum(np.asarray(errors, dtype=float), 1e-300)
    slope = np.polyfit(np.log(eps), np.log(err), 1)[0]
    return float(slope)


def oscillatory_pairing(exp: PairingExperiment, cpmap: CutProjectMap) -> ConvergenceReport:
    """Evaluate the pairing of u(x, Rx/eps) against phi(x, Rx/eps) for every
    eps, against the closed-form two-scale limit."""
    cpmap.require_validated()
    limit = limit_pairing(exp.u, exp.phi, exp.domain)
    values = []
    complete = True
    for eps in exp.epsilons:
        val = integrate_slice_product(
            lambda x: exp.u.eval_slice(x, cpmap, eps), exp.phi, cpmap, eps,
            exp.domain, exp.quadrature_points_per_axis)
        if val is None:
            complete = False
            break
        values.append((eps, val))
    errors = tuple(abs(v - limit) for _, v in values)
    rate = _fit_rate([e for e, _ in values], errors)
    return ConvergenceReport(values=tuple(values), limit=limit, errors=errors,
                             fitted_rate=rate, complete=complete)


# ---------------------------------------------------------------------------
# Recovery sequences u(x) + eps * potential(R x / eps)
# ---------------------------------------------------------------------------

def _canonical_k(k: tuple) -> bool:
    for v in k:
        if v > 0:
            return True
        if v < 0:
            return False
    return False


def _clean_lambdas(lambdas, m: int, N: int):
    reps = {}
    cleaned = {}
    for key, lam in lambdas.items():
        k = tuple(int(v) for v in key)
        if len(k) != m:
            raise InvalidInputError(f"frequency {k} must have {m} entries")
        lam = complex(lam)
        if not any(k):
            if lam != 0:
                raise InvalidInputError("lambda_0 must be absent or zero")
            continue
        if max(abs(v) for v in k) > N:
            raise InvalidInputError(
                f"frequency {k} exceeds the truncation order N={N}"
            )
        cleaned[k] = lam
    for k, lam in cleaned.items():
        neg = tuple(-v for v in k)
        if neg in cleaned:
            scale = max(abs(lam), abs(cleaned[neg]), 1.0)
            if abs(cleaned[neg] - np.conj(lam)) > 1e-12 * scale:
                raise InvalidInputError(f"lambdas are not conjugate-symmetric at k={k}")
        rep = k if _canonical_k(k) else neg
        rep_lam = lam if rep == k else np.conj(lam)
        reps[rep] = complex(rep_lam)
    return reps


@dataclass(frozen=True, eq=False)
class RecoverySequence:
    """Explicit oscillating field u(x) + eps * w_pot(Rx/eps) whose gradient
    two-scale converges to grad u + w, with w the gradient-type field built
    from the same lambdas."""

    cpmap: CutProjectMap
    u: Optional[TrigFunction]
    epsilon: float
    N: int
    _reps: dict
    _rhos: dict

    def _fast_phase(self, x: np.ndarray) -> np.ndarray:
        y = (x @ self.cpmap.R.T) / self.epsilon
        return (y @ self.cpmap.cell.inverse_basis.T) % 1.0

    def value(self, points) -> np.ndarray:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(x.shape[0])
        if self.u is not None:
            out += self.u.eval_xy(x, np.zeros((x.shape[0], self.cpmap.m)))
        t = self._fast_phase(x)
        for k, lam in self._reps.items():
            theta = 2.0 * np.pi * (t @ np.asarray(k, dtype=float))
            out += self.epsilon * 2.0 * (lam / (2.0j * np.pi) * np.exp(1j * theta)).real
        return out

    def gradient(self, points) -> np.ndarray:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((x.shape[0], self.cpmap.n))
        if self.u is not None:
            out += self.u.grad_x(x)
        t = self._fast_phase(x)
        for k, lam in self._reps.items():
            theta = 2.0 * np.pi * (t @ np.asarray(k, dtype=float))
            out += (2.0 * (lam * np.exp(1j * theta)).real)[:, None] * self._rhos[k]
        return out

    def gradient_limit_component(self, i: int) -> TrigFunction:
        """Closed-form two-scale limit of the i-th gradient component:
        (grad u)_i plus the fast gradient-type field component."""
        terms = []
        if self.u is not None:
            for trm in self.u.terms:
                a = np.asarray(trm.x_freq)
                if a.size and a[i] != 0.0:
                    terms.append(TrigTerm(
                        amplitude=trm.amplitude * math.cos(trm.y_phase)
                        * 2.0 * math.pi * float(a[i]),
                        x_freq=trm.x_freq,
                        x_phase=trm.x_phase + math.pi / 2.0,
                        k=(0,) * self.cpmap.m,
                        y_phase=0.0))
        zero_x = (0.0,) * self.cpmap.n
        for k, lam in self._reps.items():
            rho_i = float(self._rhos[k][i])
            if rho_i == 0.0 or lam == 0:
                continue
            terms.append(TrigTerm(amplitude=2.0 * abs(lam) * rho_i,
                                  x_freq=zero_x, x_phase=0.0, k=k,
                                  y_phase=float(np.angle(lam))))
        return TrigFunction(self.cpmap.n, self.cpmap.m, tuple(terms))


def synthesize_recovery(cpmap: CutProjectMap, u: Optional[TrigFunction],
                        lambdas, epsilon: float, N: int,
                        check: bool = True, seed: int = 0) -> RecoverySequence:
    """Build the truncated recovery field and its exact gradient evaluator.

    u must be y-independent (pure slow part) or None.  lambdas follow the
    same conjugate-symmetric convention as the gradient-type synthesis; modes
    beyond |k|_inf <= N are rejected.  With check=True the gradient is
    verified against central finite differences at random points.
    """
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")
    if N < 0:
        raise InvalidInputError("N must be >= 0")
    if u is not None:
        if u.n != cpmap.n or u.m != cpmap.m:
            raise InvalidInputError("u dimensions do not match the map")
        for trm in u.terms:
            if any(trm.k):
                raise InvalidInputError("the slow part u must be y-independent")
    reps = _clean_lambdas(lambdas, cpmap.m, N)
    rhos = {k: cpmap.dual_frequency(np.asarray(k, dtype=float)) for k in reps}
    seq = RecoverySequence(cpmap=cpmap, u=u, epsilon=float(epsilon), N=int(N),
                           _reps=reps, _rhos=rhos)
    if check:
        _check_recovery_gradient(seq, seed=seed)
    return seq


def _check_recovery_gradient(seq: RecoverySequence, seed: int = 0,
                             points: int = 16, tol: float = 1e-6) -> None:
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(points, seq.cpmap.n))
    grad = seq.gradient(x)
    # optimal central-difference step for the fast oscillation scale
    curvature = 1.0
    for k, lam in seq._reps.items():
        rho = np.linalg.norm(seq._rhos[k])
        curvature += 2.0 * abs(lam) * (2.0 * np.pi * rho / seq.epsilon) ** 2 * rho
    h = max((3e-16 / curvature) ** (1.0 / 3.0), 1e-12)
    for j in range(seq.cpmap.n):
        shift = np.zeros(seq.cpmap.n)
        shift[j] = h
        fd = (seq.value(x + shift) - seq.value(x - shift)) / (2.0 * h)
        err = np.max(np.abs(fd - grad[:, j]) / np.maximum(1.0, np.abs(grad[:, j])))
        if err > tol:
            raise InvalidInputError(
                f"recovery gradient disagrees with finite differences "
                f"(relative error {err:.3e} > {tol:g})"
            )


# ---------------------------------------------------------------------------
# Direct 1-D slice experiment
# ---------------------------------------------------------------------------

def direct_1d_experiment(cpmap: CutProjectMap, a: QuasiperiodicField,
                         domain_length: float, epsilons,
                         tol: float = 1e-10, points_per_panel: int = 8,
                         k_max: int = 8,
                         budget: int = QUADRATURE_BUDGET) -> ConvergenceReport:
    """Compare the exact 1-D effective coefficient of the sliced medium,
    (mean of 1/a(Rx/eps) over (0, L))^{-1}, against the cell-problem value.

    The quadrature doubles its panel count until the value stabilizes to
    1e-10 relative.  Refuses rational (resonant) maps at validation.
    """
    if cpmap.n != 1:
        raise InvalidInputError("the direct experiment is one-dimensional")
    if domain_length <= 0:
        raise InvalidInputError("domain_length must be positive")
    report = cpmap.validate(k_max=k_max)
    if report.violations:
        raise MapValidationError(
            f"map fails the diophantine criterion at k = {report.violations[0]}"
        )
    values = a.sigma.values
    amin = float(values.min())
    if amin <= 0.0:
        raise InvalidInputError(f"a(y) must be uniformly positive (min {amin:.3e})")

    density = isotropic_quadratic(a.sigma, 1)
    cell_value = effective_tensor(density, preset("curl1"), cpmap, tol=tol).tensor[0, 0]

    eps_list = tuple(float(e) for e in epsilons)
    domain = Domain((0.0,), (float(domain_length),))
    out = []
    complete = True
    for eps in eps_list:
        val = _adaptive_mean_inverse(a, cpmap, eps, domain, points_per_panel, budget)
        if val is None:
            complete = False
            break
        out.append((eps, 1.0 / val))
    errors = tuple(abs(v - cell_value) for _, v in out)
    rate = _fit_rate([e for e, _ in out], errors)
    return ConvergenceReport(values=tuple(out), limit=float(cell_value),
                             errors=errors, fitted_rate=rate, complete=complete)


def _adaptive_mean_inverse(a: QuasiperiodicField, cpmap: CutProjectMap,
                           eps: float, domain: Domain, points_per_panel: int,
                           budget: int) -> Optional[float]:
    length = domain.hi[0] - domain.lo[0]

    def mean_value(scale: float) -> Optional[float]:
        grid = _composite_gauss(domain, eps / scale, points_per_panel, budget)
        if grid is None:
            return None
        pts, w = grid
        samples = sample_slice(a, pts / eps)
        vals = 1.0 / samples.reshape(-1)
        return float(np.dot(w, vals) / length)

    prev = mean_value(1.0)
    if prev is None:
        return None
    for scale in (2.0, 4.0, 8.0):
        cur = mean_value(scale)
        if cur is None:
            return prev
        if abs(cur - prev) <= 1e-10 * max(abs(cur), 1e-30):
            return cur
        prev = cur
    return prev
