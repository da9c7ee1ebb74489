"""Constant-coefficient first-order differential constraints.

An operator is a tuple of matrices A^(1..n), each l x d, acting as
sum_i A^(i) d/dx_i.  Everything downstream only ever needs its symbol
S(w) = sum_i A^(i) w_i, the orthogonal projector onto ker S(w), and the
lifted symbol S(R* B^{-T} k) on the torus frequencies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cutproject import CutProjectMap
from .errors import InvalidInputError

DEFAULT_SVD_REL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """Coefficients of a constant-rank candidate operator.

    coeffs has shape (n, l, d): n derivative directions, each with an l x d
    matrix.  `name` is a cosmetic tag used in logs and manifests.
    """

    coeffs: np.ndarray
    name: Optional[str] = None

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.ndim != 3:
            raise InvalidInputError(
                f"coeffs must be a (n, l, d) array, got shape {coeffs.shape}"
            )
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def l(self) -> int:
        return self.coeffs.shape[1]

    @property
    def d(self) -> int:
        return self.coeffs.shape[2]


@dataclass(frozen=True)
class RankReport:
    samples: int
    observed_ranks: dict
    constant_rank: bool
    r: Optional[int]


def symbol(op: OperatorSpec, w) -> np.ndarray:
    """S(w) = sum_i A^(i) w_i.  Accepts a single n-vector or a (..., n) batch
    (batched result has shape (..., l, d))."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != op.n:
        raise InvalidInputError(f"w must have {op.n} entries, got {w.shape[-1]}")
    return np.einsum("...i,ild->...ld", w, op.coeffs)


def check_constant_rank(op: OperatorSpec, samples: int = 64, seed: int = 0,
                        svd_rel_tol: float = DEFAULT_SVD_REL_TOL) -> RankReport:
    """Sample rank S(w) at pseudo-random unit directions plus all coordinate
    axes.  A falsification test, not a proof: a single mismatching sample
    flags the operator as not constant-rank.
    """
    if samples < 1:
        raise InvalidInputError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((samples, op.n))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    dirs = dirs / norms
    dirs = np.concatenate([np.eye(op.n), dirs], axis=0)

    mats = symbol(op, dirs)
    svals = np.linalg.svd(mats, compute_uv=False)
    leading = svals[:, :1]
    ranks = np.sum(svals > svd_rel_tol * np.maximum(leading, 1e-300), axis=1)

    observed: dict[int, int] = {}
    for r in ranks:
        observed[int(r)] = observed.get(int(r), 0) + 1
    constant = len(observed) == 1
    return RankReport(
        samples=int(samples),
        observed_ranks=observed,
        constant_rank=constant,
        r=int(ranks[0]) if constant else None,
    )


def _split_rank(svals: np.ndarray, svd_rel_tol: float) -> int:
    leading = max(float(svals[0]) if svals.size else 0.0, 1e-300)
    return int(np.sum(svals > svd_rel_tol * leading))


def kernel_basis(op: OperatorSpec, w, svd_rel_tol: float = DEFAULT_SVD_REL_TOL) -> np.ndarray:
    """Orthonormal basis of ker S(w) as columns of a (d, d-r) matrix."""
    w = np.asarray(w, dtype=float)
    if np.linalg.norm(w) == 0:
        raise InvalidInputError("kernel queries need w != 0 (the k=0 mode is handled "
                                "separately by the mean constraint)")
    _, s, vh = np.linalg.svd(symbol(op, w), full_matrices=True)
    r = _split_rank(s, svd_rel_tol)
    return vh[r:, :].T


def kernel_projector(op: OperatorSpec, w, svd_rel_tol: float = DEFAULT_SVD_REL_TOL) -> np.ndarray:
    """Orthogonal projector onto ker S(w): symmetric, idempotent, S(w) P = 0.

    The kernel is homogeneous (S(cw) = c S(w)), so the projector is
    scale-invariant in w.
    """
    basis = kernel_basis(op, w, svd_rel_tol)
    return basis @ basis.T


def kernel_projector_batch(op: OperatorSpec, ws: np.ndarray, rank: int,
                           svd_rel_tol: float = DEFAULT_SVD_REL_TOL) -> np.ndarray:
    """Projectors onto ker S(w) for a (K, n) batch of nonzero directions.

    `rank` is the verified constant rank; a sample disagreeing with it raises,
    because a rank drop would silently change the constraint space.
    """
    mats = symbol(op, ws)
    _, s, vh = np.linalg.svd(mats, full_matrices=True)
    if s.shape[1]:
        leading = np.maximum(s[:, :1], 1e-300)
        ranks = np.sum(s > svd_rel_tol * leading, axis=1)
        if not np.all(ranks == rank):
            raise InvalidInputError(
                "symbol rank varies across the supplied directions "
                f"(saw {sorted(set(int(r) for r in ranks))}, expected {rank})"
            )
    null = vh[:, rank:, :]
    return np.einsum("kjd,kje->kde", null, null)


def lifted_symbol(op: OperatorSpec, cpmap: CutProjectMap, k) -> np.ndarray:
    """Symbol of the lifted torus operator at integer frequency k, i.e.
    S(R* B^{-T} k).  Equals symbol(op, R*k) exactly for the unit cube cell."""
    if op.n != cpmap.n:
        raise InvalidInputError(
            f"operator acts on R^{op.n} but the map slices R^{cpmap.n}"
        )
    k = np.asarray(k, dtype=float)
    if k.shape[-1] != cpmap.m:
        raise InvalidInputError(f"k must have {cpmap.m} entries, got {k.shape[-1]}")
    return symbol(op, cpmap.dual_frequency(k))


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _curl_coeffs(n: int) -> np.ndarray:
    if n == 1:
        # every 1-D field is a gradient: the constraint is vacuous
        return np.zeros((1, 1, 1))
    if n == 2:
        # symbol (-w2, w1); kernel = span{w}
        return np.array([[[0.0, 1.0]], [[-1.0, 0.0]]])
    if n == 3:
        # symbol = cross-product matrix [w]_x; kernel = span{w}
        a1 = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        a2 = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        a3 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        return np.stack([a1, a2, a3])
    raise InvalidInputError(f"no curl preset for n={n}")


def _div_coeffs(n: int) -> np.ndarray:
    coeffs = np.zeros((n, 1, n))
    for i in range(n):
        coeffs[i, 0, i] = 1.0
    return coeffs


def _sym_div_coeffs() -> np.ndarray:
    # divergence acting on packed symmetric 2x2 fields (s11, s22, s12);
    # symbol [[w1, 0, w2], [0, w2, w1]] has rank 2 for every w != 0
    a1 = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    a2 = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    return np.stack([a1, a2])


def preset(name: str) -> OperatorSpec:
    """Named operators: curl1/2/3 (gradient constraints), div1/2/3
    (divergence-free), grad-sym (divergence on symmetric 2x2 fields)."""
    table = {
        "curl1": lambda: _curl_coeffs(1),
        "curl2": lambda: _curl_coeffs(2),
        "curl3": lambda: _curl_coeffs(3),
        "div1": lambda: _div_coeffs(1),
        "div2": lambda: _div_coeffs(2),
        "div3": lambda: _div_coeffs(3),
        "grad-sym": _sym_div_coeffs,
    }
    if name not in table:
        raise InvalidInputError(
            f"unknown operator preset {name!r}; known: {sorted(table)}"
        )
    return OperatorSpec(table[name](), name=name)


def from_config(spec) -> OperatorSpec:
    """Build an operator from a JSON-style value: a preset name or a raw
    {"coeffs": [[[...]]], "name": ...} mapping."""
    if isinstance(spec, str):
        return preset(spec)
    if isinstance(spec, dict):
        unknown = set(spec) - {"preset", "coeffs", "name"}
        if unknown:
            raise InvalidInputError(f"unknown operator key {sorted(unknown)[0]!r}")
        if "preset" in spec:
            return preset(spec["preset"])
        if "coeffs" in spec:
            return OperatorSpec(np.asarray(spec["coeffs"], dtype=float),
                                name=spec.get("name"))
    raise InvalidInputError("operator must be a preset name or a coeffs mapping")
