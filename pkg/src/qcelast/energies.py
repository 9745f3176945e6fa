"""Stored-energy functions W with analytic stress S = DW and tangent DS = D^2 W.

All hooks act on arrays of shape ``(..., d, d)`` and are pure.  ``DS`` returns
the fourth-order tensor ``DS[..., i, a, j, b] = dS_ia / dxi_jb``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Hook = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StoredEnergy:
    name: str
    p: float
    W: Hook
    S: Hook
    DS: Hook
    c0_candidate: float | None = None
    quasiconvex: bool = True
    strongly_quasiconvex: bool = False
    dims: tuple[int, ...] = (2, 3)
    description: str = ""

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"growth exponent p must be >= 2, got {self.p}")
        if self.c0_candidate is not None and self.c0_candidate <= 0:
            raise ValueError("c0_candidate must be positive when given")

    def check_dim(self, d: int) -> None:
        if d not in self.dims:
            raise ValueError(f"energy {self.name!r} is defined for d in {self.dims}, not {d}")


def frob(xi: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(xi * xi, axis=(-2, -1)))


def _identity4(d: int) -> np.ndarray:
    return np.einsum("ij,ab->iajb", np.eye(d), np.eye(d))


def _broadcast4(t: np.ndarray, lead: tuple[int, ...]) -> np.ndarray:
    return np.broadcast_to(t, lead + t.shape).copy()


# -- quadratic and its negative control ------------------------------------


def _quad_W(xi):
    return 0.5 * np.sum(xi * xi, axis=(-2, -1))


def _quad_S(xi):
    return np.array(xi, dtype=float, copy=True)


def _quad_DS(xi):
    return _broadcast4(_identity4(xi.shape[-1]), xi.shape[:-2])


# -- "St Venant-Kirchhoff-like": 1/4 |xi^T xi - I|^2 + 1/2 |xi|^2 -----------
# Expanding gives W = 1/4 |xi^T xi|^2 + d/4, so S = xi xi^T xi.


def _stvk_W(xi):
    d = xi.shape[-1]
    C = np.einsum("...ki,...kj->...ij", xi, xi)
    E = C - np.eye(d)
    return 0.25 * np.sum(E * E, axis=(-2, -1)) + 0.5 * np.sum(xi * xi, axis=(-2, -1))


def _stvk_S(xi):
    return np.einsum("...ik,...jk,...ja->...ia", xi, xi, xi)


def _stvk_DS(xi):
    d = xi.shape[-1]
    eye = np.eye(d)
    C = np.einsum("...ki,...kj->...ij", xi, xi)  # xi^T xi
    B = np.einsum("...ik,...jk->...ij", xi, xi)  # xi xi^T
    t1 = np.einsum("ij,...ba->...iajb", eye, C)
    t2 = np.einsum("...ib,...ja->...iajb", xi, xi)
    t3 = np.einsum("...ij,ab->...iajb", B, eye)
    return t1 + t2 + t3


# -- planar polyconvex: 1/2 |xi|^2 + det(xi)^2 -----------------------------


def _det2(xi):
    return xi[..., 0, 0] * xi[..., 1, 1] - xi[..., 0, 1] * xi[..., 1, 0]


def _cof2(xi):
    out = np.empty_like(xi, dtype=float)
    out[..., 0, 0] = xi[..., 1, 1]
    out[..., 0, 1] = -xi[..., 1, 0]
    out[..., 1, 0] = -xi[..., 0, 1]
    out[..., 1, 1] = xi[..., 0, 0]
    return out


_DCOF2 = np.zeros((2, 2, 2, 2))
_DCOF2[0, 0, 1, 1] = 1.0
_DCOF2[0, 1, 1, 0] = -1.0
_DCOF2[1, 0, 0, 1] = -1.0
_DCOF2[1, 1, 0, 0] = 1.0


def _poly_W(xi):
    return _quad_W(xi) + _det2(xi) ** 2


def _poly_S(xi):
    return xi + 2.0 * _det2(xi)[..., None, None] * _cof2(xi)


def _poly_DS(xi):
    cof = _cof2(xi)
    det = _det2(xi)[..., None, None, None, None]
    return (
        _quad_DS(xi)
        + 2.0 * np.einsum("...ia,...jb->...iajb", cof, cof)
        + 2.0 * det * _DCOF2
    )


# -- planar determinant (null Lagrangian, rank-one affine) ------------------


def _det_DS(xi):
    return _broadcast4(_DCOF2, xi.shape[:-2])


CATALOG: dict[str, StoredEnergy] = {
    "quadratic": StoredEnergy(
        "quadratic", 2.0, _quad_W, _quad_S, _quad_DS,
        c0_candidate=0.25, quasiconvex=True, strongly_quasiconvex=True,
        description="W = |xi|^2 / 2",
    ),
    "stvk-like": StoredEnergy(
        "stvk-like", 4.0, _stvk_W, _stvk_S, _stvk_DS,
        quasiconvex=True, strongly_quasiconvex=False,
        description="W = |xi^T xi - I|^2 / 4 + |xi|^2 / 2 (convex, degenerate at xi = 0)",
    ),
    "polyconvex2d": StoredEnergy(
        "polyconvex2d", 4.0, _poly_W, _poly_S, _poly_DS,
        quasiconvex=True, strongly_quasiconvex=False, dims=(2,),
        description="W = |xi|^2 / 2 + det(xi)^2",
    ),
    "negquad": StoredEnergy(
        "negquad", 2.0,
        lambda xi: -_quad_W(xi), lambda xi: -_quad_S(xi), lambda xi: -_quad_DS(xi),
        quasiconvex=False, strongly_quasiconvex=False,
        description="W = -|xi|^2 / 2 (not quasiconvex; negative control)",
    ),
    "det": StoredEnergy(
        "det", 2.0, _det2, _cof2, _det_DS,
        quasiconvex=True, strongly_quasiconvex=False, dims=(2,),
        description="W = det(xi) (null Lagrangian)",
    ),
}


def get_energy(name: str, d: int | None = None) -> StoredEnergy:
    try:
        W = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown energy {name!r}; known: {sorted(CATALOG)}") from None
    if d is not None:
        W.check_dim(d)
    return W


# ---------------------------------------------------------------------------
# Auxiliary function V and Taylor remainders


def aux_V(xi, p: float) -> float | np.ndarray:
    """V(xi) = (|xi|^2 + |xi|^p)^(1/2) for one vector or matrix argument."""
    if p < 2:
        raise ValueError("p must be >= 2")
    r = float(np.linalg.norm(np.asarray(xi, dtype=float)))
    return np.sqrt(r * r + r**p)


def v_squared(norm: np.ndarray, p: float) -> np.ndarray:
    """|V|^2 = |xi|^2 + |xi|^p as a function of |xi|."""
    norm = np.asarray(norm, dtype=float)
    return norm * norm + norm**p


def dv_squared(xi: np.ndarray, p: float) -> np.ndarray:
    """Derivative of |V(xi)|^2 with respect to a matrix argument."""
    r = frob(xi)[..., None, None]
    if p == 2:
        return 4.0 * xi
    return 2.0 * xi + p * r ** (p - 2) * xi


def apply_tangent(DS: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """(DS xi)_ia = DS_iajb xi_jb."""
    return np.einsum("...iajb,...jb->...ia", DS, xi)


def taylor_remainder_G(W: StoredEnergy, Fbar, xi):
    """G = W(Fbar + xi) - W(Fbar) - S(Fbar) : xi."""
    Fbar = np.asarray(Fbar, dtype=float)
    xi = np.asarray(xi, dtype=float)
    return W.W(Fbar + xi) - W.W(Fbar) - np.sum(W.S(Fbar) * xi, axis=(-2, -1))


def stress_remainder_GS(W: StoredEnergy, Fbar, xi):
    """G_S = S(Fbar + xi) - S(Fbar) - DS(Fbar) xi."""
    Fbar = np.asarray(Fbar, dtype=float)
    xi = np.asarray(xi, dtype=float)
    return W.S(Fbar + xi) - W.S(Fbar) - apply_tangent(W.DS(Fbar), xi)


# ---------------------------------------------------------------------------
# Sampling-based hypothesis checks


def sample_matrices(rng: np.random.Generator, count: int, d: int, radius: float) -> np.ndarray:
    """Random d x d matrices with Frobenius norm uniform in [0, radius]."""
    g = rng.standard_normal((count, d, d))
    g /= frob(g)[:, None, None]
    return g * (radius * rng.random(count))[:, None, None]


@dataclass
class BoundReport:
    energy: str
    radius: float
    samples: int
    constants: dict[str, float] = field(default_factory=dict)
    h1_failures: int = 0
    diverging: list[str] = field(default_factory=list)
    label: str = ""

    def to_json(self) -> dict:
        return dict(sorted(self.constants.items()))

    @property
    def ok(self) -> bool:
        return self.h1_failures == 0 and not self.diverging


def _max(a: np.ndarray) -> float:
    return float(np.max(a)) if a.size else float("nan")


def _ratios(W: StoredEnergy, d: int, radius: float, samples: int, rng, fbar_radius: float):
    p = W.p
    xi = sample_matrices(rng, samples, d, radius)
    eta = sample_matrices(rng, samples, d, radius)
    fbar = sample_matrices(rng, samples, d, fbar_radius)
    r = frob(xi)
    with np.errstate(all="ignore"):
        w = W.W(xi)
        s = W.S(xi)
        ds = W.DS(xi)
        bad = ~(np.isfinite(w) & np.all(np.isfinite(s), axis=(-2, -1))
                & np.all(np.isfinite(ds), axis=(-4, -3, -2, -1)))
        ok = ~bad
        out = {}
        out["W_growth"] = _max(np.abs(w[ok]) / (1 + r[ok] ** p))
        out["S_growth"] = _max(frob(s[ok]) / (1 + r[ok] ** (p - 1)))
        dsn = np.sqrt(np.sum(ds * ds, axis=(-4, -3, -2, -1)))
        out["D2W_growth"] = _max(dsn[ok] / (1 + r[ok] ** (p - 1)))
        vv = v_squared(r, p)
        nz = ok & (r > 0)
        G = taylor_remainder_G(W, fbar, xi)
        out["G_growth"] = _max(np.abs(G[nz]) / vv[nz])
        GS = stress_remainder_GS(W, fbar, xi)
        out["GS_growth"] = _max(frob(GS[nz]) / vv[nz])
        weta = W.W(eta)
        re = frob(eta)
        denom = (1 + r ** (p - 1) + re ** (p - 1)) * frob(xi - eta)
        m = denom > 0
        out["lipschitz"] = _max(np.abs(w - weta)[m] / denom[m])
        big = ok & (r > 1.0 + 1e-3)
        out["coercivity_min"] = (
            float(np.min(w[big] / (r[big] ** p - 1))) if np.any(big) else float("nan")
        )
    return {k: float(v) for k, v in out.items()}, int(bad.sum())


def verify_growth_bounds(
    W: StoredEnergy,
    radius: float,
    samples: int = 2000,
    d: int = 2,
    seed: int = 0,
    fbar_radius: float = 1.0,
) -> BoundReport:
    """Empirical constants for the growth hypotheses up to ``radius``.

    Also evaluates the ratios at radius/4 and radius/2; a ratio that more
    than doubles on both doublings is flagged as diverging.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if samples < 1000:
        raise ValueError("at least 1000 samples are required")
    W.check_dim(d)
    rng = np.random.default_rng(seed)
    levels = [radius / 4, radius / 2, radius]
    per_level = []
    failures = 0
    for rad in levels:
        ratios, bad = _ratios(W, d, rad, samples, rng, fbar_radius)
        per_level.append(ratios)
        failures += bad
    diverging = []
    for key in per_level[-1]:
        if key == "coercivity_min":
            continue
        a, b, c = (lvl[key] for lvl in per_level)
        if a > 0 and b > 2 * a and c > 2 * b:
            diverging.append(key)
    return BoundReport(
        energy=W.name,
        radius=radius,
        samples=samples,
        constants=per_level[-1],
        h1_failures=failures,
        diverging=diverging,
        label=f"no violation found up to radius {radius:g}" if not diverging and not failures
        else "violation indicated",
    )
