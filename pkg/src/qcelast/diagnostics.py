"""Entropy bookkeeping, relative entropy, weak-strong stability monitors and
empirical Young measures built from simulated trajectories."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import torus
from .energies import StoredEnergy, frob, stress_remainder_GS, taylor_remainder_G, v_squared
from .sim import ElastoState, Trajectory
from .torus import SCALAR, VECTOR, Grid, PeriodicField

CSV_HEADER = (
    "t", "total_entropy", "kinetic", "potential",
    "dissipation_defect", "curl_defect", "relent", "v_distance",
)


def _check_pair(state: ElastoState, ref: ElastoState) -> None:
    if not state.grid.same_space(ref.grid):
        raise ValueError("state and reference live on different grids")


# ---------------------------------------------------------------------------
# Entropy pair


def entropy_pair(state: ElastoState, W: StoredEnergy) -> tuple[PeriodicField, PeriodicField]:
    """eta = |u|^2/2 + W(F) and the flux q = -u^T S(F), so that
    d_t eta + div q = 0 along smooth solutions."""
    u, F = state.u.data, state.F.data
    eta = 0.5 * np.sum(u * u, axis=-1) + W.W(F)
    q = -np.einsum("...i,...ia->...a", u, W.S(F))
    return PeriodicField(state.grid, SCALAR, eta), PeriodicField(state.grid, VECTOR, q)


def entropy_residual(prev: ElastoState, cur: ElastoState, nxt: ElastoState, W: StoredEnergy) -> float:
    """L1 norm of d_t eta + div q at ``cur`` with a centred time difference."""
    dt = nxt.t - prev.t
    if dt <= 0:
        raise ValueError("states must be ordered in time")
    eta_p, _ = entropy_pair(prev, W)
    eta_n, _ = entropy_pair(nxt, W)
    _, q = entropy_pair(cur, W)
    res = (eta_n.data - eta_p.data) / dt + torus.divergence(q).data
    return torus.integrate(np.abs(res))


def total_entropy(state: ElastoState, W: StoredEnergy) -> tuple[float, float]:
    """(kinetic, potential) integrals."""
    kin = torus.integrate(0.5 * np.sum(state.u.data ** 2, axis=-1))
    pot = torus.integrate(W.W(state.F.data))
    return kin, pot


# ---------------------------------------------------------------------------
# Relative entropy and the remainder term


@dataclass(frozen=True)
class RelativeEntropy:
    field: PeriodicField
    total: float
    kinetic: float
    potential: float

    def bound_ratio(self, state: ElastoState, ref: ElastoState, p: float) -> float:
        """max over the grid of |eta_rel| / (|u - ubar|^2 + |V(F - Fbar)|^2)."""
        du = state.u.data - ref.u.data
        dF = state.F.data - ref.F.data
        denom = np.sum(du * du, axis=-1) + v_squared(frob(dF), p)
        m = denom > 0
        if not np.any(m):
            return 0.0
        return float(np.max(np.abs(self.field.data[m]) / denom[m]))


def relative_entropy(state: ElastoState, ref: ElastoState, W: StoredEnergy) -> RelativeEntropy:
    """eta_rel = |u - ubar|^2/2 + W(F) - W(Fbar) - S(Fbar):(F - Fbar)."""
    _check_pair(state, ref)
    du = state.u.data - ref.u.data
    kin = 0.5 * np.sum(du * du, axis=-1)
    pot = taylor_remainder_G(W, ref.F.data, state.F.data - ref.F.data)
    fld = PeriodicField(state.grid, SCALAR, kin + pot)
    return RelativeEntropy(fld, torus.integrate(kin + pot), torus.integrate(kin), torus.integrate(pot))


@dataclass(frozen=True)
class RemainderReport:
    R: float
    bound: float  # K * int |V(F - Fbar)|^2
    K: float
    grad_ubar_max: float
    gs_constant: float

    @property
    def slack(self) -> float:
        return self.bound - abs(self.R)


def remainder_R(
    state: ElastoState, ref: ElastoState, W: StoredEnergy, gs_constant: float | None = None
) -> RemainderReport:
    """R = int grad(ubar) : G_S(Fbar, F - Fbar) together with its |V|^2 bound.

    ``gs_constant`` is an empirical constant C with |G_S| <= C |V|^2 (e.g. the
    ``GS_growth`` entry of a growth-bound report); the realised ratio on the
    grid is folded in so the constant covers the points actually visited.
    """
    _check_pair(state, ref)
    grad_ubar = torus.gradient(ref.u).data
    dF = state.F.data - ref.F.data
    GS = stress_remainder_GS(W, ref.F.data, dF)
    R = torus.integrate(np.sum(grad_ubar * GS, axis=(-2, -1)))
    vv = v_squared(frob(dF), W.p)
    m = vv > 0
    realised = float(np.max(frob(GS[m]) / vv[m])) if np.any(m) else 0.0
    C = max(realised, gs_constant or 0.0)
    gmax = float(np.max(frob(grad_ubar)))
    K = gmax * C
    return RemainderReport(R, K * torus.integrate(vv), K, gmax, C)


# ---------------------------------------------------------------------------
# Entropy report


@dataclass(frozen=True)
class EntropyReport:
    times: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    dissipation: np.ndarray  # cumulative eps int (|grad u|^2 + |Lap u|^2)
    curl_defect: np.ndarray
    relent: np.ndarray | None = None
    v_distance: np.ndarray | None = None

    @property
    def total_entropy(self) -> np.ndarray:
        return self.kinetic + self.potential

    @property
    def dissipation_defect(self) -> np.ndarray:
        """E(0) - E(t) - (eps dissipation up to t); a numerical proxy for the
        defect measure, which must be non-negative."""
        E = self.total_entropy
        return E[0] - E - self.dissipation

    def energy_law_residual(self, rates: Sequence[float]) -> np.ndarray:
        """Centred-difference residual of d/dt int eta + rate at interior times."""
        t, E, r = self.times, self.total_entropy, np.asarray(rates)
        dE = (E[2:] - E[:-2]) / (t[2:] - t[:-2])
        return dE + r[1:-1]

    def rows(self) -> list[list[str]]:
        out = []
        for i, t in enumerate(self.times):
            vals = [t, self.total_entropy[i], self.kinetic[i], self.potential[i],
                    self.dissipation_defect[i], self.curl_defect[i],
                    None if self.relent is None else self.relent[i],
                    None if self.v_distance is None else self.v_distance[i]]
            out.append(["" if v is None else repr(float(v)) for v in vals])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(self.rows())
        return buf.getvalue()


def entropy_report(
    traj: Trajectory, W: StoredEnergy, ref: Trajectory | None = None
) -> EntropyReport:
    states = traj.states
    kin, pot = zip(*(total_entropy(s, W) for s in states))
    relent = vdist = None
    if ref is not None:
        _check_times(traj, ref)
        relent = np.array([relative_entropy(s, r, W).total for s, r in zip(states, ref.states)])
        vdist = np.array([
            torus.integrate(v_squared((s.y - r.y).pointwise_norm(), W.p))
            for s, r in zip(states, ref.states)
        ])
    return EntropyReport(
        traj.times, np.array(kin), np.array(pot), np.array(traj.dissipation),
        np.array([torus.curl_defect(s.F) for s in states]), relent, vdist,
    )


# ---------------------------------------------------------------------------
# Weak-strong stability monitor


def _check_times(a: Trajectory, b: Trajectory) -> None:
    ta, tb = a.times, b.times
    for t in (ta, tb):
        if np.any(np.diff(t) <= 0):
            raise ValueError("output times must be strictly increasing")
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=0, atol=1e-12):
        raise ValueError("trajectories do not share output times")
    if not a.states[0].grid.same_space(b.states[0].grid):
        raise ValueError("trajectories live on different grids")


@dataclass(frozen=True)
class StabilityReport:
    times: np.ndarray
    D: np.ndarray
    Lambda: float  # smallest rate with D(t) <= (D(0) + floor) exp(Lambda t)
    Lambda_fit: float | None  # least-squares slope of log D on D > 100 floor
    residual: np.ndarray  # log D(t) - log(D(0) + floor) - Lambda t  (<= 0)
    D_y: np.ndarray
    y_chain_rhs: np.ndarray
    dty_residual: float  # max L2 of the centred d_t y - u
    floor: float = 1e-12

    @property
    def y_chain_holds(self) -> bool:
        return bool(np.all(self.D_y <= self.y_chain_rhs + 1e-12))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "D", "residual", "D_y", "y_chain_rhs"])
        for row in zip(self.times, self.D, self.residual, self.D_y, self.y_chain_rhs):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def _trapz_cumulative(t: np.ndarray, f: np.ndarray) -> np.ndarray:
    out = np.zeros_like(f)
    out[1:] = np.cumsum(0.5 * np.diff(t) * (f[1:] + f[:-1]))
    return out


def gronwall_monitor(
    traj: Trajectory, ref: Trajectory, W: StoredEnergy, floor: float = 1e-12
) -> StabilityReport:
    """Distance D(t) = int |V(F - Fbar)|^2 + |u - ubar|^2 + |V(y - ybar)|^2 and
    the growth rate it is compatible with, plus the y - ybar estimate chain

        D_y(t) <= D_y(0) + int_0^t int |u - ubar|^2 + |w|^2/2 + |w|^(2p-2)/2,

    w = y - ybar, D_y = int |w|^2/2 + |w|^p/p (Young's inequality with C = 1).
    """
    _check_times(traj, ref)
    p = W.p
    t = traj.times
    D, Dy, integrand = [], [], []
    for s, r in zip(traj.states, ref.states):
        du2 = np.sum((s.u.data - r.u.data) ** 2, axis=-1)
        vF = v_squared(frob(s.F.data - r.F.data), p)
        w = (s.y - r.y).pointwise_norm()
        D.append(torus.integrate(vF + du2 + v_squared(w, p)))
        Dy.append(torus.integrate(0.5 * w**2 + w**p / p))
        integrand.append(torus.integrate(du2 + 0.5 * w**2 + 0.5 * w ** (2 * p - 2)))
    D = np.array(D)
    Dy = np.array(Dy)
    rhs = Dy[0] + _trapz_cumulative(t, np.array(integrand))
    tt = t - t[0]
    base = math.log(D[0] + floor)
    with np.errstate(divide="ignore"):
        logD = np.log(D)
    rates = [(logD[i] - base) / tt[i] for i in range(1, len(t)) if D[i] > 0]
    Lam = max([0.0] + rates)
    residual = logD - base - Lam * tt
    m = D > 100 * floor
    fit = None
    if np.count_nonzero(m) >= 2 and np.ptp(tt[m]) > 0:
        fit = float(np.polyfit(tt[m], logD[m], 1)[0])
    dty = 0.0
    for i in range(1, len(t) - 1):
        a, b, c = traj.states[i - 1], traj.states[i], traj.states[i + 1]
        dty = max(dty, ((c.y - a.y) * (1.0 / (c.t - a.t)) - b.u).l2_norm())
    return StabilityReport(t, D, float(Lam), fit, residual, Dy, rhs, dty, floor)


def energy_defect_difference(a: Trajectory, b: Trajectory, W: StoredEnergy) -> np.ndarray:
    """Difference of the energy drops [E_a(0) - E_a(t)] - [E_b(0) - E_b(t)],
    the observable proxy for the gap between two dissipation measures."""
    _check_times(a, b)
    ea = np.array([sum(total_entropy(s, W)) for s in a.states])
    eb = np.array([sum(total_entropy(s, W)) for s in b.states])
    return (ea[0] - ea) - (eb[0] - eb)


# ---------------------------------------------------------------------------
# Empirical Young measures


@dataclass(frozen=True)
class EmpiricalYoungMeasure:
    """Per macro-cell empirical distribution of matrix samples.

    ``samples`` has shape (cells,)*d + (count, d, d): all grid points of the
    cell pooled across the generating fields.
    """

    grid: Grid
    cells: int
    samples: np.ndarray
    p: float = 2.0

    @property
    def count(self) -> int:
        return self.samples.shape[self.grid.d]

    @property
    def mass(self) -> np.ndarray:
        return np.ones(self.samples.shape[: self.grid.d])

    def action(self, g: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """<nu, g> per cell; g maps (..., d, d) matrices to (...) or (..., *shape)."""
        return np.mean(g(self.samples), axis=self.grid.d)

    def barycenter(self) -> np.ndarray:
        return np.mean(self.samples, axis=self.grid.d)

    def second_moment(self) -> np.ndarray:
        return self.action(lambda X: np.sum(X * X, axis=(-2, -1)))

    def p_moment(self) -> np.ndarray:
        return self.action(lambda X: frob(X) ** self.p)

    def variance(self) -> np.ndarray:
        """<nu, |xi - <nu, id>|^2> per cell."""
        bc = np.expand_dims(self.barycenter(), self.grid.d)
        return np.mean(np.sum((self.samples - bc) ** 2, axis=(-2, -1)), axis=self.grid.d)

    def is_dirac(self, tol: float = 1e-10) -> np.ndarray:
        return self.variance() < tol

    def histogram(self, bins: int = 32) -> tuple[np.ndarray, np.ndarray]:
        """Normalised counts per cell and matrix entry over [-B, B], B = max |entry|."""
        B = float(np.max(np.abs(self.samples))) or 1.0
        edges = np.linspace(-B, B, bins + 1)
        d = self.grid.d
        lead = self.samples.shape[:d]
        flat = self.samples.reshape((-1, self.count, d, d))
        out = np.zeros((flat.shape[0], d, d, bins))
        for c in range(flat.shape[0]):
            for i in range(d):
                for j in range(d):
                    h, _ = np.histogram(flat[c, :, i, j], bins=edges)
                    out[c, i, j] = h / self.count
        return out.reshape(lead + (d, d, bins)), edges

    def histogram_csv(self, bins: int = 32) -> str:
        counts, edges = self.histogram(bins)
        d = self.grid.d
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell", "i", "j", "bin_lo", "bin_hi", "mass"])
        lead = counts.shape[:d]
        for cell in np.ndindex(*lead):
            label = "-".join(str(c) for c in cell)
            for i in range(d):
                for j in range(d):
                    for b in range(len(edges) - 1):
                        w.writerow([label, i, j, repr(float(edges[b])), repr(float(edges[b + 1])),
                                    repr(float(counts[cell + (i, j, b)]))])
        return buf.getvalue()

    def to_json(self, dirac_tol: float = 1e-10) -> dict:
        d = self.grid.d
        bc, m2, mp, var = self.barycenter(), self.second_moment(), self.p_moment(), self.variance()
        cells = []
        for cell in np.ndindex(*bc.shape[:d]):
            cells.append({
                "barycenter": bc[cell].tolist(),
                "cell": list(cell),
                "dirac": bool(var[cell] < dirac_tol),
                "mass": 1.0,
                "p_moment": float(mp[cell]),
                "second_moment": float(m2[cell]),
                "variance": float(var[cell]),
            })
        return {"cells": cells, "count": self.count, "d": d, "n": self.grid.n,
                "m": self.cells, "p": self.p}


def empirical_young_measure(
    F_sequence: Sequence[PeriodicField], cells: int, p: float = 2.0
) -> EmpiricalYoungMeasure:
    """Pool the values of the given matrix fields over an m^d partition of Q."""
    if not F_sequence:
        raise ValueError("need at least one field")
    grid = F_sequence[0].grid
    for F in F_sequence:
        if not F.grid.same_space(grid) or F.rank != torus.MATRIX:
            raise ValueError("all fields must be matrix fields on one grid")
    n, d = grid.n, grid.d
    if cells < 1 or n % cells:
        raise ValueError(f"cells={cells} must divide n={n}")
    b = n // cells
    parts = []
    for F in F_sequence:
        # (cells, b, cells, b, ..., d, d) -> (cells, ..., b, ..., d, d)
        blocks = F.data.reshape(sum(((cells, b) for _ in range(d)), ()) + (d, d))
        order = [2 * k for k in range(d)] + [2 * k + 1 for k in range(d)] + [2 * d, 2 * d + 1]
        blocks = blocks.transpose(order).reshape((cells,) * d + (b**d, d, d))
        parts.append(blocks)
    return EmpiricalYoungMeasure(grid, cells, np.concatenate(parts, axis=d), p)
