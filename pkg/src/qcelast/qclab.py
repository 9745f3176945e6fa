"""Numerical tests of (strong) quasiconvexity, rank-one convexity and the
Garding-type inequality on the periodic grid.

The quasiconvexity objective is

    J(phi) = mean_Q [ W(xi + grad phi) - W(xi) - c0 |V(grad phi)|^2 ]

over zero-mean periodic vector fields phi.  Each restart descends on the
shell of fixed gradient amplitude ``sqrt(mean |grad phi|^2) = a`` so that
homogeneous objectives (for which J is unbounded below as soon as it is
negative anywhere) produce a finite certificate at every amplitude scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import torus
from .energies import (
    StoredEnergy,
    dv_squared,
    frob,
    taylor_remainder_G,
    v_squared,
)
from .torus import MATRIX, VECTOR, Grid, PeriodicField

log = logging.getLogger(__name__)

NO_VIOLATION = "no-violation-found"
VIOLATED = "violated"
DIVERGED = "diverged"


@dataclass(frozen=True)
class QCTestProblem:
    W: StoredEnergy
    xi: np.ndarray
    c0: float
    grid: Grid
    restarts: int = 6
    max_iters: int = 200
    tol: float = 1e-7
    divergence_threshold: float = 1e7
    seed: int = 0
    amplitudes: tuple[float, float] = (1e-2, 1e1)

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.c0 < 0:
            raise ValueError("c0 must be non-negative")
        xi = np.asarray(self.xi, dtype=float)
        if xi.shape != (self.grid.d, self.grid.d):
            raise ValueError(f"xi must be {self.grid.d}x{self.grid.d}")
        object.__setattr__(self, "xi", xi)
        self.W.check_dim(self.grid.d)


@dataclass
class RestartRecord:
    amplitude: float
    value: float
    iterations: int
    aborted: str | None = None


@dataclass
class QCVerdict:
    min_value: float
    witness: PeriodicField
    status: str
    n: int
    restarts: list[RestartRecord] = field(default_factory=list)

    def to_json(self, problem: QCTestProblem) -> dict:
        return {
            "c0": problem.c0,
            "energy": problem.W.name,
            "min_value": self.min_value,
            "n": self.n,
            "seed": problem.seed,
            "status": self.status,
            "xi": problem.xi.tolist(),
        }


def qc_objective(W: StoredEnergy, xi, c0: float, phi: PeriodicField) -> float:
    """J(phi) evaluated with the midpoint rule on the grid of ``phi``."""
    xi = np.asarray(xi, dtype=float)
    A = torus.gradient(phi).data
    vals = W.W(xi + A) - W.W(xi) - c0 * v_squared(frob(A), W.p)
    return torus.integrate(vals)


def qc_objective_gradient(W: StoredEnergy, xi, c0: float, phi: PeriodicField):
    """J(phi) and its L2 gradient -div[S(xi + grad phi) - c0 D|V|^2(grad phi)]."""
    xi = np.asarray(xi, dtype=float)
    A = torus.gradient(phi)
    a = A.data
    vals = W.W(xi + a) - W.W(xi) - c0 * v_squared(frob(a), W.p)
    flux = W.S(xi + a) - c0 * dv_squared(a, W.p)
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(flux))):
        raise FloatingPointError("non-finite objective")
    g = -torus.divergence(PeriodicField(phi.grid, MATRIX, flux))
    return torus.integrate(vals), g


def _inner(a: PeriodicField, b: PeriodicField) -> float:
    return torus.integrate(np.sum(a.data * b.data, axis=-1))


def _amplitude(phi: PeriodicField) -> float:
    return torus.gradient(phi).l2_norm()


def _descend_on_shell(problem: QCTestProblem, phi: PeriodicField, amp: float):
    W, xi, c0 = problem.W, problem.xi, problem.c0
    J, g = qc_objective_gradient(W, xi, c0, phi)
    step = 1.0
    it = 0
    for it in range(1, problem.max_iters + 1):
        # normal to the shell mean|grad phi|^2 = amp^2 is -Lap phi
        nrm = -torus.laplacian(phi)
        nn = _inner(nrm, nrm)
        gt = g - nrm * (_inner(g, nrm) / nn) if nn > 0 else g
        gg = _inner(gt, gt)
        if gg <= (1e-14 * (1.0 + abs(J))) ** 2 or J < -problem.divergence_threshold:
            break
        step = min(step * 2.0, 1e6)
        accepted = False
        while step > 1e-14:
            trial = phi - gt * step
            ta = _amplitude(trial)
            if ta > 0:
                trial = trial * (amp / ta)
                Jt, gtr = qc_objective_gradient(W, xi, c0, trial)
                if Jt <= J - 1e-4 * step * gg:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        rel = abs(J - Jt) / max(1.0, abs(J))
        phi, J, g = trial, Jt, gtr
        if rel < 1e-13:
            break
    return phi, J, it


def qc_minimize(problem: QCTestProblem) -> QCVerdict:
    """Multi-restart search for a periodic perturbation that violates
    strong quasiconvexity with constant ``c0`` at ``xi``."""
    grid = problem.grid
    if grid.n < 16:
        raise ValueError("quasiconvexity search needs n >= 16")
    amps = np.logspace(
        np.log10(problem.amplitudes[0]), np.log10(problem.amplitudes[1]), problem.restarts
    )
    seeds = np.random.SeedSequence(problem.seed).spawn(problem.restarts)
    best_phi = PeriodicField.zeros(grid, VECTOR)
    best = 0.0  # J(0) = 0 is always attained
    records = []
    for amp, ss in zip(amps, seeds):
        rng = np.random.default_rng(ss)
        phi = torus.band_limited_random(grid, VECTOR, rng, kmax=max(1, grid.n // 8))
        phi = phi * (amp / _amplitude(phi))
        try:
            phi, J, iters = _descend_on_shell(problem, phi, amp)
        except FloatingPointError as exc:
            log.warning("restart at amplitude %.3g aborted: %s", amp, exc)
            records.append(RestartRecord(float(amp), float("nan"), 0, str(exc)))
            continue
        J = qc_objective(problem.W, problem.xi, problem.c0, phi)
        records.append(RestartRecord(float(amp), J, iters))
        log.debug("restart amp=%.3g J=%.6g iters=%d", amp, J, iters)
        if J < best:
            best, best_phi = J, phi
    if best < -problem.divergence_threshold:
        status = DIVERGED
    elif best < -problem.tol:
        status = VIOLATED
    else:
        status = NO_VIOLATION
    return QCVerdict(best, best_phi, status, grid.n, records)


# ---------------------------------------------------------------------------
# Rank-one convexity


@dataclass
class RankOneReport:
    min_second_difference: float
    a: np.ndarray
    b: np.ndarray
    t: float
    refuted: bool


def rank_one_scan(
    W: StoredEnergy,
    xi,
    directions: int = 50,
    t_range: float = 1.0,
    points: int = 21,
    tol: float = 1e-8,
    seed: int = 0,
) -> RankOneReport:
    """Worst centered second difference of t -> W(xi + t a(x)b) over random
    unit directions a, b."""
    if directions < 10:
        raise ValueError("directions must be >= 10")
    xi = np.asarray(xi, dtype=float)
    d = xi.shape[-1]
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((directions, d))
    b = rng.standard_normal((directions, d))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    t = np.linspace(-t_range, t_range, points)
    h = t[1] - t[0]
    ab = np.einsum("ki,kj->kij", a, b)
    mats = xi + t[None, :, None, None] * ab[:, None]
    g = W.W(mats)
    second = (g[:, 2:] - 2 * g[:, 1:-1] + g[:, :-2]) / h**2
    k, j = np.unravel_index(np.argmin(second), second.shape)
    worst = float(second[k, j])
    return RankOneReport(worst, a[k], b[k], float(t[j + 1]), worst < -tol)


# ---------------------------------------------------------------------------
# Garding-type inequality


@dataclass
class GardingSample:
    lhs: float  # int |V(grad z - grad ybar)|^2
    g_int: float  # int G(Fbar, grad z - grad ybar)
    v_int: float  # int |V(z - ybar)|^2


@dataclass
class GardingReport:
    C1: float | None
    C0: float | None
    feasible: bool
    samples: list[GardingSample]
    slack: list[float]
    frontier: list[tuple[float, float]]
    message: str = ""


def garding_grid() -> list[float]:
    return [2.0**k for k in range(-4, 21)]


def garding_integrals(
    W: StoredEnergy, ybar: PeriodicField, z: PeriodicField, F_mean=None
) -> GardingSample:
    """The three integrals of the inequality for one sample z."""
    d = ybar.grid.d
    M = np.zeros((d, d)) if F_mean is None else np.asarray(F_mean, dtype=float)
    Fbar = torus.gradient(ybar).data + M
    w = z - ybar
    inc = torus.gradient(w).data
    lhs = torus.integrate(v_squared(frob(inc), W.p))
    g = torus.integrate(taylor_remainder_G(W, Fbar, inc))
    vz = torus.integrate(v_squared(w.pointwise_norm(), W.p))
    return GardingSample(lhs, g, vz)


def garding_probe(
    W: StoredEnergy,
    ybar: PeriodicField,
    samples: list[PeriodicField],
    F_mean=None,
    tol: float = 1e-10,
) -> GardingReport:
    """Smallest constants on the log-grid {0} x {2^k} such that
    int|V(grad z - Fbar)|^2 <= C1 int G + C0 int|V(z - ybar)|^2 for every sample.

    C0 is minimised first, then C1.  ``tol`` scales the admissible negative
    slack by the size of each sample's left-hand side.
    """
    for z in samples:
        if np.max(np.abs(z.mean())) > 1e-9:
            raise ValueError("garding samples must be zero-mean")
    rows = [garding_integrals(W, ybar, z, F_mean) for z in samples]
    grid_vals = garding_grid()
    c0_vals = [0.0] + grid_vals

    def feasible(c1, c0):
        return all(c1 * r.g_int + c0 * r.v_int - r.lhs >= -tol * max(1.0, r.lhs) for r in rows)

    frontier = []
    for c1 in grid_vals:
        for c0 in c0_vals:
            if feasible(c1, c0):
                frontier.append((c1, c0))
                break
    if not frontier:
        degenerate = [
            i for i, r in enumerate(rows)
            if r.g_int <= 0 and r.lhs > 0 and r.v_int <= r.lhs / grid_vals[-1]
        ]
        msg = "inequality infeasible"
        if degenerate:
            msg += f" (samples {degenerate} have int G <= 0 with vanishing lower-order term)"
        return GardingReport(None, None, False, rows, [], [], msg)
    C1, C0 = min(frontier, key=lambda pair: (pair[1], pair[0]))
    slack = [C1 * r.g_int + C0 * r.v_int - r.lhs for r in rows]
    return GardingReport(C1, C0, True, rows, slack, frontier, "feasible")
