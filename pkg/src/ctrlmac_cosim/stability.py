"""Lyapunov certificates for delayed decentralised periodic event-triggered control.

The augmented state is ``z = (xi, xi_hat, s)``: plant state, the estimate
the controller currently applies, and the buffer of the most recent
transmitted samples (in flight during ``[0, tau_d]``). Between jumps
``z' = Abar z``. At each sampling instant the transmit set ``J`` loads
``s``; ``tau_d`` later the controller copies ``s_J`` into ``xi_hat``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sl

from .plant import discretize

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
SYM_TOL = 1e-10


@dataclass
class AugmentedSystem:
    abar: np.ndarray
    n_s: int
    sigma: float
    rho: float
    h: float
    tau_d: float
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    K: np.ndarray | None = None

    def with_tau(self, tau_d: float) -> "AugmentedSystem":
        return AugmentedSystem(self.abar, self.n_s, self.sigma, self.rho, self.h, tau_d,
                               self.A, self.B, self.K)


def build_augmented(
    A, B, K, sigma: float = 0.1, rho: float = 0.001, h: float = 1.0, tau_d: float = 0.0
) -> AugmentedSystem:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n = A.shape[0]
    if n == 0:
        raise ValueError("empty system")
    if A.shape != (n, n) or B.shape[0] != n or K.shape != (B.shape[1], n):
        raise ValueError(f"dimension mismatch: A{A.shape} B{B.shape} K{K.shape}")
    if not 0 <= tau_d < h:
        raise ValueError("need 0 <= tau_d < h")
    abar = np.zeros((3 * n, 3 * n))
    abar[:n, :n] = A
    abar[:n, n : 2 * n] = B @ K
    return AugmentedSystem(abar, n, sigma, rho, h, tau_d, A, B, K)


def gamma(j: int, n_s: int) -> np.ndarray:
    g = np.zeros((n_s, n_s))
    g[j - 1, j - 1] = 1.0
    return g


def gamma_set(J, n_s: int) -> np.ndarray:
    g = np.zeros((n_s, n_s))
    for j in J:
        g[j - 1, j - 1] = 1.0
    return g


def _blocks(rows) -> np.ndarray:
    return np.block(rows)


def build_quadratic_forms(sigma: float, j: int, n_s: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not 1 <= j <= n_s:
        raise ValueError(f"j={j} outside 1..{n_s}")
    G = gamma(j, n_s)
    Z = np.zeros((n_s, n_s))
    c = 1.0 - sigma**2
    q_acute = _blocks([[c * G, Z, -G], [Z, Z, Z], [-G, Z, G]])
    q_tilde = _blocks([[c * G, -G, Z], [-G, G, Z], [Z, Z, Z]])
    q_hat = _blocks([[Z, Z, Z], [Z, G, -G], [Z, -G, c * G]])
    return q_acute, q_tilde, q_hat


def build_jump_maps(J, n_s: int) -> tuple[np.ndarray, np.ndarray]:
    GJ = gamma_set(J, n_s)
    I = np.eye(n_s)
    Z = np.zeros((n_s, n_s))
    j_acute = _blocks([[I, Z, Z], [Z, I, Z], [GJ, Z, I - GJ]])
    j_tilde = _blocks([[I, Z, Z], [Z, I - GJ, GJ], [Z, Z, I]])
    return j_acute, j_tilde


def propagate_p(p_end: np.ndarray, abar: np.ndarray, rho: float, tau: float) -> np.ndarray:
    """Solution of ``dP/dtau = -Abar^T P - P Abar - 2 rho P`` taken ``tau`` back from ``p_end``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    E = sl.expm(abar * tau)
    P = np.exp(2.0 * rho * tau) * (E.T @ p_end @ E)
    return 0.5 * (P + P.T)


def subsets(n_s: int):
    for r in range(n_s + 1):
        for J in itertools.combinations(range(1, n_s + 1), r):
            yield frozenset(J)


def subset_index(J, n_s: int) -> int:
    return sum(1 << (j - 1) for j in J)


FAMILIES = ("acute_J", "acute_Jc", "tilde_J", "tilde_Jc", "hat_J", "hat_Jc")


@dataclass
class StabilityCertificate:
    """``multipliers[family]`` has shape ``(2**n_s, n_s)``: one row per
    transmit set (indexed by :func:`subset_index`), one column per sensor.
    ``*_J`` entries act on sensors inside the set, ``*_Jc`` on the others."""

    p0h: np.ndarray
    p1d: np.ndarray
    multipliers: dict[str, np.ndarray] = field(default_factory=dict)

    def check_well_formed(self) -> None:
        for name, P in (("p0h", self.p0h), ("p1d", self.p1d)):
            if np.max(np.abs(P - P.T)) > SYM_TOL * max(1.0, np.max(np.abs(P))):
                raise ValueError(f"{name} is not symmetric")
        for fam in FAMILIES:
            if fam not in self.multipliers:
                raise ValueError(f"missing multiplier family {fam}")
            if np.any(self.multipliers[fam] < 0):
                raise ValueError(f"negative multiplier in family {fam}")


def zero_multipliers(n_s: int) -> dict[str, np.ndarray]:
    return {f: np.zeros((2**n_s, n_s)) for f in FAMILIES}


def s_procedure_terms(cert: StabilityCertificate, sys: AugmentedSystem, J) -> tuple[np.ndarray, np.ndarray]:
    n = sys.n_s
    idx = subset_index(J, n)
    mu = cert.multipliers
    G1 = np.zeros((3 * n, 3 * n))
    G2 = np.zeros((3 * n, 3 * n))
    for j in range(1, n + 1):
        qa, qt, qh = build_quadratic_forms(sys.sigma, j, n)
        if j in J:
            G1 += -mu["acute_J"][idx, j - 1] * qa - mu["tilde_J"][idx, j - 1] * qt
            G2 += -mu["hat_J"][idx, j - 1] * qh
        else:
            G1 += mu["acute_Jc"][idx, j - 1] * qa + mu["tilde_Jc"][idx, j - 1] * qt
            G2 += mu["hat_Jc"][idx, j - 1] * qh
    return G1, G2


def lmi_blocks(cert: StabilityCertificate, sys: AugmentedSystem, J) -> tuple[np.ndarray, np.ndarray]:
    """Both block matrices that must be positive definite for transmit set ``J``."""
    n = sys.n_s
    ja, jt = build_jump_maps(J, n)
    G1, G2 = s_procedure_terms(cert, sys, J)
    td, rest = sys.tau_d, sys.h - sys.tau_d
    Ed = sl.expm(sys.abar * td)
    Er = sl.expm(sys.abar * rest)
    off1 = ja.T @ Ed.T @ cert.p1d
    off2 = jt.T @ Er.T @ cert.p0h
    M1 = np.block([[np.exp(-2 * sys.rho * td) * cert.p0h + G1, off1], [off1.T, cert.p1d]])
    M2 = np.block([[np.exp(-2 * sys.rho * rest) * cert.p1d + G2, off2], [off2.T, cert.p0h]])
    return 0.5 * (M1 + M1.T), 0.5 * (M2 + M2.T)


def min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(M)[0])


class Verdict(NamedTuple):
    feasible: bool
    margin: float
    witness: tuple | None  # (J, which) of the worst block when infeasible


def verify_certificate(cert: StabilityCertificate, sys: AugmentedSystem, tol: float = FEAS_TOL) -> Verdict:
    cert.check_well_formed()
    margin = min(min_eig(cert.p0h), min_eig(cert.p1d))
    worst = ("P", None)
    for J in subsets(sys.n_s):
        M1, M2 = lmi_blocks(cert, sys, J)
        for which, M in ((1, M1), (2, M2)):
            e = min_eig(M)
            if e < margin:
                margin, worst = e, (tuple(sorted(J)), which)
    ok = margin > tol
    return Verdict(ok, margin, None if ok else worst)


class SearchResult(NamedTuple):
    certificate: StabilityCertificate | None
    verdict: Verdict | None
    candidate: StabilityCertificate | None


def search_certificate(sys: AugmentedSystem, p_cap: float = 1e4, solver: str | None = None) -> SearchResult:
    """Look for a certificate with an SDP solver, then check it exactly.

    A returned ``certificate`` is always independently verified;
    ``None`` means inconclusive, not a proof of instability.
    """
    import cvxpy as cp

    n = sys.n_s
    if n == 0:
        raise ValueError("empty system")
    N = 3 * n
    P0 = cp.Variable((N, N), symmetric=True)
    P1 = cp.Variable((N, N), symmetric=True)
    t = cp.Variable()
    mus = {f: cp.Variable((2**n, n), nonneg=True) for f in FAMILIES}
    td, rest = sys.tau_d, sys.h - sys.tau_d
    Ed = sl.expm(sys.abar * td)
    Er = sl.expm(sys.abar * rest)
    I = np.eye(N)
    cons = [P0 >> I, P1 >> I, P0 << p_cap * I, P1 << p_cap * I]
    forms = [build_quadratic_forms(sys.sigma, j, n) for j in range(1, n + 1)]
    for J in subsets(n):
        idx = subset_index(J, n)
        ja, jt = build_jump_maps(J, n)
        G1 = 0
        G2 = 0
        for j in range(1, n + 1):
            qa, qt, qh = forms[j - 1]
            if j in J:
                G1 = G1 - mus["acute_J"][idx, j - 1] * qa - mus["tilde_J"][idx, j - 1] * qt
                G2 = G2 - mus["hat_J"][idx, j - 1] * qh
            else:
                G1 = G1 + mus["acute_Jc"][idx, j - 1] * qa + mus["tilde_Jc"][idx, j - 1] * qt
                G2 = G2 + mus["hat_Jc"][idx, j - 1] * qh
        off1 = ja.T @ Ed.T @ P1
        off2 = jt.T @ Er.T @ P0
        M1 = cp.bmat([[np.exp(-2 * sys.rho * td) * P0 + G1, off1], [off1.T, P1]])
        M2 = cp.bmat([[np.exp(-2 * sys.rho * rest) * P1 + G2, off2], [off2.T, P0]])
        cons += [0.5 * (M1 + M1.T) >> t * np.eye(2 * N), 0.5 * (M2 + M2.T) >> t * np.eye(2 * N)]
    for f in FAMILIES:
        cons.append(mus[f] <= p_cap)
    prob = cp.Problem(cp.Maximize(t), cons + [t <= 1.0])
    try:
        prob.solve(solver=solver or ("CLARABEL" if "CLARABEL" in cp.installed_solvers() else "SCS"))
    except cp.error.SolverError as exc:
        log.info("solver failed: %s", exc)
        return SearchResult(None, None, None)
    if P0.value is None or P1.value is None:
        return SearchResult(None, None, None)
    cand = StabilityCertificate(
        0.5 * (P0.value + P0.value.T),
        0.5 * (P1.value + P1.value.T),
        {f: np.maximum(mus[f].value, 0.0) for f in FAMILIES},
    )
    verdict = verify_certificate(cand, sys)
    return SearchResult(cand if verdict.feasible else None, verdict, cand)


class DelayFrontier(NamedTuple):
    max_tau_d: float | None
    frontier: list[tuple[float, bool]]
    non_monotone: list[float]


def max_allowable_delay(sys: AugmentedSystem, tau_grid: Sequence[float]) -> DelayFrontier:
    grid = sorted({0.0, *(float(x) for x in tau_grid)})
    if any(not 0 <= x < sys.h for x in grid):
        raise ValueError("tau grid must lie in [0, h)")
    frontier = []
    for tau in grid:
        res = search_certificate(sys.with_tau(tau))
        frontier.append((tau, res.certificate is not None))
    best = max((tau for tau, ok in frontier if ok), default=None)
    seen_fail = [tau for tau, ok in frontier if not ok and best is not None and tau < best]
    if seen_fail:
        log.warning("non-monotone frontier (search artifact) at tau_d=%s", seen_fail)
    return DelayFrontier(best, frontier, seen_fail)


class CBounds(NamedTuple):
    c1: float
    c2: float

    @property
    def ges_constant(self) -> float:
        return float(np.sqrt(self.c2 / self.c1))


def compute_c_bounds(cert: StabilityCertificate, sys: AugmentedSystem, n_samples: int = 50) -> CBounds:
    lo, hi = np.inf, -np.inf
    for tau in np.linspace(0.0, sys.tau_d, n_samples):
        e = np.linalg.eigvalsh(propagate_p(cert.p1d, sys.abar, sys.rho, sys.tau_d - tau))
        lo, hi = min(lo, e[0]), max(hi, e[-1])
    for tau in np.linspace(0.0, sys.h, n_samples):
        e = np.linalg.eigvalsh(propagate_p(cert.p0h, sys.abar, sys.rho, sys.h - tau))
        lo, hi = min(lo, e[0]), max(hi, e[-1])
    return CBounds(float(lo), float(hi))


class GesCheck(NamedTuple):
    holds: bool
    c: float
    violated_at: float | None


def empirical_ges_check(
    times: np.ndarray, norms: np.ndarray, rho: float, c_bound: float | None = None,
    divergence: float = 1e6,
) -> GesCheck:
    """Smallest ``c`` with ``|xi(t)| <= c e^{-rho t} |xi(0)|`` on the trajectory.

    With ``c_bound`` the envelope is checked against that constant;
    otherwise growth past ``divergence`` counts as a violation.
    """
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if norms[0] == 0:
        return GesCheck(bool(np.all(norms == 0)), 0.0, None)
    ratio = norms * np.exp(rho * times) / norms[0]
    limit = c_bound if c_bound is not None else divergence
    bad = np.nonzero(~np.isfinite(ratio) | (ratio > limit * (1 + 1e-9)))[0]
    if bad.size:
        return GesCheck(False, float("inf"), float(times[bad[0]]))
    return GesCheck(True, float(np.max(ratio)), None)


# --- independent oracles ------------------------------------------------------

def sampled_data_spectral_radius(A, B, K, h: float, tau_d: float) -> float:
    """Spectral radius of the periodic (every sample transmitted) loop with a
    fixed sensing-to-actuation delay ``tau_d``."""
    A = np.atleast_2d(A)
    BK = np.atleast_2d(B) @ np.atleast_2d(K)
    n = A.shape[0]
    Ph, _ = discretize(A, h)
    Pr, Gr = discretize(A, h - tau_d)
    _, Gd = discretize(A, tau_d) if tau_d > 0 else (np.eye(n), np.zeros((n, n)))
    M = np.block([[Ph + Gr @ BK, Pr @ Gd @ BK], [np.eye(n), np.zeros((n, n))]])
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def simulate_closed_loop(
    A, B, K, h: float, tau_d: float, sigma: float, xi0, t_end: float, substeps: int = 4
) -> tuple[np.ndarray, np.ndarray]:
    """Event-triggered loop with delayed updates, sampled on a dense grid.

    Returns ``(times, |xi|)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    BK = np.atleast_2d(B) @ np.atleast_2d(K)
    xi = np.asarray(xi0, dtype=float).copy()
    held = xi.copy()  # value the controller applies
    sent = xi.copy()  # last value each sensor transmitted
    steps = {}

    def flow(x, u_state, dt):
        if dt <= 0:
            return x
        key = round(dt, 15)
        if key not in steps:
            steps[key] = discretize(A, dt)
        Ad, Gd = steps[key]
        return Ad @ x + Gd @ (BK @ u_state)

    times, norms = [0.0], [float(np.linalg.norm(xi))]
    t = 0.0
    while t < t_end - 1e-12:
        fire = np.abs(sent - xi) - sigma * np.abs(xi) > 0
        sent = np.where(fire, xi, sent)
        segments = [(tau_d, held)] if tau_d > 0 else []
        new_held = np.where(fire, sent, held)
        segments.append((h - tau_d, new_held))
        for dur, u in segments:
            for _ in range(substeps):
                xi = flow(xi, u, dur / substeps)
                t += dur / substeps
                times.append(t)
                norms.append(float(np.linalg.norm(xi)))
        held = new_held
    return np.array(times), np.array(norms)
