"""Floquet spectrum of the reduced system and independent trajectory checks.

After reduction the equation decouples: each mode evolves as

    chi_i(t) = chi_i(0) exp(-i (lambda_inf_i t + F_i(t))),
    F_i(t)   = sum_{k != 0} muhat_{i,k} e^{i k.phi0} (e^{i (omega.k) t} - 1) / (i omega.k),

so solutions of the original system are x(t) = U(phi0 + omega t) chi(t) with
U the composed conjugation.  The Floquet exponents are lambda_inf_j + omega.k.

Everything here that claims to verify the engine is computed without it:
direct propagation uses only the original coefficients and an exponential
midpoint rule, and the monodromy matrix (n = 1) is diagonalized on its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .engine import ReducedSystem, matrix_exp_antihermitian
from .errors import DivisorTooSmall, KamError
from .torus import DiagonalPart, OperatorSeries, k_box

__all__ = [
    "FloquetSpectrum",
    "floquet_spectrum",
    "reconstruct_solution",
    "propagate_direct",
    "monodromy_quasienergies",
]


@dataclass(frozen=True)
class FloquetSpectrum:
    """Sorted exponents nu = lambda_inf_j + omega.k with degeneracy tags."""

    nu: np.ndarray            # sorted values
    multiplicity: np.ndarray  # size of the 1e-12-cluster each value belongs to
    mode: np.ndarray          # j index (1-based) per value
    k: np.ndarray             # (m, n) integer mode per value

    def __len__(self) -> int:
        return len(self.nu)


def floquet_spectrum(reduced: ReducedSystem, Kmax: int, cluster_tol: float = 1e-12) -> FloquetSpectrum:
    """All exponents lambda_inf_j + omega.k over j <= N, |k|_inf <= Kmax."""
    if Kmax < 0:
        raise KamError("Kmax must be nonnegative")
    lam = np.asarray(reduced.lambda_inf, dtype=float)
    omega = np.asarray(reduced.omega, dtype=float)
    ks = k_box(len(omega), Kmax)                       # (m, n)
    nu = lam[:, None] + ks @ omega                     # (N, m)
    mode = np.repeat(np.arange(1, len(lam) + 1), len(ks))
    kk = np.tile(ks, (len(lam), 1))
    flat = nu.reshape(-1)
    order = np.argsort(flat, kind="stable")
    flat = flat[order]
    mode = mode[order]
    kk = kk[order]
    # cluster values whose consecutive gaps stay below the tolerance
    mult = np.ones(len(flat), dtype=int)
    if len(flat) > 1:
        new_cluster = np.diff(flat) > cluster_tol
        cluster_id = np.concatenate([[0], np.cumsum(new_cluster)])
        _, counts = np.unique(cluster_id, return_counts=True)
        mult = counts[cluster_id]
    return FloquetSpectrum(nu=flat, multiplicity=mult, mode=mode, k=kk)


def _phase_integral(reduced: ReducedSystem, phi0: np.ndarray, ts: np.ndarray,
                    floor: float = 1e-12) -> np.ndarray:
    """F_i(t) = integral of mu_i along the flow from phi0, shape (T, N)."""
    N = reduced.N
    out = np.zeros((len(ts), N), dtype=complex)
    if reduced.mu_inf is None or reduced.K_mu == 0:
        return out
    n, K = reduced.n, reduced.K_mu
    ks = k_box(n, K)
    kw = ks @ reduced.omega                              # (m,)
    coeffs = reduced.mu_inf.reshape(N, -1)               # (N, m)
    live = np.max(np.abs(coeffs), axis=0) > 0
    nonzero = np.any(ks != 0, axis=1)
    bad = live & nonzero & (np.abs(kw) < floor)
    if np.any(bad):
        kbad = ks[np.argmax(bad)]
        raise DivisorTooSmall(
            f"omega.k = {kw[np.argmax(bad)]:.3e} below floor for mode k = {tuple(kbad)}",
            i=0, j=0, k=tuple(int(x) for x in kbad), value=float(kw[np.argmax(bad)]),
        )
    use = live & nonzero
    if not np.any(use):
        return out
    kw = kw[use]
    phase0 = np.exp(1j * (ks[use] @ phi0))
    ramp = (np.exp(1j * np.outer(ts, kw)) - 1.0) / (1j * kw)   # (T, m)
    out += ramp @ (coeffs[:, use] * phase0).T
    return out


def _compose_at(generators, phis: np.ndarray, N: int) -> np.ndarray:
    """U(phi) for a batch of angles, shape (T, N, N)."""
    T = phis.shape[0]
    U = np.broadcast_to(np.eye(N, dtype=complex), (T, N, N)).copy()
    for B in generators:
        ks = k_box(B.n, B.K)
        phases = np.exp(1j * (phis @ ks.T))              # (T, m)
        Bg = phases @ B.coeffs.reshape(-1, N * N)
        E, _ = matrix_exp_antihermitian(Bg.reshape(T, N, N))
        U = U @ E
    return U


def reconstruct_solution(reduced: ReducedSystem, psi0, phi0, ts) -> np.ndarray:
    """Almost-periodic solution psi(t) = U(phi0 + omega t) chi(t), shape (T, N).

    chi(0) = U(phi0)* psi0 and each chi_i evolves by the explicit phase
    lambda_inf_i t + F_i(t); the Euclidean norm is conserved exactly up to
    roundoff because every factor is unitary.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    psi0 = np.asarray(psi0, dtype=complex)
    phi0 = np.atleast_1d(np.asarray(phi0, dtype=float))
    N = reduced.N
    if psi0.shape != (N,):
        raise KamError(f"psi0 must have shape ({N},)")
    phis = phi0[None, :] + np.outer(ts, reduced.omega)
    U0 = _compose_at(reduced.generators, phi0[None, :], N)[0]
    chi0 = np.conj(U0.T) @ psi0
    F = _phase_integral(reduced, phi0, ts)               # (T, N)
    phase = np.exp(-1j * (np.outer(ts, reduced.lambda_inf) + F))
    chi = phase * chi0[None, :]
    U = _compose_at(reduced.generators, phis, N)
    return np.einsum("tij,tj->ti", U, chi)


def _hamiltonian_at(base: DiagonalPart, P: OperatorSeries | None, phis: np.ndarray) -> np.ndarray:
    """H(phi) = diag(lambda + mu(phi)) + P(phi) for a batch of angles."""
    T = phis.shape[0]
    N = base.N
    H = np.zeros((T, N, N), dtype=complex)
    idx = np.arange(N)
    H[:, idx, idx] = base.lam
    if base.mu is not None and base.K > 0:
        ks = k_box(base.n, base.K)
        phases = np.exp(1j * (phis @ ks.T))
        H[:, idx, idx] += phases @ base.mu.reshape(N, -1).T
    if P is not None:
        ks = k_box(P.n, P.K)
        phases = np.exp(1j * (phis @ ks.T))
        H += (phases @ P.coeffs.reshape(-1, N * N)).reshape(T, N, N)
    return H


def propagate_direct(
    base: DiagonalPart,
    P: OperatorSeries | None,
    omega,
    psi0,
    phi0,
    ts,
    dt: float | None = None,
    dt_cap: float = 0.1,
    chunk: int = 8192,
) -> np.ndarray:
    """Integrate i psi' = H(phi0 + omega t) psi with the exponential midpoint rule.

    The step is exp(-i dt H(t + dt/2)); H is hermitian so every step is
    unitary and the norm cannot drift.  dt must satisfy dt * max|lambda| <
    dt_cap (raises otherwise); each requested output time is landed on
    exactly by subdividing the interval.  Returns (len(ts), N).
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    psi0 = np.asarray(psi0, dtype=complex)
    phi0 = np.atleast_1d(np.asarray(phi0, dtype=float))
    if np.any(np.diff(ts) <= 0) or ts[0] < 0:
        raise KamError("ts must be strictly increasing and nonnegative")
    lam_max = float(np.max(np.abs(base.lam)))
    if dt is None:
        dt = 0.5 * dt_cap / lam_max
    if dt * lam_max >= dt_cap:
        raise KamError(
            f"dt = {dt:g} too large: dt * max|lambda| = {dt * lam_max:.3g} >= {dt_cap}"
        )
    out = np.empty((len(ts), len(psi0)), dtype=complex)
    psi = psi0.copy()
    t = 0.0
    for m, t_target in enumerate(ts):
        span = t_target - t
        if span > 0:
            steps = int(np.ceil(span / dt - 1e-12))
            h = span / steps
            done = 0
            while done < steps:
                take = min(chunk, steps - done)
                mids = t + (done + np.arange(take) + 0.5) * h
                phis = phi0[None, :] + mids[:, None] * omega[None, :]
                H = _hamiltonian_at(base, P, phis)
                w, V = np.linalg.eigh(H)
                ph = np.exp(-1j * h * w)
                for j in range(take):
                    psi = V[j] @ (ph[j] * (np.conj(V[j].T) @ psi))
                done += take
            t = t_target
        out[m] = psi
    return out


def monodromy_quasienergies(
    base: DiagonalPart,
    P: OperatorSeries | None,
    omega: float,
    dt: float | None = None,
    reduced: ReducedSystem | None = None,
    unitarity_tol: float = 1e-8,
):
    """Quasi-energies from the period map of a periodically forced system (n = 1).

    Propagates the full N x N fundamental solution over one period
    T = 2 pi / omega, checks unitarity of the monodromy, and returns its
    quasi-energies nu_j = -arg(eig_j) / T in [0, 2 pi / T).  When a reduced
    system is supplied, eigenvalues are matched to the predicted
    exp(-i lambda_inf_j T) branches by eigenvector overlap with U(0) e_j and
    returned in mode order; otherwise they come out sorted.
    """
    w = float(np.atleast_1d(np.asarray(omega, dtype=float))[0])
    if np.atleast_1d(np.asarray(omega)).size != 1:
        raise KamError("monodromy map requires a single frequency (n = 1)")
    N = base.N
    T = 2.0 * np.pi / w
    cols = propagate_columns(base, P, np.array([w]), T, dt)
    M = cols
    defect = float(np.max(np.abs(np.conj(M.T) @ M - np.eye(N))))
    if defect > unitarity_tol:
        raise KamError(f"monodromy unitarity defect {defect:.3e} exceeds {unitarity_tol:g}")
    eigvals, eigvecs = np.linalg.eig(M)
    eigvals /= np.abs(eigvals)
    nu = np.mod(-np.angle(eigvals), 2.0 * np.pi) / T        # in [0, 2 pi / T)
    info = {"unitarity_defect": defect, "period": T}
    if reduced is None:
        order = np.argsort(nu)
        return nu[order], M, info
    U0 = _compose_at(reduced.generators, np.zeros((1, 1)), N)[0]
    overlap = np.abs(np.conj(U0.T) @ eigvecs) ** 2           # (mode, eig)
    rows, cols_idx = linear_sum_assignment(-overlap)
    perm = np.empty(N, dtype=int)
    perm[rows] = cols_idx
    info["min_overlap"] = float(np.min(overlap[rows, cols_idx]))
    return nu[perm], M, info


def propagate_columns(base, P, omega, T: float, dt: float | None = None) -> np.ndarray:
    """Fundamental solution Phi(T) with Phi(0) = I, by the same midpoint rule."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    lam_max = float(np.max(np.abs(base.lam)))
    if dt is None:
        dt = 0.05 / lam_max
    if dt * lam_max >= 0.1:
        raise KamError(f"dt * max|lambda| = {dt * lam_max:.3g} >= 0.1")
    steps = int(np.ceil(T / dt - 1e-12))
    h = T / steps
    N = base.N
    Phi = np.eye(N, dtype=complex)
    chunk = 8192
    done = 0
    while done < steps:
        take = min(chunk, steps - done)
        mids = (done + np.arange(take) + 0.5) * h
        phis = mids[:, None] * omega[None, :]
        H = _hamiltonian_at(base, P, phis)
        w, V = np.linalg.eigh(H)
        ph = np.exp(-1j * h * w)
        for j in range(take):
            Phi = (V[j] * ph[j][None, :]) @ (np.conj(V[j].T) @ Phi)
        done += take
    return Phi
