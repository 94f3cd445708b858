"""Steady state of the Lindblad master equation on a truncated Fock space.

Modes are ordered (a, b, c) with c the mechanical mode; the density matrix
is vectorised column-major, so vec(A rho B) = (B^T kron A) vec(rho).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .params import SystemParams

log = logging.getLogger(__name__)

DEFAULT_MEMORY_BUDGET = 2 * 1024**3
TAIL_THRESHOLD = 1e-6


class ResourceError(MemoryError):
    def __init__(self, message, required_bytes):
        super().__init__(message)
        self.required_bytes = required_bytes


class MasterSolveError(RuntimeError):
    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


@dataclass(frozen=True)
class FockConfig:
    n_a_max: int = 4
    n_b_max: int = 5
    n_m_max: int = 6

    def __post_init__(self):
        for name in ("n_a_max", "n_b_max", "n_m_max"):
            v = getattr(self, name)
            if int(v) != v or v < 3:
                raise ValueError(f"{name} must be an integer >= 3, got {v!r}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.n_a_max, self.n_b_max, self.n_m_max)

    @property
    def dim(self) -> int:
        return self.n_a_max * self.n_b_max * self.n_m_max


def destroy(n: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, n, dtype=float)), 1, shape=(n, n), format="csr", dtype=complex)


def mode_operators(fock: FockConfig):
    """Annihilation operators a, b, c lifted to the full space."""
    na, nb, nm = fock.dims
    Ia, Ib, Im = (sp.identity(n, dtype=complex, format="csr") for n in (na, nb, nm))
    a = sp.kron(sp.kron(destroy(na), Ib), Im, format="csr")
    b = sp.kron(sp.kron(Ia, destroy(nb)), Im, format="csr")
    c = sp.kron(sp.kron(Ia, Ib), destroy(nm), format="csr")
    return a, b, c


def hamiltonian(p: SystemParams, fock: FockConfig) -> sp.csr_matrix:
    """Rotating-frame Hamiltonian (hbar = 1, units of kappa)."""
    a, b, c = mode_operators(fock)
    ad, bd, cd = a.getH(), b.getH(), c.getH()
    H = (
        p.delta_a * (ad @ a)
        + p.delta_b * (bd @ b)
        + p.omega_m * (cd @ c)
        + p.J * (ad @ b + bd @ a)
        + p.g0 * (bd @ b) @ (cd + c)
        + 1j * p.eps_c * (ad - a)
    )
    return H.tocsr()


def _spre(A):
    return sp.kron(sp.identity(A.shape[0], format="csr"), A, format="csr")


def _spost(A):
    return sp.kron(A.T, sp.identity(A.shape[0], format="csr"), format="csr")


def dissipator(c, rate: float):
    """rate/2 * (2 c rho c^dag - c^dag c rho - rho c^dag c) as a superoperator."""
    cd = c.getH()
    cdc = (cd @ c).tocsr()
    return rate / 2 * (2 * sp.kron(c.conj(), c, format="csr") - _spre(cdc) - _spost(cdc))


def printed_thermal_term(c, rate: float, n_th: float):
    """The finite-temperature mechanical term exactly as grouped in the model.

    rate * n_th * (c rho c^dag + c^dag rho c - c^dag c rho - rho c c^dag). Equals
    the standard n_th-weighted pair of dissipators whenever [c, c^dag] = 1,
    i.e. away from the truncation edge.
    """
    cd = c.getH()
    return rate * n_th * (
        sp.kron(c.conj(), c, format="csr")
        + sp.kron(c.T, cd, format="csr")
        - _spre((cd @ c).tocsr())
        - _spost((c @ cd).tocsr())
    )


def estimate_liouvillian_bytes(fock: FockConfig) -> int:
    d = fock.dim
    # ~ (2*(number of nonzeros per row of H) + dissipator terms) per superoperator row
    nnz = d * d * 24
    return nnz * (16 + 4) + (d * d + 1) * 4


def build_liouvillian(p: SystemParams, fock: FockConfig, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> sp.csr_matrix:
    """Sparse generator L with d vec(rho)/dt = L vec(rho)."""
    need = estimate_liouvillian_bytes(fock)
    if need > memory_budget:
        raise ResourceError(
            f"Liouvillian for dims {fock.dims} needs ~{need} bytes, budget {memory_budget}", need
        )
    H = hamiltonian(p, fock)
    a, b, c = mode_operators(fock)
    n_th = p.n_th
    L = -1j * (_spre(H) - _spost(H))
    L = L + dissipator(a, p.kappa_a) + dissipator(b, p.kappa_b)
    L = L + dissipator(c, p.gamma_m * (n_th + 1)) + dissipator(c.getH(), p.gamma_m * n_th)
    return L.tocsr()


@dataclass
class SteadyDensityMatrix:
    rho: np.ndarray
    fock: FockConfig
    tail_populations: dict[str, float]
    residual: float = 0.0
    hermiticity_delta: float = 0.0
    min_eigenvalue: float = 0.0
    converged: bool = True
    thermal_form_discrepancy: float = 0.0
    notes: list[str] = field(default_factory=list)


def _photon_numbers(fock: FockConfig):
    na, nb, nm = fock.dims
    ia, ib, _ = np.unravel_index(np.arange(fock.dim), (na, nb, nm))
    return ia, ib


def mean_field_scales(p: SystemParams) -> float:
    """Per-photon amplitude scale from the linear (g0 = 0) mean fields."""
    ca = p.kappa_a / 2 + 1j * p.delta_a
    cb = p.kappa_b / 2 + 1j * p.delta_b
    den = ca * cb + p.J**2
    top = max(abs(p.eps_c * cb / den), abs(p.eps_c * p.J / den))
    return top if top > 0 else 1.0


class SectorPreconditioner:
    """Exact inverse of a photon-number-conserving generator.

    Without the drive, L never raises the photon number N of either side of
    rho, so ordering unknowns by sector (N, N') makes the (trace-constrained)
    system block upper triangular; it is solved by dense back-substitution
    over sectors.
    """

    def __init__(self, M, fock: FockConfig):
        import scipy.linalg as sla

        d = fock.dim
        ia, ib = _photon_numbers(fock)
        N = ia + ib
        k = np.arange(d * d)
        Ni, Nj = N[k % d], N[k // d]
        key = (Ni + Nj) * 1000 + Ni
        self.perm = np.argsort(key, kind="stable")
        sk = key[self.perm]
        bounds = np.flatnonzero(np.diff(sk)) + 1
        self.starts = np.concatenate([[0], bounds])
        self.stops = np.concatenate([bounds, [sk.size]])
        Mp = sp.csr_matrix(M)[self.perm][:, self.perm].tocsr()
        lower = sp.tril(Mp, k=-1).tocoo()
        blk = np.searchsorted(self.stops, np.arange(sk.size), side="right")
        if np.any(blk[lower.row] > blk[lower.col]):
            raise ValueError("generator is not block upper triangular in photon-number sectors")
        self.rows = [Mp[a:b] for a, b in zip(self.starts, self.stops)]
        self.lus = [sla.lu_factor(Mp[a:b, a:b].toarray()) for a, b in zip(self.starts, self.stops)]
        self._lu_solve = sla.lu_solve
        self.n = sk.size

    def solve(self, r):
        rp = np.asarray(r)[self.perm]
        x = np.zeros(self.n, dtype=complex)
        for i in range(len(self.lus) - 1, -1, -1):
            a, b = self.starts[i], self.stops[i]
            rhs = rp[a:b] - self.rows[i][:, b:] @ x[b:]
            x[a:b] = self._lu_solve(self.lus[i], rhs)
        out = np.empty_like(x)
        out[self.perm] = x
        return out


def _constrained(L, w, d):
    """Scaled generator diag(1/w) L diag(w) with the vacuum equation replaced by the trace."""
    Ls = (sp.diags(1.0 / w) @ sp.csr_matrix(L) @ sp.diags(w)).tolil()
    diag_idx = np.arange(d) * (d + 1)
    Ls[0, :] = 0
    Ls[0, diag_idx] = w[diag_idx]
    return Ls.tocsc()


def _solve_weighted(L, fock, amp, L_undriven, direct_limit, refine_steps):
    """Solve the trace-constrained system in the variables rho_ij / (amp_i amp_j)."""
    d = fock.dim
    n = d * d
    k = np.arange(n)
    w = amp[k % d] * amp[k // d]
    Ls = _constrained(L, w, d)
    rhs = np.zeros(n, dtype=complex)
    rhs[0] = 1.0
    history = []
    if n <= direct_limit:
        lu = spla.splu(Ls)
        x = lu.solve(rhs)
        for _ in range(refine_steps):
            x = x + lu.solve(rhs - Ls @ x)
    else:
        if L_undriven is not None:
            precond = SectorPreconditioner(_constrained(L_undriven, w, d), fock).solve
        else:
            ilu = spla.spilu(Ls, drop_tol=1e-8, fill_factor=30)
            precond = ilu.solve
        # left preconditioning: the stopping test then tracks the error of x
        # rather than the residual of the (badly row-scaled) raw system
        A = spla.LinearOperator(Ls.shape, lambda v: precond(Ls @ v), dtype=complex)
        b = precond(rhs)
        x, info = spla.gmres(A, b, rtol=1e-13, atol=0.0, restart=100, maxiter=50,
                             callback=history.append, callback_type="pr_norm")
        if info != 0:
            raise MasterSolveError(f"GMRES did not converge (info={info})", history)
        for _ in range(refine_steps):
            dx, _ = spla.gmres(A, precond(rhs - Ls @ x), rtol=1e-6, atol=0.0, restart=100, maxiter=20)
            x = x + dx
    history.append(float(np.linalg.norm(rhs - Ls @ x)))
    return x * w, history


def steady_density_matrix(
    L,
    fock: FockConfig,
    scale: float = 1.0,
    L_undriven=None,
    direct_limit: int = 4096,
    residual_tol: float = 1e-10,
    refine_steps: int = 2,
) -> SteadyDensityMatrix:
    """Solve L rho = 0 with Tr rho = 1.

    Under weak drive the populations span many decades, so rho_ij is divided
    by scale^(N_i + N_j) (N the total photon number) before solving; this
    keeps multi-photon populations resolved to relative precision. One
    equation (the vacuum population) is replaced by the trace condition.

    Up to ``direct_limit`` unknowns the system is LU-factorised. Above it,
    restarted GMRES is used, preconditioned by the exact sector solve of
    ``L_undriven`` (the same generator with zero drive) when given, else by
    an incomplete LU. Either way the answer is polished by a few steps of
    iterative refinement.
    """
    d = fock.dim
    ia, ib = _photon_numbers(fock)
    amp = np.exp((ia + ib) * math.log(scale))
    vec, history = _solve_weighted(L, fock, amp, L_undriven, direct_limit, refine_steps)
    if not np.all(np.isfinite(vec)):
        raise MasterSolveError("non-finite steady state", history)
    residual = float(np.linalg.norm(L @ vec))
    rho = vec.reshape((d, d), order="F")
    herm = float(np.abs(rho - rho.conj().T).max())
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    if herm > 0:
        log.debug("symmetrisation changed rho by %.3e", herm)
    if residual > residual_tol:
        raise MasterSolveError(f"steady-state residual {residual:.3e} above {residual_tol:g}", history + [residual])
    mineig = float(np.linalg.eigvalsh(rho).min()) if d <= 2000 else math.nan
    out = SteadyDensityMatrix(rho, fock, {}, residual, herm, mineig)
    audit = truncation_audit(out)
    out.tail_populations = audit.tails
    out.converged = audit.converged
    return out


def reduced_populations(rho: np.ndarray, fock: FockConfig) -> dict[str, np.ndarray]:
    diag = np.real(np.diag(rho)).reshape(fock.dims)
    return {
        "a": diag.sum(axis=(1, 2)),
        "b": diag.sum(axis=(0, 2)),
        "m": diag.sum(axis=(0, 1)),
    }


@dataclass
class TruncationReport:
    tails: dict[str, float]
    threshold: float
    converged: bool
    suggested: FockConfig | None


def truncation_audit(result: SteadyDensityMatrix, threshold: float = TAIL_THRESHOLD) -> TruncationReport:
    """Population of the highest retained level in each mode."""
    pops = reduced_populations(result.rho, result.fock)
    total = float(np.real(np.trace(result.rho)))
    tails = {k: float(max(v[-1], 0.0)) / total for k, v in pops.items()}
    converged = all(t < threshold for t in tails.values())
    suggested = None
    if not converged:
        dims = dict(zip("abm", result.fock.dims))
        for k, t in tails.items():
            if t >= threshold:
                dims[k] += 2
        suggested = FockConfig(dims["a"], dims["b"], dims["m"])
    return TruncationReport(tails, threshold, converged, suggested)


def correlations_equal_time(rho: np.ndarray, fock: FockConfig, vacuum_tol: float = 1e-30):
    """(g2_aa(0), g2_bb(0), g2_ab(0)) from photon-number moments."""
    diag = np.real(np.diag(rho)).reshape(fock.dims)
    na = np.arange(fock.n_a_max)[:, None, None]
    nb = np.arange(fock.n_b_max)[None, :, None]
    n_a = float((diag * na).sum())
    n_b = float((diag * nb).sum())
    if n_a <= vacuum_tol or n_b <= vacuum_tol:
        from .langevin import UndefinedCorrelationError

        raise UndefinedCorrelationError("vacuum cavity: g2 denominators vanish")
    g2aa = float((diag * na * (na - 1)).sum()) / n_a**2
    g2bb = float((diag * nb * (nb - 1)).sum()) / n_b**2
    g2ab = float((diag * na * nb).sum()) / (n_a * n_b)
    return g2aa, g2bb, g2ab


def expectation(rho: np.ndarray, op) -> complex:
    return complex((op @ rho).trace() if sp.issparse(op) else np.trace(op @ rho))


def solve_master(p: SystemParams, fock: FockConfig | None = None, **kwargs) -> SteadyDensityMatrix:
    """Build the generator for ``p`` and return its audited steady state."""
    fock = fock or FockConfig()
    L = build_liouvillian(p, fock)
    L0 = build_liouvillian(p.replace(eps_c=0.0), fock)
    res = steady_density_matrix(L, fock, scale=mean_field_scales(p), L_undriven=L0, **kwargs)
    _, _, c = mode_operators(fock)
    diff = printed_thermal_term(c, p.gamma_m, p.n_th) - (
        dissipator(c, p.gamma_m * p.n_th) + dissipator(c.getH(), p.gamma_m * p.n_th)
    )
    vec = res.rho.reshape(-1, order="F")
    res.thermal_form_discrepancy = float(np.linalg.norm(diff @ vec))
    if res.thermal_form_discrepancy > 0:
        res.notes.append(
            "printed thermal grouping differs from the standard pair of dissipators only "
            f"through the truncated commutator: |delta L rho| = {res.thermal_form_discrepancy:.3e}"
        )
    return res
