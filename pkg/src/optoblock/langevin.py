"""Linearised quantum Langevin treatment of the coupled cavities.

Pipeline: mean-field steady state -> drift-matrix stability -> frequency
domain transfer functions of delta-a -> fluctuation spectra -> Fourier
integrals -> g2(tau) = G1 + G2 (Gaussian factorisation of the four-point
function).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import SystemParams, thermal_noise_factor
from .quadrature import IntegrationError, integrate


class SteadyStateError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularResponseError(ArithmeticError):
    """|D(omega)| underflowed: the operating point is at (or near) an instability."""


class UndefinedCorrelationError(ValueError):
    """Normalising photon number is zero (undriven cavity)."""


@dataclass(frozen=True)
class SteadyStateFields:
    alpha0: complex
    beta0: complex
    q0: float
    stable: bool
    max_real_eigenvalue: float
    residuals: tuple[float, float, float] = (0.0, 0.0, 0.0)


# --------------------------------------------------------------------------
# steady state


def _cubic_coefficients(p: SystemParams):
    """Coefficients of the cubic in x = |beta0|^2 and the linear pieces it came from."""
    ca = p.kappa_a / 2 + 1j * p.delta_a
    c0 = p.kappa_b / 2 + 1j * p.delta_b + p.J**2 / ca
    u = p.g_b**2 / p.omega_m
    K = (p.J * p.eps_c) ** 2 / abs(ca) ** 2
    # x * |c0 - i u x|^2 = K
    coeffs = (u**2, -2 * u * c0.imag, abs(c0) ** 2, -K)
    return ca, c0, u, K, coeffs


def _fields_from_x(p: SystemParams, x: float):
    ca, c0, u, _, _ = _cubic_coefficients(p)
    beta0 = -1j * p.J * p.eps_c / (ca * (c0 - 1j * u * x))
    alpha0 = (p.eps_c - 1j * p.J * beta0) / ca
    q0 = -p.g_b * abs(beta0) ** 2 / p.omega_m
    return complex(alpha0), complex(beta0), float(q0)


def steady_state_residuals(p: SystemParams, alpha0, beta0, q0):
    r1 = (p.kappa_a / 2 + 1j * p.delta_a) * alpha0 + 1j * p.J * beta0 - p.eps_c
    r2 = (p.kappa_b / 2 + 1j * (p.delta_b + p.g_b * q0)) * beta0 + 1j * p.J * alpha0
    r3 = p.omega_m * q0 + p.g_b * abs(beta0) ** 2
    return abs(r1), abs(r2), abs(r3)


def cubic_roots(p: SystemParams) -> np.ndarray:
    """All non-negative real roots x = |beta0|^2 of the mean-field cubic."""
    _, _, u, K, coeffs = _cubic_coefficients(p)
    if K == 0:
        return np.array([0.0])
    if u == 0:
        return np.array([K / coeffs[2]])
    roots = np.roots(coeffs)
    scale = max(abs(r) for r in roots)
    real = [r.real for r in roots if abs(r.imag) <= 1e-9 * scale and r.real >= 0]
    return np.sort(np.array(real))


def _newton(coeffs, x, tol=1e-15, max_iter=100):
    a3, a2, a1, a0 = coeffs
    for _ in range(max_iter):
        f = ((a3 * x + a2) * x + a1) * x + a0
        df = (3 * a3 * x + 2 * a2) * x + a1
        if df == 0:
            break
        step = f / df
        x -= step
        if abs(step) <= tol * max(abs(x), 1e-300):
            return x, abs(f)
    f = ((a3 * x + a2) * x + a1) * x + a0
    raise SteadyStateError("Newton iteration on the mean-field cubic did not converge", residual=abs(f))


def drift_matrix(p: SystemParams, alpha0, beta0, q0) -> np.ndarray:
    """6x6 coefficient matrix of the linearised equations.

    Basis (da, da^dag, db, db^dag, dq, dp); d/dt v = M v + noise.
    """
    ka, kb, J, gb, wm = p.kappa_a, p.kappa_b, p.J, p.g_b, p.omega_m
    db = p.delta_b + gb * q0
    M = np.zeros((6, 6), dtype=complex)
    M[0, 0] = -(ka / 2 + 1j * p.delta_a)
    M[0, 2] = -1j * J
    M[1, 1] = -(ka / 2 - 1j * p.delta_a)
    M[1, 3] = 1j * J
    M[2, 2] = -(kb / 2 + 1j * db)
    M[2, 0] = -1j * J
    M[2, 4] = -1j * gb * beta0
    M[3, 3] = -(kb / 2 - 1j * db)
    M[3, 1] = 1j * J
    M[3, 4] = 1j * gb * np.conj(beta0)
    M[4, 5] = wm
    M[5, 4] = -wm
    M[5, 2] = -gb * np.conj(beta0)
    M[5, 3] = -gb * beta0
    M[5, 5] = -p.gamma_m / 2
    return M


def solve_steady_state(p: SystemParams, continuation_steps: int = 8) -> SteadyStateFields:
    """Mean-field amplitudes and drift-matrix stability.

    Eliminating alpha0 and q0 leaves a cubic in |beta0|^2. The physical root
    is the one reached by Newton continuation in the optomechanical coupling,
    starting from the linear (g0 = 0) solution.
    """
    ca, c0, u, K, coeffs = _cubic_coefficients(p)
    if K == 0:
        x = 0.0
    else:
        x = K / abs(c0) ** 2
        for s in np.linspace(0, 1, continuation_steps + 1)[1:]:
            us = u * s
            x, _ = _newton((us**2, -2 * us * c0.imag, abs(c0) ** 2, -K), x)
        roots = cubic_roots(p)
        if roots.size:
            nearest = roots[np.argmin(np.abs(roots - x))]
            if abs(nearest - x) <= 1e-8 * max(x, 1e-300):
                x = float(nearest)
    alpha0, beta0, q0 = _fields_from_x(p, x)
    res = steady_state_residuals(p, alpha0, beta0, q0)
    scale = max(p.eps_c, 1e-300)
    if max(res) > 1e-10 * scale and p.eps_c > 0:
        raise SteadyStateError("steady-state residual above tolerance", residual=max(res))
    eig = np.linalg.eigvals(drift_matrix(p, alpha0, beta0, q0))
    lam = float(eig.real.max())
    return SteadyStateFields(alpha0, beta0, q0, lam < 0, lam, res)


# --------------------------------------------------------------------------
# frequency domain


def susceptibility(p: SystemParams, omega):
    omega = np.asarray(omega, dtype=float)
    wm = p.omega_m
    return wm**2 / (wm**2 - omega**2 - 1j * omega * p.gamma_m / 2)


@dataclass
class TransferEval:
    omega: np.ndarray
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    A11: np.ndarray
    A22: np.ndarray
    A33: np.ndarray
    A44: np.ndarray
    D: np.ndarray
    chi: np.ndarray
    delta_b_prime: np.ndarray


def transfer_functions(p: SystemParams, ss: SteadyStateFields, omega, check: bool = True) -> TransferEval:
    """Response of delta-a(omega) to the five noise inputs.

    delta-a = E a_in + F a_in^dag + G b_in + H b_in^dag + Q xi. Vectorised
    over ``omega``.
    """
    w = np.asarray(omega, dtype=float)
    ka, kb, J, gb, wm = p.kappa_a, p.kappa_b, p.J, p.g_b, p.omega_m
    da = p.delta_a
    b0 = ss.beta0
    chi = susceptibility(p, w)
    cw = chi / wm
    dbp = p.delta_b + gb * ss.q0 - gb**2 * abs(b0) ** 2 * cw
    a_minus = ka / 2 - 1j * (da + w)

    A11 = (
        a_minus * ((kb / 2 - 1j * w) ** 2 + dbp**2)
        - a_minus * gb**4 * abs(b0) ** 4 * cw**2
        + J**2 * (kb / 2 + 1j * (dbp - w))
    )
    A22 = -1j * J**2 * gb**2 * b0**2 * cw
    A33 = -1j * J * a_minus * (kb / 2 - 1j * (dbp + w)) - 1j * J**3
    A44 = -J * gb**2 * b0**2 * cw * a_minus
    D = (ka / 2 + 1j * (da - w)) * A11 + 1j * J * A33

    if check and np.any(np.abs(D) < 1e-290):
        raise SingularResponseError("|D(omega)| underflow: response is singular")
    E = math.sqrt(ka) * A11 / D
    F = -math.sqrt(ka) * A22 / D
    G = math.sqrt(kb) * A33 / D
    H = -math.sqrt(kb) * A44 / D
    Q = -1j * gb * cw / D * (b0 * A33 + np.conj(b0) * A44)
    return TransferEval(w, E, F, G, H, Q, A11, A22, A33, A44, D, chi, dbp)


def noise_spectra(p: SystemParams, ss: SteadyStateFields, omega):
    """Fluctuation spectra (X_{a^dag a}(w) real, X_{aa}(w) complex)."""
    w = np.asarray(omega, dtype=float)
    both = transfer_functions(p, ss, np.concatenate([np.atleast_1d(w), -np.atleast_1d(w)]).ravel())
    n = np.atleast_1d(w).size
    pos = slice(0, n)
    neg = slice(n, 2 * n)
    S = thermal_noise_factor(p, np.atleast_1d(w))
    Qn, Fn, Hn = both.Q[neg], both.F[neg], both.H[neg]
    x_dag_a = np.abs(Qn) ** 2 * S + np.abs(Fn) ** 2 + np.abs(Hn) ** 2
    x_aa = both.Q[pos] * Qn * S + both.E[pos] * Fn + both.G[pos] * Hn
    if np.ndim(omega) == 0:
        return float(x_dag_a[0]), complex(x_aa[0])
    return x_dag_a, x_aa


def spectral_breakpoints(p: SystemParams) -> tuple[np.ndarray, float]:
    """Panel edges for the spectral integrals and the outer cutoff."""
    wm, J, d = p.omega_m, p.J, p.delta
    kappa = max(p.kappa_a, p.kappa_b)
    cutoff = wm + 50 * max(kappa, p.gamma_m * wm / kappa)
    feats = [0.0, wm, -wm, d, -d, J, -J, d + J, d - J, -d + J, -d - J]
    pts = [x for x in feats if abs(x) < cutoff]
    pts += [-cutoff, cutoff]
    return np.unique(np.array(pts)), cutoff


def correlation_integrals(
    p: SystemParams,
    ss: SteadyStateFields,
    tau_grid,
    rtol: float = 1e-10,
    tail_tol: float | None = None,
    max_extensions: int = 6,
    chunk: int = 16,
):
    """Normal and time-ordered anomalous fluctuation correlators at each tau.

    normal[k]    = <da^dag(t) da(t + tau_k)>
    anomalous[k] = <T[da(t + tau_k) da(t)]>

    The integration range is truncated at a finite cutoff; the L1 norm of
    the spectra beyond it (out to ten times the cutoff) must be below
    ``tail_tol`` (default ``rtol``) relative to the in-range L1 norm, else
    the cutoff is doubled.
    """
    if tail_tol is None:
        tail_tol = rtol
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1 or tau.size == 0:
        raise ValueError("tau_grid must be a non-empty 1-D array")
    if p.g0 == 0 or p.eps_c == 0:
        z = np.zeros(tau.size, dtype=complex)
        return z, z.copy()
    if tau.size > chunk:
        # integrand memory grows with nodes * len(tau); keep each batch small
        parts = [
            correlation_integrals(p, ss, tau[i:i + chunk], rtol, tail_tol, max_extensions, chunk)
            for i in range(0, tau.size, chunk)
        ]
        return np.concatenate([q[0] for q in parts]), np.concatenate([q[1] for q in parts])
    tmax = float(np.max(np.abs(tau)))
    atau = np.abs(tau)

    def f(w):
        xda, xaa = noise_spectra(p, ss, w)
        ph = np.exp(1j * np.outer(w, tau))
        phm = np.exp(-1j * np.outer(w, atau))
        return np.concatenate([xda[:, None] * ph, xaa[:, None] * phm], axis=1)

    def f_abs(w):
        xda, xaa = noise_spectra(p, ss, w)
        return np.stack([np.abs(xda), np.abs(xaa)], axis=1)

    pts, cutoff = spectral_breakpoints(p)
    max_width = None if tmax == 0 else math.pi / tmax
    res = integrate(f, pts, rtol=rtol, max_width=max_width)
    n = tau.size
    for _ in range(max_extensions + 1):
        # |f| does not depend on tau, so the tail bound needs no phase resolution
        tail_l1 = (
            integrate(f_abs, [cutoff, 10 * cutoff], rtol=1e-3).value
            + integrate(f_abs, [-10 * cutoff, -cutoff], rtol=1e-3).value
        )
        tail_l1 = np.repeat(tail_l1, n)
        if np.all(tail_l1 <= tail_tol * np.maximum(res.l1, 1e-300)):
            break
        new_cutoff = 2 * cutoff
        extra = [
            integrate(f, [cutoff, new_cutoff], rtol=rtol, max_width=max_width),
            integrate(f, [-new_cutoff, -cutoff], rtol=rtol, max_width=max_width),
        ]
        res.value = res.value + extra[0].value + extra[1].value
        res.l1 = res.l1 + extra[0].l1 + extra[1].l1
        res.error = res.error + extra[0].error + extra[1].error
        cutoff = new_cutoff
    else:
        raise IntegrationError(
            "spectral tail above tolerance after extending the cutoff",
            estimate=res.value / (2 * math.pi),
            error=tail_l1 / (2 * math.pi),
        )
    vals = res.value / (2 * math.pi)
    normal = vals[:n]
    anomalous = vals[n:]
    # <da^dag da> at tau = 0 is real
    normal = np.where(tau == 0, normal.real + 0j, normal)
    return normal, anomalous


@dataclass
class CorrelationSet:
    tau_grid: np.ndarray
    g2: np.ndarray
    g1_part: np.ndarray
    g2_part: np.ndarray
    n_a_fluct: float
    alpha0: complex = 0j
    steady_state: SteadyStateFields | None = None


def assemble_g2(alpha0: complex, n0: float, normal, anomalous):
    """G1(tau), G2(tau) from the mean field and the two correlators."""
    a2 = abs(alpha0) ** 2
    den = (a2 + n0) ** 2
    if not den > 0:
        raise UndefinedCorrelationError("mean photon number in cavity A is zero")
    normal = np.asarray(normal)
    anomalous = np.asarray(anomalous)
    G1 = (a2**2 + 2 * a2 * n0 + 2 * a2 * normal.real + 2 * (np.conj(alpha0) ** 2 * anomalous).real) / den
    G2 = (n0**2 + np.abs(normal) ** 2 + np.abs(anomalous) ** 2) / den
    return G1, G2


def g2_tau(p: SystemParams, tau_grid, ss: SteadyStateFields | None = None, rtol: float = 1e-10) -> CorrelationSet:
    """Second-order correlation g2_aa(tau) of cavity A with its G1/G2 split."""
    tau = np.asarray(tau_grid, dtype=float)
    if ss is None:
        ss = solve_steady_state(p)
    with_zero = tau.size == 0 or not np.any(tau == 0)
    grid = np.concatenate([[0.0], tau]) if with_zero else tau
    normal, anomalous = correlation_integrals(p, ss, grid, rtol=rtol)
    i0 = 0 if with_zero else int(np.flatnonzero(grid == 0)[0])
    n0 = float(normal[i0].real)
    if with_zero:
        normal, anomalous = normal[1:], anomalous[1:]
    G1, G2 = assemble_g2(ss.alpha0, n0, normal, anomalous)
    return CorrelationSet(tau, G1 + G2, G1, G2, n0, ss.alpha0, ss)


def g2_zero(p: SystemParams, rtol: float = 1e-10) -> CorrelationSet:
    return g2_tau(p, [0.0], rtol=rtol)


def g2_zero_scan(base: SystemParams, axes: dict, rtol: float = 1e-10) -> list[dict]:
    """g2(0) over the Cartesian product of ``axes`` (row-major, first axis slowest).

    Unstable or failing points are flagged in ``status`` and the scan continues.
    """
    names = list(axes)
    grids = [np.asarray(axes[n], dtype=float) for n in names]
    rows = []
    for idx in np.ndindex(*[g.size for g in grids]):
        values = {n: float(g[i]) for n, g, i in zip(names, grids, idx)}
        rows.append(g2_zero_point(base.replace(**values), values, rtol=rtol))
    return rows


def g2_zero_point(p: SystemParams, values: dict | None = None, rtol: float = 1e-10) -> dict:
    row = dict(values or {})
    try:
        ss = solve_steady_state(p)
        row["max_real_eigenvalue"] = ss.max_real_eigenvalue
        if not ss.stable:
            row.update(g2=math.nan, G1=math.nan, G2=math.nan, status="unstable")
            return row
        cs = g2_tau(p, [0.0], ss=ss, rtol=rtol)
        row.update(g2=float(cs.g2[0]), G1=float(cs.g1_part[0]), G2=float(cs.g2_part[0]), status="ok")
    except (SteadyStateError, SingularResponseError, IntegrationError, UndefinedCorrelationError) as exc:
        row.update(g2=math.nan, G1=math.nan, G2=math.nan, status="error", error=str(exc))
    return row
