"""Parameter model, thermal statistics and closed-form optimal conditions.

All frequencies and rates are dimensionless, measured in units of the
reference cavity linewidth kappa. Only ``kappa_phys`` (rad/s) and
``temperature`` (K) carry physical units; they are needed to turn a bath
temperature into a dimensionless thermal energy.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

#: hbar / k_B in K*s
HBAR_OVER_KB = 7.63823e-12

_LAURENT_CUTOFF = 1e-6


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters of the driven cavity + optomechanical cavity.

    ``delta`` is the common detuning: cavity A sits at ``delta`` and cavity B
    at ``delta + g0**2 / omega_m`` so that the polaron-shifted B resonance
    lines up with A.
    """

    omega_m: float = 100.0
    J: float = 30.0
    g0: float = 0.2
    eps_c: float = 1e-2
    kappa_a: float = 1.0
    kappa_b: float = 1.0
    gamma_m: float = 1e-2
    delta: float = -0.29
    kappa_phys: float = 2 * math.pi * 1e6
    temperature: float = 1e-3

    def __post_init__(self):
        for name in ("omega_m", "kappa_a", "kappa_b", "gamma_m", "kappa_phys", "temperature"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        for name in ("J", "g0", "eps_c"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be non-negative and finite, got {value!r}")
        if not math.isfinite(self.delta):
            raise ValueError(f"delta must be finite, got {self.delta!r}")

    @property
    def g_b(self) -> float:
        return math.sqrt(2.0) * self.g0

    @property
    def delta_a(self) -> float:
        return self.delta

    @property
    def delta_b(self) -> float:
        return self.delta + self.g0**2 / self.omega_m

    @property
    def n_th(self) -> float:
        """Bose-Einstein occupation of the mechanical bath."""
        x = HBAR_OVER_KB * self.omega_m * self.kappa_phys / self.temperature
        if x > 700:
            return 0.0
        return 1.0 / math.expm1(x)

    def replace(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass
class Check:
    name: str
    passed: bool
    message: str


@dataclass
class ValidationReport:
    checks: list[Check] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def lines(self) -> list[str]:
        out = [f"{'PASS' if c.passed else 'WARN'} {c.name}: {c.message}" for c in self.checks]
        out += [f"NOTE {n}" for n in self.notes]
        return out


def validate_params(p: SystemParams, sideband_ratio: float = 10.0, weak_drive: float = 0.1) -> ValidationReport:
    """Check the regime assumptions the model relies on.

    Never raises; every violated bound is reported by name.
    """
    report = ValidationReport()
    kappa = max(p.kappa_a, p.kappa_b)
    report.checks.append(Check(
        "resolved_sideband",
        p.omega_m >= sideband_ratio * kappa,
        f"omega_m={p.omega_m:g} vs {sideband_ratio:g}*kappa={sideband_ratio * kappa:g}",
    ))
    report.checks.append(Check(
        "weak_drive",
        p.eps_c <= weak_drive * kappa,
        f"eps_c={p.eps_c:g} vs {weak_drive:g}*kappa={weak_drive * kappa:g}",
    ))
    ok = p.J < p.omega_m / 2
    report.checks.append(Check(
        "J_below_half_omega_m",
        ok,
        f"J={p.J:g}, omega_m/2={p.omega_m / 2:g}" + ("" if ok else " (J < omega_m/2 violated)"),
    ))
    ok = p.g0 < p.omega_m
    report.checks.append(Check(
        "weak_polaron_displacement",
        ok,
        f"g0/omega_m={p.g0 / p.omega_m:g}" + ("" if ok else " (g0/omega_m << 1 violated)"),
    ))
    if p.eps_c == 0:
        report.notes.append("zero drive: all correlations undefined (vacuum)")
    report.notes.append(
        f"temperature {p.temperature:g} K converted with kappa_phys={p.kappa_phys:g} rad/s "
        f"(n_th={p.n_th:.6g})"
    )
    return report


def _one_plus_coth(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return -2.0 / np.expm1(-2.0 * x)


def thermal_noise_factor(p: SystemParams, omega):
    """Spectral density of the mechanical Brownian force.

    S(w) = gamma_m / (2 omega_m) * w * [1 + coth(hbar w kappa_phys / 2 k_B T)],
    continuous through w = 0.
    """
    if not p.temperature > 0:
        raise ValueError(f"temperature must be positive, got {p.temperature!r}")
    omega = np.asarray(omega, dtype=float)
    c = HBAR_OVER_KB * p.kappa_phys / (2.0 * p.temperature)
    x = c * omega
    small = np.abs(x) < _LAURENT_CUTOFF
    xs = np.where(small, 1.0, x)
    # w * (1 + coth x) with coth x ~ 1/x + x/3 near zero
    regular = omega * _one_plus_coth(xs)
    series = omega + 1.0 / c + omega * x / 3.0
    out = np.where(small, series, regular)
    out = np.where(np.isfinite(out), out, 0.0)
    out = p.gamma_m / (2.0 * p.omega_m) * out
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class EnergyLevel:
    n_a: int
    n_b: int
    n_m: int
    energy: float


def energy_level(p: SystemParams, n_a: int, n_b: int, n_m: int, omega_a_ref: float = 0.0) -> EnergyLevel:
    """Eigenenergy of the displaced-oscillator Hamiltonian at J = eps_c = 0.

    The shifted B frequency is pinned to ``omega_a_ref``; energies are in
    units of hbar*kappa.
    """
    for name, n in (("n_a", n_a), ("n_b", n_b), ("n_m", n_m)):
        if int(n) != n or n < 0:
            raise ValueError(f"{name} must be a non-negative integer, got {n!r}")
    kerr = p.g0**2 / p.omega_m
    e = omega_a_ref * n_a + omega_a_ref * n_b - kerr * n_b * (n_b - 1) + p.omega_m * n_m
    return EnergyLevel(int(n_a), int(n_b), int(n_m), float(e))


def optimal_detuning(J: float, kappa: float = 1.0) -> float:
    """Detuning that cancels the two-photon amplitude in cavity A."""
    if not (J > 0 and kappa > 0):
        raise ValueError(f"need J > 0 and kappa > 0, got J={J!r}, kappa={kappa!r}")
    # sqrt(9J^4 + 8k^2J^2) - 3J^2 written to avoid cancellation at large J/k
    root = math.sqrt(9 * J**4 + 8 * kappa**2 * J**2)
    radicand = 8 * kappa**2 * J**2 / (root + 3 * J**2) - kappa**2
    if radicand < 0:
        raise ValueError(f"negative radicand {radicand!r} in optimal detuning")
    return -0.5 * math.sqrt(radicand)


def optimal_coupling(J: float, kappa: float = 1.0, omega_m: float = 100.0) -> float:
    """Optomechanical coupling g0 at which the two-photon amplitude vanishes."""
    denom = 2 * (2 * J**2 - kappa**2)
    # J = kappa/sqrt(2) rounded to a float leaves ~1e-16 of spurious denominator
    if not denom > 1e-12 * kappa**2:
        raise ValueError(f"optimal coupling needs 2J^2 > kappa^2, got J={J!r}, kappa={kappa!r}")
    d = optimal_detuning(J, kappa)
    return math.sqrt(-omega_m * d * (5 * kappa**2 + 4 * d**2) / denom)


def optimal_detuning_asymptotic(kappa: float = 1.0) -> float:
    return -kappa / (2 * math.sqrt(3))


def optimal_coupling_asymptotic(J: float, kappa: float = 1.0, omega_m: float = 100.0) -> float:
    """Large-J/kappa form of :func:`optimal_coupling`."""
    return kappa * math.sqrt(2 / (3 * math.sqrt(3))) * math.sqrt(omega_m / J) * math.sqrt(kappa / J)
