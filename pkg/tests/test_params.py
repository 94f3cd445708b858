import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from mpmath import mp, mpf, sqrt as msqrt

from optoblock.params import (
    HBAR_OVER_KB,
    SystemParams,
    energy_level,
    optimal_coupling,
    optimal_coupling_asymptotic,
    optimal_detuning,
    optimal_detuning_asymptotic,
    thermal_noise_factor,
    validate_params,
)


def mp_detuning(J, kappa=1):
    mp.dps = 50
    J, k = mpf(J), mpf(kappa)
    return float(-msqrt(msqrt(9 * J**4 + 8 * k**2 * J**2) - 3 * J**2 - k**2) / 2)


def test_defaults_and_derived():
    p = SystemParams()
    assert p.g_b == pytest.approx(math.sqrt(2) * 0.2)
    assert p.delta_a == -0.29
    assert p.delta_b == pytest.approx(-0.29 + 0.04 / 100)
    assert p.gamma_m == pytest.approx(p.omega_m / 1e4)


@pytest.mark.parametrize("field,value", [("kappa_a", 0.0), ("omega_m", -1.0), ("temperature", 0.0), ("g0", -0.1), ("delta", math.nan)])
def test_rejects_bad_values(field, value):
    with pytest.raises(ValueError):
        SystemParams(**{field: value})


def test_n_th_matches_bose_einstein():
    mp.dps = 40
    for T in (1e-4, 1e-3, 1e-2, 5e-2):
        p = SystemParams(temperature=T)
        x = mpf(HBAR_OVER_KB) * mpf(p.omega_m) * mpf(p.kappa_phys) / mpf(T)
        assert p.n_th == pytest.approx(float(1 / (mp.e**x - 1)), rel=1e-12)
    assert SystemParams(temperature=1e-9).n_th == 0.0
    assert SystemParams().n_th == pytest.approx(0.0083, rel=0.01)


def test_thermal_factor_detailed_balance():
    p = SystemParams(temperature=1e-2)
    w = np.linspace(0.05, 300, 400)
    ratio = thermal_noise_factor(p, -w) / thermal_noise_factor(p, w)
    expected = np.exp(-HBAR_OVER_KB * p.kappa_phys * w / p.temperature)
    np.testing.assert_allclose(ratio, expected, rtol=1e-10)


def test_thermal_factor_continuous_at_zero():
    p = SystemParams(temperature=1e-3)
    c = HBAR_OVER_KB * p.kappa_phys / (2 * p.temperature)
    s0 = p.gamma_m / (2 * p.omega_m) / c
    assert thermal_noise_factor(p, 0.0) == pytest.approx(s0, rel=1e-12)
    for eps in (1e-9, 1e-7, 1e-5, 1e-3):
        for w in (eps, -eps):
            x = c * w
            exact = p.gamma_m / (2 * p.omega_m) * w * (1 + 1 / math.tanh(x))
            assert thermal_noise_factor(p, w) == pytest.approx(exact, rel=1e-9)


def test_thermal_factor_zero_temperature_limit():
    p = SystemParams(temperature=1e-7)
    w = np.array([-50.0, -1.0, 1.0, 50.0])
    np.testing.assert_allclose(thermal_noise_factor(p, w), p.gamma_m / p.omega_m * np.maximum(w, 0), atol=1e-200)


def test_thermal_factor_domain_error():
    fake = SimpleNamespace(temperature=0.0, kappa_phys=1.0, gamma_m=1.0, omega_m=1.0)
    with pytest.raises(ValueError):
        thermal_noise_factor(fake, 1.0)


def test_validate_reports_every_violation():
    rep = validate_params(SystemParams(J=60, eps_c=0.5, omega_m=5))
    names = {c.name for c in rep.failed()}
    assert names == {"J_below_half_omega_m", "weak_drive", "resolved_sideband"}
    assert not rep.ok
    assert any("J < omega_m/2" in line for line in rep.lines())
    assert validate_params(SystemParams()).ok


def test_validate_zero_drive_note():
    rep = validate_params(SystemParams(eps_c=0.0))
    assert any("undefined" in n for n in rep.notes)


def test_energy_levels():
    p = SystemParams()
    kerr = p.g0**2 / p.omega_m
    assert energy_level(p, 0, 0, 0).energy == 0.0
    assert energy_level(p, 0, 2, 0, omega_a_ref=1.0).energy == pytest.approx(2 - 2 * kerr)
    assert energy_level(p, 1, 1, 1).energy == pytest.approx(p.omega_m)
    # single-photon levels carry no Kerr shift
    assert energy_level(p, 0, 1, 0).energy == energy_level(p, 1, 0, 0).energy
    with pytest.raises(ValueError):
        energy_level(p, -1, 0, 0)
    with pytest.raises(ValueError):
        energy_level(p, 0, 1.5, 0)


@pytest.mark.parametrize("J", [1.0, 3.0, 30.0, 1e3, 1e4])
def test_optimal_detuning_against_high_precision(J):
    assert optimal_detuning(J) == pytest.approx(mp_detuning(J), rel=1e-12, abs=1e-15)


def test_optimal_detuning_examples():
    assert optimal_detuning(1.0) == pytest.approx(-0.1754, abs=1e-4)
    assert optimal_detuning(1e4) == pytest.approx(-0.28868, abs=1e-5)
    assert optimal_detuning_asymptotic() == pytest.approx(-1 / (2 * math.sqrt(3)))


def test_optimal_detuning_negative_radicand():
    with pytest.raises(ValueError, match="radicand"):
        optimal_detuning(0.5)


def test_optimal_coupling():
    assert optimal_coupling(30.0, 1.0, 100.0) == pytest.approx(0.207, abs=0.002)
    assert optimal_coupling_asymptotic(30.0, 1.0, 100.0) == pytest.approx(0.2068, abs=1e-4)
    g = optimal_coupling(100.0, 1.0, 100.0)
    assert abs(optimal_coupling_asymptotic(100.0, 1.0, 100.0) - g) / g < 0.01
    for J in (1 / math.sqrt(2), 0.5):
        with pytest.raises(ValueError):
            optimal_coupling(J)


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=0.75, max_value=1e5))
def test_optimal_detuning_bounded(J):
    d = optimal_detuning(J)
    assert -1 / (2 * math.sqrt(3)) - 1e-12 <= d <= 0


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=-500, max_value=500).filter(lambda w: abs(w) > 1e-3),
       st.floats(min_value=1e-5, max_value=0.1))
def test_thermal_factor_detailed_balance_property(w, T):
    p = SystemParams(temperature=T)
    num = thermal_noise_factor(p, -w)
    den = thermal_noise_factor(p, w)
    x = HBAR_OVER_KB * p.kappa_phys * w / T
    if abs(x) > 600 or den == 0:
        return
    assert num / den == pytest.approx(math.exp(-x), rel=1e-10)
