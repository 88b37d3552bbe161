import math

import numpy as np
import pytest

from wgqed.model import (
    COLLECTIVE_U,
    EG,
    EXCITED_PROJECTOR,
    GE,
    GG,
    EE,
    DriveConfig,
    EmitterParams,
    Pulse,
    SystemParams,
    build_dissipators,
    build_hamiltonian,
    build_liouvillian,
    collective_eigenmodes,
    collective_rates,
    from_collective_basis,
    ghz,
    ket,
    projector,
    single_excitation_hamiltonian,
    to_collective_basis,
    trace_row,
    unvec,
    vec,
)

# frozen: sqrt(0.73 * 0.79) evaluated independently
CROSS_RATE_GHZ = 0.7594076639065476


def test_parameter_validation():
    with pytest.raises(ValueError):
        EmitterParams(0.0)
    with pytest.raises(ValueError):
        EmitterParams(1.0, beta=1.2)
    with pytest.raises(ValueError):
        EmitterParams(1.0, dephasing=-0.1)
    with pytest.raises(ValueError):
        Pulse(fwhm=0.0)
    with pytest.raises(ValueError):
        DriveConfig((float("nan"), 0.0))


def test_waveguide_rate_and_split():
    sys = SystemParams.pair(2.0, 3.0, beta1=0.5, beta2=0.25, delta1=1.0, delta2=-0.5)
    assert sys.emitters[0].waveguide_rate == 1.0
    assert sys.emitters[1].loss_rate == pytest.approx(2.25)
    assert sys.detuning_split == 1.5
    assert sys.with_split(2.0, "emitter1").emitters[1].detuning == -2.0
    assert sys.with_split(2.0).detuning_split == 2.0


def test_zero_hamiltonian():
    sys = SystemParams.pair(1.0, coupling_phase=0.0)
    assert np.all(build_hamiltonian(sys) == 0)


def test_single_drive_hamiltonian_structure():
    om = 0.7
    h = build_hamiltonian(SystemParams.pair(1.0), DriveConfig.cw(om))
    expected = np.zeros((4, 4))
    expected[GG, EG] = expected[EG, GG] = om / 2
    expected[GE, EE] = expected[EE, GE] = om / 2
    assert np.allclose(h, expected, atol=1e-15)


def test_out_of_phase_drive_sign():
    om = 0.4
    h = build_hamiltonian(SystemParams.pair(1.0), DriveConfig.cw(om, om, 0.0, math.pi))
    assert h[EG, GG].real == pytest.approx(om / 2)
    assert h[GE, GG].real == pytest.approx(-om / 2)
    assert np.allclose(h, h.conj().T)


def test_pulsed_envelope_has_declared_area():
    d = DriveConfig.pulsed(area=1.3, weight1=1.0, weight2=0.5)
    t = np.linspace(*d.pulse.window(), 20001)
    vals = np.array([abs(d.rabi_at(x)[0]) for x in t])
    assert np.trapezoid(vals, t) == pytest.approx(1.3, rel=1e-10)
    assert abs(d.rabi_at(d.pulse.center)[1]) == pytest.approx(0.5 * abs(d.rabi_at(d.pulse.center)[0]))


def test_ideal_dissipators_bright_and_dark():
    diss = build_dissipators(SystemParams.pair(1.0, beta1=1.0))
    wg = [d for d in diss if d.kind == "waveguide"]
    assert wg[0].rate == pytest.approx(2.0)
    assert wg[1].rate == 0.0
    bright = wg[0].operator
    expected = (ket("gg")[:, None] @ (ket("eg") + ket("ge"))[None, :]) / math.sqrt(2)
    expected += (ket("ge")[:, None] @ ket("ee")[None, :] + ket("eg")[:, None] @ ket("ee")[None, :]) / math.sqrt(2)
    assert np.allclose(bright, expected)


def test_uncoupled_second_emitter_has_no_cross_term():
    sys = SystemParams.pair(1.0, beta1=1.0, beta2=0.0)
    assert sys.dissipative_coupling == 0.0
    rates = sorted(d.rate for d in build_dissipators(sys) if d.rate > 0)
    assert rates == pytest.approx([1.0, 1.0])


def test_cross_rate_from_paper_linewidths():
    sys = SystemParams.pair(ghz(0.73), ghz(0.79), beta1=1.0)
    assert sys.dissipative_coupling / ghz(1.0) == pytest.approx(CROSS_RATE_GHZ, rel=1e-12)


@pytest.mark.parametrize("phase", [0.0, 0.4, 1.3, math.pi, 5.0])
def test_total_decay_recovered(phase):
    sys = SystemParams.pair(1.1, 0.7, beta1=0.8, beta2=0.6, coupling_phase=phase, dephasing1=0.3)
    for state, em in zip((EG, GE), sys.emitters):
        total = 0.0
        for d in build_dissipators(sys):
            if d.kind.startswith("dephasing"):
                continue
            total += d.rate * np.real((d.operator.conj().T @ d.operator)[state, state])
        assert total == pytest.approx(em.total_decay, abs=1e-12)


def test_liouvillian_trace_preservation_and_zero_mode(paper_pair):
    lv = build_liouvillian(paper_pair, DriveConfig.cw(1.0, 0.5, 0.0, 1.0))
    assert np.max(np.abs(trace_row() @ lv)) < 1e-10
    ev = np.linalg.eigvals(build_liouvillian(paper_pair))
    assert np.min(np.abs(ev)) < 1e-10
    assert np.max(ev.real) < 1e-10


def test_liouvillian_maps_hermitian_to_traceless_hermitian(paper_pair):
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    herm = a + a.conj().T
    out = unvec(build_liouvillian(paper_pair, DriveConfig.cw(0.8)) @ vec(herm))
    assert np.allclose(out, out.conj().T, atol=1e-12)
    assert abs(np.trace(out)) < 1e-12


def test_single_emitter_decay_rate():
    sys = SystemParams.pair(1.3, 2.0, beta1=1.0, beta2=0.0)
    lv = build_liouvillian(sys)
    rho0 = projector("eg")
    from scipy.linalg import expm

    for t in (0.1, 0.7, 2.0):
        rho = unvec(expm(lv * t) @ vec(rho0))
        assert np.real(np.trace(EXCITED_PROJECTOR[0] @ rho)) == pytest.approx(math.exp(-1.3 * t), rel=1e-10)


def test_single_excitation_liouvillian_eigenvalues(ideal_pair):
    # in the |+-> basis the coherences decay at half the population rates
    rates = collective_rates(ideal_pair)
    gp, gm = rates.gamma_plus, rates.gamma_minus
    ev = np.linalg.eigvals(build_liouvillian(ideal_pair))
    expected = [-gp, -gm, -(gp + gm) / 2, -gp / 2, -gm / 2]
    for e in expected:
        assert np.min(np.abs(ev - e)) < 1e-9


@pytest.mark.parametrize(
    "g12, d12, expected",
    [(1.0, 0.6, 0.8 + 0j), (1.0, 2.0, 1j * math.sqrt(3.0)), (1.0, 0.0, 1.0 + 0j)],
)
def test_splitting_parameter(g12, d12, expected):
    sys = SystemParams.pair(g12, beta1=1.0, delta1=d12)
    r = collective_rates(sys)
    assert r.splitting == pytest.approx(expected, abs=1e-12)
    if d12 > g12:
        assert r.gamma_plus == r.gamma_minus == pytest.approx(g12)
        assert r.oscillation == pytest.approx(math.sqrt(3.0))


def test_rate_sum_rule():
    r = collective_rates(SystemParams.pair(1.0, beta1=1.0))
    assert (r.gamma_plus, r.gamma_minus) == (2.0, 0.0)


def test_eigenmodes_match_collective_rates():
    sys = SystemParams.pair(1.0, beta1=0.9, delta1=0.2, delta2=-0.1)
    rates, modes = collective_eigenmodes(sys)
    cr = collective_rates(sys)
    assert rates == pytest.approx([cr.gamma_plus, cr.gamma_minus], rel=1e-12)
    h = single_excitation_hamiltonian(sys)
    for k in range(2):
        v = modes[:, k]
        lam = np.vdot(v, h @ v)
        assert np.linalg.norm(h @ v - lam * v) < 1e-12
        assert -2 * lam.imag == pytest.approx(rates[k], rel=1e-12)


def test_collective_basis_examples():
    c = to_collective_basis(projector("eg"))
    assert c[1, 1].real == pytest.approx(0.5)
    assert c[2, 2].real == pytest.approx(0.5)
    assert c[1, 2].real == pytest.approx(0.5)
    plus = (ket("eg") + ket("ge")) / math.sqrt(2)
    c = to_collective_basis(np.outer(plus, plus))
    assert c[1, 1].real == pytest.approx(1.0)
    assert np.allclose(c - np.diag(np.diag(c)), 0, atol=1e-15)
    assert np.allclose(to_collective_basis(np.eye(4) / 4), np.eye(4) / 4)
    assert np.allclose(COLLECTIVE_U.conj().T @ COLLECTIVE_U, np.eye(4), atol=1e-15)


def test_collective_basis_roundtrip():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert np.max(np.abs(from_collective_basis(to_collective_basis(a)) - a)) < 1e-14
