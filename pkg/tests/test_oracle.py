import warnings

import numpy as np
import pytest

from qdelay.model import PROJ_E, ExperimentConfig
from qdelay.oracle import (
    bloch_steady_state,
    brute_force_evolve,
    effective_mirror_rates,
    integrate_single_atom_bloch,
    integrate_two_atom_master_eq,
    lindblad,
    mirror_effective_bloch,
    rk4_integrate,
    two_atom_markov_channels,
)


def cfg_of(**kw):
    base = dict(setup="two_atoms", tau=0.1, dt=0.1, d_ph=1)
    base.update(kw)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ExperimentConfig(**base)


def partial_trace_atom1(rho):
    return np.einsum("ajbj->ab", rho.reshape(2, 2, 2, 2))


def partial_trace_atom2(rho):
    return np.einsum("jajb->ab", rho.reshape(2, 2, 2, 2))


def assert_density_matrix(rho, tol=1e-9):
    np.testing.assert_allclose(rho, rho.conj().T, atol=1e-10)
    assert np.trace(rho).real == pytest.approx(1.0, abs=tol)
    assert np.linalg.eigvalsh(rho).min() > -1e-9


# ---------------------------------------------------------------- two-atom master equation


def test_master_eq_frozen_without_dynamics():
    cfg = cfg_of(gamma_L=0, gamma_R=0, initial_system="+e")
    rhos = integrate_two_atom_master_eq(cfg, np.linspace(0, 2, 5))
    for r in rhos:
        np.testing.assert_allclose(r, rhos[0], atol=1e-14)


def test_superradiant_decay():
    psi = np.array([0, 1, 1, 0]) / np.sqrt(2)
    cfg = cfg_of(initial_system=psi.tolist(), phi=0.0)
    t = np.linspace(0, 3, 31)
    rhos = integrate_two_atom_master_eq(cfg, t)
    pop = np.real(np.einsum("i,tij,j->t", psi, rhos, psi))
    # analytic: the symmetric state decays at 2 gamma (gamma = gamma_L + gamma_R = 1)
    np.testing.assert_allclose(pop, np.exp(-2 * cfg.gamma * t), atol=1e-9)
    for r in rhos:
        assert_density_matrix(r)


def test_subradiant_state_at_phi_zero_is_dark():
    psi = np.array([0, 1, -1, 0]) / np.sqrt(2)
    cfg = cfg_of(initial_system=psi.tolist(), phi=0.0)
    rhos = integrate_two_atom_master_eq(cfg, [0.0, 3.0])
    assert np.real(psi @ rhos[-1] @ psi) == pytest.approx(1.0, abs=1e-9)


def test_cascaded_limit_free_atom_is_bloch():
    # with gamma_L = 0 only the R channel remains, flowing from atom 2 to atom 1
    cfg = cfg_of(gamma_L=0.0, gamma_R=1.0, omega1=1.2, omega2=0.8, delta2=0.3, phi=0.7)
    t = np.linspace(0, 5, 26)
    rhos = integrate_two_atom_master_eq(cfg, t)
    ref = integrate_single_atom_bloch(1.0, 0.8, 0.3, t, step=cfg.dt / 10)
    for r, b in zip(rhos, ref):
        np.testing.assert_allclose(partial_trace_atom2(r), b, atol=1e-9)
        assert_density_matrix(r)


def test_phi_half_pi_leaves_only_coherent_exchange(rng):
    # gamma_L = gamma_R, phi = pi/2: dissipative cross terms (~cos phi) cancel, while a
    # coherent exchange -gamma_L sin(phi) (c1^+ c2 + h.c.) remains
    cfg = cfg_of(omega1=1.0, omega2=0.5, omega2_phase=0.4, phi=np.pi / 2)
    h, jumps = two_atom_markov_channels(cfg)
    c1 = np.kron([[0, 1], [0, 0]], np.eye(2))
    c2 = np.kron(np.eye(2), [[0, 1], [0, 0]])
    from qdelay.model import build_system_hamiltonian

    h_ref = build_system_hamiltonian(cfg) - cfg.gamma_L * (c1.conj().T @ c2 + c2.conj().T @ c1)
    ref = lindblad(h_ref, [np.sqrt(cfg.gamma) * c1, np.sqrt(cfg.gamma) * c2])
    ours = lindblad(h, jumps)
    for _ in range(3):
        m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = m @ m.conj().T
        rho /= np.trace(rho)
        np.testing.assert_allclose(ours(rho), ref(rho), atol=1e-13)


def test_master_eq_step_too_large():
    with pytest.raises(ValueError, match="exceeds dt/10"):
        integrate_two_atom_master_eq(cfg_of(), [0, 1], step=0.05)


def test_master_eq_trace_preserved():
    cfg = cfg_of(omega1=1.5, omega2_phase=-np.pi / 2, phi=np.pi / 2, chi=0.3)
    for r in integrate_two_atom_master_eq(cfg, np.linspace(0, 10, 11)):
        assert_density_matrix(r)


def test_rk4_fourth_order_convergence():
    h = np.array([[0.3, 0.5], [0.5, -0.2]], dtype=complex)
    rhs = lindblad(h, [0.7 * np.array([[0, 1], [0, 0]], dtype=complex)])
    rho0 = np.array([[0.2, 0.1], [0.1, 0.8]], dtype=complex)
    exact = rk4_integrate(rhs, rho0, [0, 2.0], 1e-4)[-1]
    e1 = np.abs(rk4_integrate(rhs, rho0, [0, 2.0], 0.2)[-1] - exact).max()
    e2 = np.abs(rk4_integrate(rhs, rho0, [0, 2.0], 0.1)[-1] - exact).max()
    assert e1 / e2 >= 8


# ---------------------------------------------------------------- single atom


def test_bloch_free_decay():
    t = np.linspace(0, 4, 9)
    rhos = integrate_single_atom_bloch(0.8, 0.0, 0.0, t, rho0=np.diag([0, 1]).astype(complex))
    np.testing.assert_allclose(rhos[:, 1, 1].real, np.exp(-0.8 * t), atol=1e-8)


def test_bloch_rabi():
    t = np.linspace(0, 6, 13)
    rhos = integrate_single_atom_bloch(0.0, 1.3, 0.0, t)
    np.testing.assert_allclose(rhos[:, 1, 1].real, np.sin(1.3 * t / 2) ** 2, atol=1e-8)


@pytest.mark.parametrize("omega,delta", [(1.5, 0.0), (0.7, 0.4), (2.0 * np.exp(0.3j), -0.5)])
def test_bloch_steady_state_long_time(omega, delta):
    ss = bloch_steady_state(1.0, omega, delta)
    pe = (abs(omega) ** 2 / 4) / (delta**2 + 0.25 + abs(omega) ** 2 / 2)
    assert ss[1, 1].real == pytest.approx(pe, abs=1e-14)
    late = integrate_single_atom_bloch(1.0, omega, delta, [0, 60.0])[-1]
    np.testing.assert_allclose(late, ss, atol=1e-9)


# ---------------------------------------------------------------- mirror effective limit


def mirror(**kw):
    base = dict(setup="mirror", tau=0.05, dt=0.05, omega1=1.0)
    base.update(kw)
    return ExperimentConfig(**base)


def test_effective_rates_phi_zero():
    assert effective_mirror_rates(mirror(phi=0.0))[0] == pytest.approx(2 * 1.0)


def test_effective_rates_dark_at_pi():
    assert effective_mirror_rates(mirror(phi=np.pi))[0] == pytest.approx(0.0, abs=1e-15)


def test_effective_detuning_phi_half_pi():
    assert effective_mirror_rates(mirror(phi=np.pi / 2))[1] == pytest.approx(-1.0 / 2)


def test_mirror_effective_bloch_rejects_asymmetric():
    with pytest.raises(ValueError, match="gamma_L == gamma_R"):
        mirror_effective_bloch(mirror(gamma_L=0.3, gamma_R=0.7))


def test_mirror_effective_bloch_state():
    rho = mirror_effective_bloch(mirror(phi=0.0, omega1=1.0))
    assert_density_matrix(rho)
    # gamma_eff = 2: p_e = (1/4) / (1 + 1/2)
    assert rho[1, 1].real == pytest.approx(0.25 / 1.5)


# ---------------------------------------------------------------- dense evolver


def test_brute_force_ground_stationary():
    cfg = cfg_of(setup="mirror", d_ph=2, tau=0.2)
    psi = brute_force_evolve(cfg, 4)
    assert psi[0] == pytest.approx(1.0)
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)


def test_brute_force_budget():
    with pytest.raises(ValueError, match="exceeds budget"):
        brute_force_evolve(cfg_of(setup="mirror", d_ph=2, tau=0.5), 10)


def test_brute_force_conserves_excitations():
    cfg = cfg_of(initial_system="e+", phi=0.4, tau=0.2)
    n_steps = 4
    psi = brute_force_evolve(cfg, n_steps)
    n_bins = n_steps + cfg.ell
    psi = psi.reshape((2, 2) + (4,) * n_bins)
    # photons per bin: (L, R) each 0 or 1
    per_bin = np.array([0, 1, 1, 2])
    total = np.zeros(psi.shape, dtype=int)
    total += np.arange(2).reshape((2, 1) + (1,) * n_bins)
    total += np.arange(2).reshape((1, 2) + (1,) * n_bins)
    for b in range(n_bins):
        shape = [1, 1] + [1] * n_bins
        shape[2 + b] = 4
        total += per_bin.reshape(shape)
    weights = np.abs(psi) ** 2
    # initial state has one excitation with prob 1/2 and two with prob 1/2
    assert weights[total == 1].sum() == pytest.approx(0.5, abs=1e-12)
    assert weights[total == 2].sum() == pytest.approx(0.5, abs=1e-12)
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)


def test_excited_population_helper():
    assert np.trace(PROJ_E @ bloch_steady_state(1.0, 0.0, 0.0)) == 0
