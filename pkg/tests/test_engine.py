import hashlib
import warnings

import numpy as np
import pytest

from qdelay.engine import (
    EvolutionState,
    Recorder,
    TruncationBudgetExceeded,
    initial_state,
    run,
    step,
)
from qdelay.model import ExperimentConfig, StepUnitary, build_step_unitary
from qdelay.mps import SiteLabel
from qdelay.observables import system_populations
from qdelay.oracle import brute_force_evolve, chain_state_vector, integrate_single_atom_bloch


def cfg_of(**kw):
    base = dict(setup="mirror", tau=0.3, dt=0.1, svd_cutoff=0.0)
    base.update(kw)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ExperimentConfig(**base)


def test_dark_state_is_stationary():
    cfg = cfg_of(t_max=1.0)
    state, _ = run(cfg, [])
    assert all(b == 1 for b in state.chain.bond_dims)
    assert system_populations(state.chain)[0] == 0.0


def test_single_emission_step_against_dense():
    cfg = cfg_of(gamma_L=0.4, gamma_R=0.6, initial_system="e", d_ph=2)
    state = initial_state(cfg)
    u = build_step_unitary(cfg)
    step(state, u)
    chain = state.chain
    n = np.diag([0, 1, 2])
    p_new = chain.local_expectation(chain.position_of_bin(0), n).real
    p_old = chain.local_expectation(chain.position_of_bin(-3), n).real
    assert p_new == pytest.approx(cfg.gamma_R * cfg.dt, rel=2 * cfg.dt)
    assert p_old == pytest.approx(cfg.gamma_L * cfg.dt, rel=2 * cfg.dt)
    dense = brute_force_evolve(cfg, 1)
    assert abs(np.vdot(dense, chain_state_vector(state))) ** 2 == pytest.approx(1.0, abs=1e-12)


def test_identity_unitary_keeps_product_state():
    cfg = cfg_of(initial_system="+")
    state = initial_state(cfg)
    dim = cfg.system_dim * cfg.bin_dim**2
    u = StepUnitary(np.eye(dim, dtype=complex), cfg.system_dim, cfg.bin_dim)
    for _ in range(3):
        step(state, u)
    chain = state.chain
    assert all(b == 1 for b in chain.bond_dims)
    labels = [lab for lab in chain.labels]
    assert labels[state.system_position].is_system
    assert [lab.bin_index for lab in labels if not lab.is_system] == list(range(-3, 4))
    s = chain.tensors[state.system_position].reshape(-1)
    assert abs(np.vdot(s, cfg.system_state())) == pytest.approx(1.0)


def test_t_max_zero():
    cfg = cfg_of(t_max=0.0)
    state, series = run(cfg)
    assert len(series) == 0 and state.k == 0


def test_missing_vacuum_bin():
    cfg = cfg_of()
    state = initial_state(cfg)
    state.chain.labels[-1] = SiteLabel.time_bin(99)
    with pytest.raises(RuntimeError, match="missing vacuum input bin"):
        step(state, build_step_unitary(cfg))


def test_ell_one_has_no_routing_swaps(monkeypatch):
    cfg = cfg_of(tau=0.1, omega1=0.5)
    state = initial_state(cfg)
    calls = []
    orig = type(state.chain).swap
    monkeypatch.setattr(type(state.chain), "swap", lambda self, i: calls.append(i) or orig(self, i))
    step(state, build_step_unitary(cfg))
    assert calls == [1]  # only the final swap of the system past the new bin


def digest(arr):
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def test_output_bins_frozen():
    cfg = cfg_of(omega1=1.0, phi=0.5)
    state = initial_state(cfg)
    u = build_step_unitary(cfg)
    seen = {}
    for _ in range(12):
        step(state, u)
        for p in range(-cfg.ell, state.k - cfg.ell):
            h = digest(state.chain.tensors[state.chain.position_of_bin(p)])
            assert seen.setdefault(p, h) == h


def test_pre_delay_populations_independent_of_ell():
    series = []
    for tau in (0.5, 1.0):
        cfg = cfg_of(
            setup="two_atoms", tau=tau, omega1=1.5, omega2_phase=-np.pi / 2,
            phi=np.pi / 2, d_ph=1, t_max=0.4, d_max=256,
        )
        rec = Recorder("pe", lambda s: system_populations(s.chain))
        _, ser = run(cfg, [rec])
        series.append(np.array(ser.values("pe")))
    np.testing.assert_allclose(series[0], series[1], atol=1e-10)


def test_mirror_feedback_reduces_excitation_after_roundtrip():
    cfg = cfg_of(tau=2.0, omega1=1.5, phi=0.0, d_ph=1, d_max=32, t_max=4.0, svd_cutoff=1e-10)
    rec = Recorder("pe", lambda s: system_populations(s.chain)[0])
    _, ser = run(cfg, [rec])
    t = ser.times("pe")
    pe = np.array(ser.values("pe"))
    ref = integrate_single_atom_bloch(cfg.gamma, 1.5, 0.0, np.concatenate([[0], t]))[1:, 1, 1].real
    before = t < cfg.tau
    assert np.max(np.abs(pe[before] - ref[before])) < 3 * cfg.dt
    late = t > cfg.tau + 1.0
    assert np.mean(pe[late]) < np.mean(ref[late])


def test_budget_abort():
    cfg = cfg_of(omega1=1.5, tau=0.5, d_max=1, trunc_budget=1e-6, t_max=2.0)
    with pytest.raises(TruncationBudgetExceeded, match="increase d_max"):
        run(cfg, [])


def test_deterministic():
    cfg = cfg_of(omega1=1.2, phi=1.0, t_max=1.0)
    _, a = run(cfg)
    _, b = run(cfg)
    assert a.records["timeseries"] == b.records["timeseries"]


def test_norm_bounded_by_discarded_weight():
    cfg = cfg_of(omega1=1.5, tau=0.6, d_max=4, trunc_budget=1.0, t_max=3.0, svd_cutoff=1e-8)
    _, ser = run(cfg)
    recs = ser.values("timeseries")
    assert recs[-1]["disc_weight"] > 0
    for r in recs:
        assert 1 - r["norm"] <= r["disc_weight"] + 1e-8


def test_record_stride():
    cfg = cfg_of(omega1=0.5, t_max=1.0, record_stride=3)
    _, ser = run(cfg)
    np.testing.assert_allclose(ser.times("timeseries"), [0.3, 0.6, 0.9])


def test_state_helpers():
    st = EvolutionState(chain=initial_state(cfg_of()).chain, ell=3, k=2)
    assert st.system_position == 5
    assert st.delay_window == [4, 3, 2]
    assert st.bin_position(1) == 4
