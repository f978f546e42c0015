import numpy as np
import pytest
import scipy.linalg

from vmlandau.checkpoint import CheckpointWriter, read_checkpoint
from vmlandau.grid import TwoSpeciesField, build_grid, inner_product
from vmlandau.macro import macro_residuals, project_P
from vmlandau.mode import (ModeState, StepperConfig, energy_identity_check,
                           envelope_fit, integrate_mode, mode_energy_report,
                           mode_rhs, rho_frequency)

from conftest import random_field


def _zero_state(grid, k):
    return ModeState(np.asarray(k, dtype=float), TwoSpeciesField.zero(grid),
                     np.zeros(3, dtype=complex), np.zeros(3, dtype=complex), 0.0)


def _neutral_macro_state(grid, k, b=(0.2, 0.0, 0.4), c=0.3, a=0.5):
    smu = grid.sqrt_mu
    xi = grid.xi
    r2 = np.sum(xi ** 2, axis=0)
    shared = b[0] * xi[0] + b[1] * xi[1] + b[2] * xi[2] + c * (r2 - 3.0)
    f = TwoSpeciesField.from_species(grid, (a + shared) * smu, (a + shared) * smu)
    return ModeState(np.asarray(k, dtype=float), f, np.zeros(3, dtype=complex),
                     np.zeros(3, dtype=complex), 0.0)


def _micro_state(grid, k, amp=1.0):
    xi = grid.xi
    smu = grid.sqrt_mu
    raw = TwoSpeciesField.from_species(
        grid, amp * (xi[0] * xi[1] + 0.4 * xi[2]) * smu,
        amp * (xi[1] * xi[2] - 0.3 * xi[0]) * smu)
    _, _, micro = project_P(raw)
    return ModeState(np.asarray(k, dtype=float), micro, np.zeros(3, dtype=complex),
                     np.zeros(3, dtype=complex), 0.0)


class TestRhoFrequency:
    def test_unit_k(self):
        assert rho_frequency([1.0, 0, 0]) == pytest.approx(0.25, rel=1e-15)

    def test_zero_k(self):
        assert rho_frequency([0.0, 0, 0]) == 0.0

    def test_decays_at_both_ends(self):
        rhos = [rho_frequency([0.0, 0.0, kz]) for kz in (0.05, 1.0, 8.0)]
        assert rhos[1] > rhos[0] and rhos[1] > rhos[2]


class TestModeRhs:
    def test_neutral_null_state_is_stationary(self, op11, grid11):
        st = _neutral_macro_state(grid11, [0.0, 0.0, 0.0])
        df, dE, dB = mode_rhs(st, op11)
        assert df.norm() < 1e-12 * st.fhat.norm()
        np.testing.assert_allclose(dE, 0.0, atol=1e-13)
        np.testing.assert_allclose(dB, 0.0, atol=1e-13)

    def test_vacuum_maxwell_cross_products(self, op11, grid11):
        st = ModeState(np.array([1.0, 0, 0]), TwoSpeciesField.zero(grid11),
                       np.array([0, 1.0, 0], dtype=complex),
                       np.array([0, 0, 1.0], dtype=complex), 0.0)
        df, dE, dB = mode_rhs(st, op11)
        assert df.norm() > 0.0   # E couples into the kinetic equation
        np.testing.assert_allclose(dE, 1j * np.array([0, -1.0, 0]), atol=1e-14)
        np.testing.assert_allclose(dB, -1j * np.array([0, 0, 1.0]), atol=1e-14)

    def test_noncollisional_part_is_energy_skew(self, op11, grid11):
        rng = np.random.default_rng(0)
        for _ in range(3):
            f = random_field(grid11, rng)
            st = ModeState(np.array([0.3, -0.7, 0.5]), f,
                           rng.standard_normal(3) + 1j * rng.standard_normal(3),
                           rng.standard_normal(3) + 1j * rng.standard_normal(3), 0.0)
            df, dE, dB = mode_rhs(st, op11)
            skew = df + op11.apply(st.fhat)   # remove the collisional part
            pairing = (inner_product(skew, st.fhat)
                       + np.sum(dE * np.conj(st.Ehat)) + np.sum(dB * np.conj(st.Bhat)))
            scale = (st.fhat.norm() ** 2 + np.sum(np.abs(st.Ehat) ** 2)
                     + np.sum(np.abs(st.Bhat) ** 2))
            assert abs(pairing.real) < 1e-12 * scale


class TestIntegrateMode:
    def test_zero_state_stays_zero(self, op11, grid11):
        h = integrate_mode(_zero_state(grid11, [0, 0, 1.0]),
                           StepperConfig(dt=0.1), 1.0, op11)
        assert np.all(h.energy == 0.0)
        assert h.frames[-1].fhat.norm() == 0.0

    def test_vacuum_maxwell_conservation_and_rotation(self, op11, grid11):
        # decoupled Maxwell subsystem: the midpoint step conserves |E|^2+|B|^2
        # exactly and follows the closed-form rotation at second order
        k = np.array([0.0, 0.0, 1.0])
        E0 = np.array([1.0, 0.5j, 0.0])
        B0 = np.cross(k, E0)
        st = ModeState(k, TwoSpeciesField.zero(grid11), E0, B0, 0.0)
        T, dt = 5.0, 0.01
        h = integrate_mode(st, StepperConfig(dt=dt, lin_tol=1e-13), T, op11,
                           couple_kinetic=False)
        drift = np.abs(h.energy - h.energy[0]).max()
        assert drift < 1e-10 * h.energy[0] * T
        # closed-form rotation oracle: u' = A u on (E1,E2,B1,B2)
        A = np.zeros((4, 4), dtype=complex)
        kz = k[2]
        # dE = i k x B; dB = -i k x E with all z-components zero
        A[0, 3] = -1j * kz * -1.0   # dE1 = i (k x B)_1 = i(-kz B2)... build explicitly
        A = np.array([[0, 0, 0, -1j * kz],
                      [0, 0, 1j * kz, 0],
                      [0, -1j * kz, 0, 0],
                      [1j * kz, 0, 0, 0]], dtype=complex)
        u0 = np.array([E0[0], E0[1], B0[0], B0[1]])
        exact = scipy.linalg.expm(A * T) @ u0
        got = np.concatenate([h.frames[-1].Ehat[:2], h.frames[-1].Bhat[:2]])
        assert np.abs(got - exact).max() < 5.0 * dt ** 2 * T * np.abs(u0).max()

    def test_micro_only_data_monotone_strict_decay(self, op11, grid11):
        st = _micro_state(grid11, [0.0, 0.0, 0.0])
        h = integrate_mode(st, StepperConfig(dt=0.05, lin_tol=1e-11), 2.0, op11)
        assert np.all(np.diff(h.energy) < 0.0)

    def test_energy_identity_and_order(self, op11, grid11):
        from vmlandau.lab import ExperimentConfig, init_data
        cfg = ExperimentConfig(R=grid11.R, n=grid11.n, family="mixed", shells=(0.5,),
                               outdir="/tmp/unused")
        st = init_data(cfg, [0.0, 0.0, 0.5], grid11)
        residuals = {}
        for dt in (0.08, 0.04):
            h = integrate_mode(st, StepperConfig(dt=dt, lin_tol=1e-12), 4.0, op11)
            rep = energy_identity_check(h)
            residuals[dt] = rep.relative_cumulative
            assert rep.max_step_increase <= 1e-8 * rep.initial_energy
        # imex-midpoint is second order: halving dt cuts the residual ~4x
        assert residuals[0.04] < residuals[0.08] / 3.0

    def test_imex_euler_first_order(self, op11, grid11):
        from vmlandau.lab import ExperimentConfig, init_data
        cfg = ExperimentConfig(R=grid11.R, n=grid11.n, family="mixed", shells=(0.5,),
                               outdir="/tmp/unused")
        st = init_data(cfg, [0.0, 0.0, 0.5], grid11)
        residuals = {}
        for dt in (0.04, 0.02):
            h = integrate_mode(st, StepperConfig(dt=dt, scheme="imex-euler",
                                                 lin_tol=1e-12), 2.0, op11)
            rep = energy_identity_check(h)
            residuals[dt] = rep.relative_cumulative
        assert residuals[0.02] < residuals[0.04] / 1.5

    def test_gauss_residual_propagation(self, op11, grid11):
        from vmlandau.lab import ExperimentConfig, init_data
        cfg = ExperimentConfig(R=grid11.R, n=grid11.n, family="mixed", shells=(0.5,),
                               outdir="/tmp/unused")
        st = init_data(cfg, [0.0, 0.0, 0.5], grid11)
        T = 5.0
        h = integrate_mode(st, StepperConfig(dt=0.05, lin_tol=1e-12), T, op11)
        assert h.gauss_E.max() <= h.gauss_E[0] + 1e-8 * T
        assert h.gauss_B.max() <= 1e-12

    def test_k_zero_rejects_charged_data(self, op11, grid11):
        smu = grid11.sqrt_mu
        f = TwoSpeciesField.from_species(grid11, smu, np.zeros_like(smu))
        st = ModeState(np.zeros(3), f, np.zeros(3, dtype=complex),
                       np.zeros(3, dtype=complex), 0.0)
        with pytest.raises(ValueError):
            integrate_mode(st, StepperConfig(dt=0.1), 1.0, op11)

    def test_gauss_violating_data_rejected(self, op11, grid11):
        st = _zero_state(grid11, [0.0, 0.0, 1.0])
        st.Ehat = np.array([0.0, 0.0, 1.0], dtype=complex)  # i k.E != 0, no charge
        with pytest.raises(ValueError):
            integrate_mode(st, StepperConfig(dt=0.1, constraint_tol=1e-8), 1.0, op11)


class TestMacroResidualConvergence:
    def test_balance_laws_converge_first_order(self, op11, grid11):
        from vmlandau.lab import ExperimentConfig, init_data
        cfg = ExperimentConfig(R=grid11.R, n=grid11.n, family="mixed", shells=(0.5,),
                               outdir="/tmp/unused")
        k = np.array([0.0, 0.0, 0.5])
        st = init_data(cfg, k, grid11)
        res = {}
        for dt in (0.08, 0.04):
            h = integrate_mode(st, StepperConfig(dt=dt, lin_tol=1e-12), 1.6, op11,
                               sample_interval=dt)
            res[dt] = macro_residuals(h.frames, k, op11)
        for law in ("a", "b", "c", "theta", "lambda"):
            coarse = res[0.08].family_max(law)
            fine = res[0.04].family_max(law)
            floor = 1e-9
            if coarse > floor:
                assert fine < coarse / 1.8, law


class TestModeEnergyReport:
    def test_rho_attached_and_macro_only_micro_terms_vanish(self, op11, grid11):
        st = _neutral_macro_state(grid11, [0.0, 0.0, 1.0])
        h = integrate_mode(st, StepperConfig(dt=0.1, lin_tol=1e-11), 0.2, op11,
                           sample_interval=0.1)
        rep = mode_energy_report(h, 0.0, op11)
        assert rep.rho == pytest.approx(0.25, rel=1e-12)
        assert rep.micro_D[0] <= 1e-10 * rep.f_l2sq[0]

    def test_weighted_columns_present(self, op11, grid11):
        st = _micro_state(grid11, [0.0, 0.0, 0.5])
        h = integrate_mode(st, StepperConfig(dt=0.1, lin_tol=1e-10), 0.3, op11,
                           sample_interval=0.1)
        rep = mode_energy_report(h, 2.0, op11)
        assert rep.ell == 2.0
        assert np.all(rep.f_weighted_l2sq >= 0.0)
        assert np.all(rep.m_tilde >= rep.em_sq)


class TestEnvelopeFit:
    def _synthetic_report(self, eps, J, k=(1.0, 0, 0), T=400.0):
        t = np.linspace(0.0, T, 400)
        rho = rho_frequency(k)
        M = (1.0 + eps * rho * t) ** (-J)
        from vmlandau.mode import ModeEnergyReport
        z = np.zeros_like(t)
        return ModeEnergyReport(k=np.asarray(k, dtype=float), rho=rho, times=t,
                                f_l2sq=M, em_sq=z, micro_D=z, micro_D_weighted=z,
                                f_weighted_l2sq=M, macro_abc=z, a_diff=z,
                                E_term=z, B_term=z, gauss_E=z, gauss_B=z)

    def test_recovers_own_model(self):
        rep = self._synthetic_report(eps=0.1, J=2.0)
        fit = envelope_fit(rep)
        assert fit.conclusive
        assert fit.eps == pytest.approx(0.1, abs=1e-6)
        assert fit.J == pytest.approx(2.0, abs=1e-6)

    def test_constant_series_inconclusive(self):
        rep = self._synthetic_report(eps=0.0, J=0.0)
        rep.f_l2sq = np.ones_like(rep.times)
        fit = envelope_fit(rep)
        assert not fit.conclusive


class TestCheckpoint:
    def test_bit_exact_round_trip(self, grid11, tmp_path):
        rng = np.random.default_rng(1)
        path = tmp_path / "mode.ckpt"
        states = []
        with CheckpointWriter(path, grid11, -3.0, 1.0) as w:
            for t in (0.0, 1.0):
                st = ModeState(np.array([0.0, 0.5, 0.25]),
                               random_field(grid11, rng),
                               rng.standard_normal(3) + 1j * rng.standard_normal(3),
                               rng.standard_normal(3) + 1j * rng.standard_normal(3), t)
                w.append(st)
                states.append(st)
        ck = read_checkpoint(path, grid11)
        assert ck.gamma == -3.0 and ck.n == grid11.n
        assert len(ck.states) == 2
        for orig, back in zip(states, ck.states):
            assert back.t == orig.t
            assert np.array_equal(back.k, orig.k)
            assert np.array_equal(back.fhat.values, orig.fhat.values)
            assert np.array_equal(back.Ehat, orig.Ehat)
            assert np.array_equal(back.Bhat, orig.Bhat)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(ValueError):
            read_checkpoint(p)

    def test_restart_reproduces_uninterrupted_run(self, op11, grid11, tmp_path):
        from vmlandau.lab import ExperimentConfig, init_data
        cfg = ExperimentConfig(R=grid11.R, n=grid11.n, family="mixed", shells=(0.5,),
                               outdir="/tmp/unused")
        st = init_data(cfg, [0.0, 0.0, 0.5], grid11)
        scfg = StepperConfig(dt=0.05, lin_tol=1e-10)
        full = integrate_mode(st, scfg, 2.0, op11)
        # interrupted: stop at t=1, checkpoint, restore, continue to t=2
        path = tmp_path / "restart.ckpt"
        with CheckpointWriter(path, grid11, -3.0, 1.0) as w:
            integrate_mode(st, scfg, 1.0, op11, checkpoint=w)
        restored = read_checkpoint(path, grid11).states[-1]
        assert restored.t == pytest.approx(1.0)
        resumed = integrate_mode(restored, scfg, 1.0, op11)
        a = full.frames[-1]
        b = resumed.frames[-1]
        diff = (a.fhat - b.fhat).norm()
        scale = max(a.fhat.norm(), 1e-300)
        assert diff <= 1e-12 * scale
        np.testing.assert_allclose(b.Ehat, a.Ehat, rtol=0, atol=1e-12 * scale)
        np.testing.assert_allclose(b.Bhat, a.Bhat, rtol=0, atol=1e-12 * scale)
