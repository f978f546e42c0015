"""Macro/micro decomposition and the moment balance-law residual checks.

The fluid (macro) part of a two-species field lives in the six-dimensional
span of [1,0] sqrt(mu), [0,1] sqrt(mu), [1,1] xi_i sqrt(mu) and
[1,1](|xi|^2 - 3) sqrt(mu).  The continuum basis is orthogonal only in exact
integrals, so the projection is built through the Gram matrix of the sampled
basis under the quadrature inner product; this keeps idempotence and the
coefficient round trip at roundoff level.

Moment functionals here are linear in the field (no conjugation): for one
spatial Fourier mode they are the transforms of real-space moments and must
commute with d/dt.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import TwoSpeciesField, VelocityGrid

__all__ = [
    "MacroState",
    "MomentReport",
    "MacroResidualReport",
    "project_P",
    "theta_lambda",
    "macro_residuals",
    "source_moments",
    "linear_moment",
]


def linear_moment(grid: VelocityGrid, weight: np.ndarray, values: np.ndarray) -> complex:
    """Quadrature moment  sum_l w_l weight_l values_l  (linear, not sesquilinear)."""
    return complex(np.sum(grid.weights * weight * values))


@dataclass
class MacroState:
    """Macro coefficients (a_+, a_-, b, c) of one spatial mode."""

    a_plus: complex
    a_minus: complex
    b: np.ndarray        # (3,) complex
    c: complex

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.a_plus, self.a_minus], self.b, [self.c]])


@dataclass
class MomentReport:
    """High-order moments Theta (3x3) and Lambda (3,) per species [+, -]."""

    theta: np.ndarray     # (2, 3, 3) complex
    lam: np.ndarray       # (2, 3) complex


class _Projector:
    """Gram-orthogonalized projector onto the discrete macro subspace."""

    def __init__(self, grid: VelocityGrid):
        smu = grid.sqrt_mu
        zero = np.zeros_like(smu)
        xi = grid.xi
        basis = [
            np.stack([smu, zero]),
            np.stack([zero, smu]),
        ]
        for i in range(3):
            v = xi[i] * smu
            basis.append(np.stack([v, v]))
        v = (np.sum(xi ** 2, axis=0) - 3.0) * smu
        basis.append(np.stack([v, v]))
        self.basis = np.array(basis)            # (6, 2, n^3) real
        w = grid.weights
        B = self.basis
        self.gram = np.einsum("akl,bkl,l->ab", B, B, w)
        self.gram_inv = np.linalg.inv(self.gram)
        self.grid = grid

    def moments(self, values: np.ndarray) -> np.ndarray:
        return np.einsum("akl,kl,l->a", self.basis, values, self.grid.weights)

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        return self.gram_inv @ self.moments(values)

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("a,akl->kl", coeffs, self.basis)


_PROJECTORS: dict = {}


def _projector(grid: VelocityGrid) -> _Projector:
    proj = _PROJECTORS.get(grid)
    if proj is None:
        proj = _Projector(grid)
        _PROJECTORS[grid] = proj
    return proj


def project_P(f: TwoSpeciesField):
    """Split f into its macro part Pf and micro remainder {I - P} f.

    Returns (MacroState, Pf, micro) with f = Pf + micro exactly and
    <Pf, micro> at roundoff level.
    """
    proj = _projector(f.grid)
    coeffs = proj.coefficients(f.values)
    pf = proj.reconstruct(coeffs)
    micro = f.values - pf
    state = MacroState(a_plus=complex(coeffs[0]), a_minus=complex(coeffs[1]),
                       b=coeffs[2:5].copy(), c=complex(coeffs[5]))
    return state, TwoSpeciesField(pf, f.grid), TwoSpeciesField(micro, f.grid)


def theta_lambda(f: TwoSpeciesField) -> MomentReport:
    """High-order moments Theta_ij = <(xi_i xi_j - 1) sqrt(mu), f_pm> and
    Lambda_i = (1/10) <(|xi|^2 - 5) xi_i sqrt(mu), f_pm>."""
    g = f.grid
    xi = g.xi
    smu = g.sqrt_mu
    r2 = np.sum(xi ** 2, axis=0)
    theta = np.empty((2, 3, 3), dtype=complex)
    lam = np.empty((2, 3), dtype=complex)
    for s in range(2):
        vals = f.values[s]
        for i in range(3):
            for j in range(i, 3):
                m = linear_moment(g, (xi[i] * xi[j] - 1.0) * smu, vals)
                theta[s, i, j] = m
                theta[s, j, i] = m
            lam[s, i] = 0.1 * linear_moment(g, (r2 - 5.0) * xi[i] * smu, vals)
    return MomentReport(theta=theta, lam=lam)


@dataclass
class MacroResidualReport:
    """Residual norms of the five balance-law families over a mode history.

    Each entry maps a law family ('a', 'b', 'c', 'theta', 'lambda') to a
    series of residual magnitudes at the interior frames; max_residual and
    l2_residual aggregate over laws and frames.
    """

    times: np.ndarray
    series: dict
    max_residual: float
    l2_residual: float

    def family_max(self, name: str) -> float:
        return float(np.max(self.series[name]))


def _frame_moments(state, op):
    """All per-frame moments entering the balance laws."""
    g = op.grid
    xi = g.xi
    smu = g.sqrt_mu
    r2 = np.sum(xi ** 2, axis=0)
    f = state.fhat
    macro, pf, micro = project_P(f)
    Lf = op.apply(f)
    out = {
        "a": np.array([macro.a_plus, macro.a_minus]),
        "b": macro.b,
        "c": macro.c,
        "E": state.Ehat,
        "xi_m": np.empty((2, 3), dtype=complex),      # <xi_i smu, m_pm>
        "xixi_m": np.empty((2, 3, 3), dtype=complex),  # <xi_i xi_j smu, m_pm>
        "e_m": np.empty(2, dtype=complex),             # <(|xi|^2-3) smu, m_pm>
        "exi_m": np.empty((2, 3), dtype=complex),      # <(|xi|^2-3) xi_j smu, m_pm>
        "xi_L": np.empty((2, 3), dtype=complex),       # <xi_i smu, (L f)_pm>
        "e_L": np.empty(2, dtype=complex),             # <(|xi|^2-3) smu, (L f)_pm>
    }
    for s in range(2):
        mv = micro.values[s]
        Lv = Lf.values[s]
        for i in range(3):
            out["xi_m"][s, i] = linear_moment(g, xi[i] * smu, mv)
            out["exi_m"][s, i] = linear_moment(g, (r2 - 3.0) * xi[i] * smu, mv)
            out["xi_L"][s, i] = linear_moment(g, xi[i] * smu, Lv)
            for j in range(i, 3):
                m = linear_moment(g, xi[i] * xi[j] * smu, mv)
                out["xixi_m"][s, i, j] = m
                out["xixi_m"][s, j, i] = m
        out["e_m"][s] = linear_moment(g, (r2 - 3.0) * smu, mv)
        out["e_L"][s] = linear_moment(g, (r2 - 3.0) * smu, Lv)
    # Theta/Lambda of the micro part and of r_pm = -i xi.k m_pm - (L f)_pm
    th_m = theta_lambda(micro)
    k = state.k
    transport = (-1j) * (xi[0] * k[0] + xi[1] * k[1] + xi[2] * k[2])
    r_vals = transport * micro.values - Lf.values
    th_r = theta_lambda(TwoSpeciesField(r_vals, g))
    out["theta_m"] = th_m.theta
    out["lam_m"] = th_m.lam
    out["theta_r"] = th_r.theta
    out["lam_r"] = th_r.lam
    return out


def macro_residuals(frames, k, op) -> MacroResidualReport:
    """Residuals of the source-free moment balance laws over a uniform history.

    ``frames`` is a time-ordered sequence of ModeState at uniform spacing; time
    derivatives use centered differences on the interior frames, so the first
    and last frames enter only through the stencil.
    """
    if len(frames) < 3:
        raise ValueError("macro_residuals needs at least 3 uniformly spaced frames")
    times = np.array([s.t for s in frames])
    dts = np.diff(times)
    dt = dts[0]
    if not np.allclose(dts, dt, rtol=1e-8, atol=1e-12):
        raise ValueError("frames are not uniformly sampled")
    k = np.asarray(k, dtype=float)
    moms = [_frame_moments(s, op) for s in frames]
    nt = len(frames) - 2
    res = {
        "a": np.zeros((nt, 2)),
        "b": np.zeros((nt, 2, 3)),
        "c": np.zeros((nt, 2)),
        "theta": np.zeros((nt, 2, 3, 3)),
        "lambda": np.zeros((nt, 2, 3)),
    }
    sgn = np.array([1.0, -1.0])
    for idx in range(1, len(frames) - 1):
        lo, mid, hi = moms[idx - 1], moms[idx], moms[idx + 1]
        ddt = lambda key: (hi[key] - lo[key]) / (2.0 * dt)   # noqa: E731
        t = idx - 1
        kb = k @ mid["b"]
        for s in range(2):
            res["a"][t, s] = abs(ddt("a")[s] + 1j * kb + 1j * (k @ mid["xi_m"][s]))
            res["c"][t, s] = abs(
                ddt("c") + ddt("e_m")[s] / 6.0 + 1j * kb / 3.0
                + 1j * (k @ mid["exi_m"][s]) / 6.0 + mid["e_L"][s] / 6.0
            )
            for i in range(3):
                res["b"][t, s, i] = abs(
                    ddt("b")[i] + ddt("xi_m")[s, i]
                    + 1j * k[i] * (mid["a"][s] + 2.0 * mid["c"])
                    - sgn[s] * mid["E"][i]
                    + 1j * (k @ mid["xixi_m"][s, i])
                    + mid["xi_L"][s, i]
                )
                res["lambda"][t, s, i] = abs(
                    ddt("lam_m")[s, i] + 1j * k[i] * mid["c"] - mid["lam_r"][s, i]
                )
                for j in range(3):
                    if i == j:
                        r = (ddt("theta_m")[s, i, i] + 2.0 * ddt("c")
                             + 2j * k[i] * mid["b"][i] - mid["theta_r"][s, i, i])
                    else:
                        r = (ddt("theta_m")[s, i, j]
                             + 1j * (k[j] * mid["b"][i] + k[i] * mid["b"][j])
                             + 1j * (k @ mid["xi_m"][s])
                             - mid["theta_r"][s, i, j])
                    res["theta"][t, s, i, j] = abs(r)
    series = {name: arr.reshape(nt, -1).max(axis=1) for name, arr in res.items()}
    allres = np.concatenate([arr.ravel() for arr in res.values()])
    return MacroResidualReport(
        times=times[1:-1],
        series=series,
        max_residual=float(allres.max()),
        l2_residual=float(np.sqrt(np.mean(allres ** 2))),
    )


@dataclass
class SourceMomentReport:
    """Both sides of the three displayed source-moment identities, per species."""

    mass: np.ndarray            # (2,) <smu, S_pm>, identity value 0
    xi_lhs: np.ndarray          # (2, 3)
    xi_rhs: np.ndarray          # (2, 3)
    energy_lhs: np.ndarray      # (2,)
    energy_rhs: np.ndarray      # (2,)


def source_moments(f: TwoSpeciesField, E, B, params, *, budget=None) -> SourceMomentReport:
    """Moments of the nonlinear source S_pm against sqrt(mu), xi sqrt(mu), (|xi|^2-3) sqrt(mu)/6.

    S_pm = +- (1/2) E.xi f_pm -+ (E + xi x B) . grad f_pm + Gamma_pm(f, f),
    evaluated pointwise in x for one mode's amplitudes.  Returns the displayed
    left- and right-hand sides; agreement is a quadrature/integration-by-parts
    property the caller asserts.

    The velocity gradient inside S uses the Maxwellian-adapted differences
    sqrt(mu) D (. / sqrt(mu)) - (xi/2), which are exact on fields of the form
    (quadratic polynomial) x sqrt(mu); on that class the displayed identities
    hold to quadrature precision rather than to finite-difference order.
    """
    from .collision import gamma_bilinear

    g = f.grid
    xi = g.xi
    smu = g.sqrt_mu
    r2 = np.sum(xi ** 2, axis=0)
    E = np.asarray(E, dtype=complex)
    B = np.asarray(B, dtype=complex)
    gam = gamma_bilinear(f, f, params, budget=budget)
    macro, pf, micro = project_P(f)
    D = g.gradient_matrices
    Exi = E[0] * xi[0] + E[1] * xi[1] + E[2] * xi[2]
    xiB = np.stack([xi[1] * B[2] - xi[2] * B[1],
                    xi[2] * B[0] - xi[0] * B[2],
                    xi[0] * B[1] - xi[1] * B[0]])
    force = np.stack([E[i] + xiB[i] for i in range(3)])
    sgn = np.array([1.0, -1.0])
    mass = np.empty(2, dtype=complex)
    xi_lhs = np.empty((2, 3), dtype=complex)
    xi_rhs = np.empty((2, 3), dtype=complex)
    e_lhs = np.empty(2, dtype=complex)
    e_rhs = np.empty(2, dtype=complex)
    a_pm = np.array([macro.a_plus, macro.a_minus])
    for s in range(2):
        ratio = f.values[s] / smu
        grad = np.stack([smu * (D[i] @ ratio) - 0.5 * xi[i] * f.values[s]
                         for i in range(3)])
        S = (sgn[s] * 0.5 * Exi * f.values[s]
             - sgn[s] * (force[0] * grad[0] + force[1] * grad[1] + force[2] * grad[2])
             + gam.values[s])
        mass[s] = linear_moment(g, smu, S)
        micro_xi = np.array([linear_moment(g, xi[i] * smu, micro.values[s]) for i in range(3)])
        gam_xi = np.array([linear_moment(g, xi[i] * smu, gam.values[s]) for i in range(3)])
        for i in range(3):
            xi_lhs[s, i] = linear_moment(g, xi[i] * smu, S)
        xi_rhs[s] = (sgn[s] * (E * a_pm[s] + np.cross(macro.b, B) + np.cross(micro_xi, B))
                     + gam_xi)
        e_lhs[s] = linear_moment(g, (r2 - 3.0) * smu, S) / 6.0
        e_rhs[s] = (sgn[s] * (macro.b @ E) / 3.0
                    + sgn[s] * (micro_xi @ E) / 3.0
                    + linear_moment(g, (r2 - 3.0) * smu, gam.values[s]) / 6.0)
    return SourceMomentReport(mass=mass, xi_lhs=xi_lhs, xi_rhs=xi_rhs,
                              energy_lhs=e_lhs, energy_rhs=e_rhs)
