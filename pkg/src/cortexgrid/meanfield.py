"""Mean-field companion of the network model.

Implements the diffusion-approximation gain function (first-passage-time
rate of an LIF neuron under white-noise input), the input moments implied
by a preset's connectivity, nullclines in the foreground (rate, fatigue)
plane, fixed points with stability, and trajectory integration of the
population rate equations

    d nu_i / dt = (phi_i(nu, c) - nu_i) / tau_i
    d c_i  / dt = -c_i / tau_c + alpha_c * nu_i / 1000

for i in (F, B, I); inhibitory populations carry no fatigue.  Rates are
Hz externally and per-ms inside the moment formulas; the conversions are
confined to :func:`input_moments`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, fsolve
from scipy.special import erfcx

from .model import NeuronParams, PopulationKind, StatePreset, preset as get_preset, scaled_counts

_SQRT_PI = np.sqrt(np.pi)

# 200-point Gauss-Legendre rule; agrees with adaptive quadrature to ~1e-12
# over the bound ranges this model visits (checked in tests against quad)
_GL_X, _GL_W = np.polynomial.legendre.leggauss(200)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W

_XT_SILENT = 25.0   # exp(x^2) overflows float64 shortly above this


def _fpt_integrand(u):
    # exp(u^2) * (1 + erf(u)) == erfcx(-u), stable for all u
    return erfcx(-u)


def gain_phi(mu, sigma2, params: NeuronParams, fatigue: float = 0.0) -> float:
    """Stationary firing rate (Hz) for drift `mu` (mV/ms), diffusion
    `sigma2` (mV^2/ms).

    `fatigue` shifts the effective drift by -g_c/C_m * fatigue for
    adaptive populations.  Adaptive quadrature at relative tolerance 1e-8.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    mu_eff = mu - params.g_over_c * fatigue
    s = np.sqrt(sigma2 * params.tau_m)
    x_theta = (params.v_theta - params.e_rest - mu_eff * params.tau_m) / s
    x_reset = (params.v_reset - params.e_rest - mu_eff * params.tau_m) / s
    if x_theta > _XT_SILENT:
        return 0.0
    val, err = quad(_fpt_integrand, x_reset, x_theta, epsrel=1e-8, limit=500)
    if not np.isfinite(val):
        raise ArithmeticError(
            f"first-passage quadrature failed: bounds ({x_reset:.3g}, {x_theta:.3g})"
        )
    denom = params.tau_arp + params.tau_m * _SQRT_PI * val
    return 1000.0 / denom


def _gain_vec(mu, sigma2, tau_m, tau_arp, v_theta, v_reset, e_rest, g_over_c, c):
    """Vectorized gain over the three populations (fixed-order GL rule)."""
    mu_eff = mu - g_over_c * c
    s = np.sqrt(sigma2 * tau_m)
    xt = (v_theta - e_rest - mu_eff * tau_m) / s
    xr = (v_reset - e_rest - mu_eff * tau_m) / s
    xt_c = np.clip(xt, -40.0, _XT_SILENT + 0.5)
    xr_c = np.clip(xr, -40.0, _XT_SILENT + 0.5)
    u = xr_c[..., None] + (xt_c - xr_c)[..., None] * _GL_X
    val = (xt_c - xr_c) * (erfcx(-u) @ _GL_W)
    rate = 1000.0 / (tau_arp + tau_m * _SQRT_PI * val)
    return np.where(xt > _XT_SILENT, 0.0, rate)


@dataclass(frozen=True)
class MeanFieldSystem:
    """Effective single-module system implied by a preset.

    In-degrees are the connection fraction times the (scaled) population
    sizes, matching the average synaptic input a neuron receives anywhere
    in the modular network.
    """

    preset: StatePreset
    module_scale: float = 1.0
    tau_e: float = 20.0     # phenomenological rate relaxation, excitatory (ms)
    tau_i: float = 10.0     # 〃 inhibitory (ms)
    in_degree: np.ndarray = field(init=False)
    j_signed: np.ndarray = field(init=False)
    j2_eff: np.ndarray = field(init=False)

    def __post_init__(self):
        k = np.asarray(scaled_counts(self.module_scale), dtype=np.float64)
        syn = self.preset.synapses
        object.__setattr__(self, "in_degree", self.preset.connection_fraction * k)
        object.__setattr__(self, "j_signed", syn.j_signed())
        object.__setattr__(
            self, "j2_eff", syn.j_matrix() ** 2 * (1.0 + syn.rho ** 2)
        )

    def _nrn_arrays(self):
        ps = [self.preset.neuron_params(PopulationKind(t)) for t in range(3)]
        return (
            np.array([p.tau_m for p in ps]),
            np.array([p.tau_arp for p in ps]),
            np.array([p.v_theta for p in ps]),
            np.array([p.v_reset for p in ps]),
            np.array([p.e_rest for p in ps]),
            np.array([p.g_over_c for p in ps]),
        )

    def input_moments(self, rates_hz, fatigue, target: int):
        """Drift (mV/ms) and diffusion (mV^2/ms) onto population `target`."""
        rates_hz = np.asarray(rates_hz, dtype=np.float64)
        if np.any(rates_hz < 0):
            raise ValueError("rates must be nonnegative")
        syn = self.preset.synapses
        c_arr = np.asarray(fatigue, dtype=np.float64)
        mu = float(self.in_degree @ (self.j_signed[target] * rates_hz)) / 1000.0
        mu += syn.n_ext * syn.j_ext[target] * syn.nu_ext_hz / 1000.0
        params = self.preset.neuron_params(PopulationKind(target))
        if params.adaptive:
            mu -= params.g_over_c * float(c_arr[target])
        s2 = float(self.in_degree @ (self.j2_eff[target] * rates_hz)) / 1000.0
        s2 += syn.n_ext * syn.j_ext[target] ** 2 * (1 + syn.rho ** 2) * syn.nu_ext_hz / 1000.0
        return mu, s2

    def _moments_vec(self, rates, c2):
        """Moments for all 3 targets; `c2` is (cF, cB)."""
        syn = self.preset.synapses
        j_ext = np.asarray(syn.j_ext)
        mnu = self.in_degree * rates
        mu = (self.j_signed @ mnu) / 1000.0 + syn.n_ext * j_ext * syn.nu_ext_hz / 1000.0
        s2 = (self.j2_eff @ mnu) / 1000.0 \
            + syn.n_ext * j_ext ** 2 * (1 + syn.rho ** 2) * syn.nu_ext_hz / 1000.0
        return mu, s2

    def gains(self, rates_hz, fatigue2):
        """phi_i for all populations; `fatigue2` = (c_F, c_B)."""
        tau_m, tau_arp, v_th, v_r, e0, goc = self._nrn_arrays()
        mu, s2 = self._moments_vec(np.asarray(rates_hz, float), fatigue2)
        c3 = np.array([fatigue2[0], fatigue2[1], 0.0])
        return _gain_vec(mu, s2, tau_m, tau_arp, v_th, v_r, e0, goc, c3)

    # -- dynamics -----------------------------------------------------------

    def derivative(self, state):
        """Right-hand side of the rate equations; state=(nuF,nuB,nuI,cF,cB)."""
        nu = np.clip(state[:3], 0.0, None)
        c = state[3:]
        phi = self.gains(nu, c)
        exc = self.preset.excitatory
        tau = np.array([self.tau_e, self.tau_e, self.tau_i])
        dnu = (phi - nu) / tau
        dc = -c / exc.tau_c + exc.alpha_c * nu[:2] / 1000.0
        return np.concatenate([dnu, dc])

    def equilibrium_fatigue(self, rates_hz):
        exc = self.preset.excitatory
        return exc.alpha_c * exc.tau_c * np.asarray(rates_hz)[:2] / 1000.0


def system_for(preset_name: str, module_scale: float = 1.0, **kw) -> MeanFieldSystem:
    return MeanFieldSystem(get_preset(preset_name), module_scale, **kw)


# ---------------------------------------------------------------------------
# Fixed points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedPoint:
    rates_hz: np.ndarray       # (nuF, nuB, nuI)
    fatigue: np.ndarray        # (cF, cB)
    stability: str             # stable | unstable | saddle
    eigenvalues: np.ndarray
    residual: float

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.rates_hz, self.fatigue])


_FP_SEEDS = (
    (0.3, 0.5, 0.5),
    (1.5, 2.5, 2.5),
    (5.0, 4.0, 8.0),
    (9.0, 5.0, 12.0),
    (30.0, 25.0, 30.0),
    (80.0, 60.0, 60.0),
)


def _rate_residual(sys: MeanFieldSystem, nu):
    nu = np.clip(nu, 0.0, None)
    c = sys.equilibrium_fatigue(nu)
    return sys.gains(nu, c) - nu


def jacobian_5d(sys: MeanFieldSystem, state, eps: float = 1e-4) -> np.ndarray:
    """Central finite-difference Jacobian of the 5D right-hand side."""
    state = np.asarray(state, dtype=np.float64)
    jac = np.empty((5, 5))
    for j in range(5):
        hi = state.copy()
        lo = state.copy()
        hi[j] += eps
        lo[j] -= eps
        jac[:, j] = (sys.derivative(hi) - sys.derivative(lo)) / (2 * eps)
    return jac


def fixed_points(sys: MeanFieldSystem, seeds=_FP_SEEDS, tol: float = 1e-7) -> list[FixedPoint]:
    """Locate fixed points from a battery of seeds and classify stability."""
    found: list[FixedPoint] = []
    for seed in seeds:
        nu = np.asarray(seed, dtype=np.float64)
        # damped burn-in toward an attractor of the enslaved map
        for _ in range(3000):
            step = 0.08 * (_rate_residual(sys, nu))
            nu = np.clip(nu + step, 0.0, 1000.0)
            if np.max(np.abs(step)) < 1e-10:
                break
        sol, info, ier, _ = fsolve(
            lambda v: _rate_residual(sys, v), nu, full_output=True, xtol=1e-12
        )
        sol = np.clip(sol, 0.0, None)
        res = float(np.max(np.abs(_rate_residual(sys, sol))))
        if ier != 1 and res > tol:
            continue
        if any(np.allclose(sol, fp.rates_hz, atol=1e-3) for fp in found):
            continue
        c = sys.equilibrium_fatigue(sol)
        state = np.concatenate([sol, c])
        eig = np.linalg.eigvals(jacobian_5d(sys, state))
        re = eig.real
        if np.all(re < 0):
            stab = "stable"
        elif np.all(re > 0):
            stab = "unstable"
        else:
            stab = "saddle"
        found.append(FixedPoint(sol, c, stab, eig, res))
    found.sort(key=lambda fp: fp.rates_hz[0])
    return found


# ---------------------------------------------------------------------------
# Nullclines in the foreground (rate, fatigue) plane
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NullclineSet:
    """Sampled nullclines for the (nu_F, c_F) phase plane.

    `rate_roots[i]` holds the rate-nullcline branches (roots of
    phi_F = nu_F, background and inhibitory rates adiabatically eliminated,
    background fatigue frozen at the reference point) for fatigue value
    `c_values[i]`.  The fatigue nullcline is the line c = alpha*tau_c*nu/1000.
    """

    c_values: np.ndarray
    rate_roots: list[np.ndarray]
    reference: np.ndarray            # (nuB, nuI, cB) frozen background

    def fatigue_nullcline_rate(self, preset: StatePreset) -> np.ndarray:
        exc = preset.excitatory
        return 1000.0 * self.c_values / (exc.alpha_c * exc.tau_c)


def _enslaved_bi(sys: MeanFieldSystem, nu_f: float, c_f: float, c_b: float, start):
    """Stable (nuB, nuI) given clamped nu_F and fatigues (damped + polish)."""
    x = np.asarray(start, dtype=np.float64)
    for _ in range(2500):
        phi = sys.gains(np.array([nu_f, x[0], x[1]]), (c_f, c_b))
        xn = np.clip(x + 0.15 * (phi[1:] - x), 0.0, 1000.0)
        if np.max(np.abs(xn - x)) < 1e-11:
            x = xn
            break
        x = xn

    def res(y):
        phi = sys.gains(np.array([nu_f, max(y[0], 0.0), max(y[1], 0.0)]), (c_f, c_b))
        return phi[1:] - np.clip(y, 0.0, None)

    y, info, ier, _ = fsolve(res, x, full_output=True, xtol=1e-12)
    return np.clip(y, 0.0, None) if ier == 1 else x


def _rate_roots_at_c(sys: MeanFieldSystem, c_f: float, c_b: float,
                     nu_grid: np.ndarray) -> np.ndarray:
    """Roots of phi_F(nu)-nu at one fatigue value, via a two-pass march.

    The enslaved (B, I) subsystem can be bistable, so the grid is marched
    once upward and once downward with warm starts; each pass tracks one
    stable sheet and the union of sign changes captures all branches.
    """
    roots: list[float] = []
    for grid in (nu_grid, nu_grid[::-1]):
        start = np.array([0.5, 0.5]) if grid[0] < grid[-1] else np.array([30.0, 30.0])
        prev = None
        bi = start
        for nu_f in grid:
            bi = _enslaved_bi(sys, nu_f, c_f, c_b, bi)
            g = sys.gains(np.array([nu_f, bi[0], bi[1]]), (c_f, c_b))[0] - nu_f
            if prev is not None and np.sign(g) != np.sign(prev[1]):
                lo, hi = sorted((prev[0], nu_f))
                roots.append(0.5 * (lo + hi))
            prev = (nu_f, g)
    if not roots:
        return np.empty(0)
    roots = np.sort(np.asarray(roots))
    merged = [roots[0]]
    for r in roots[1:]:
        if r - merged[-1] > 0.25:
            merged.append(r)
    return np.asarray(merged)


def nullclines(sys: MeanFieldSystem, c_values, nu_max: float = 120.0,
               n_grid: int = 90) -> NullclineSet:
    """Sample the rate nullcline over a fatigue grid.

    The reference operating point (used to freeze the background fatigue)
    is the lowest-rate stable fixed point when one exists, else the first
    fixed point found.
    """
    fps = fixed_points(sys)
    stable = [fp for fp in fps if fp.stability == "stable"]
    ref_fp = stable[0] if stable else (fps[0] if fps else None)
    if ref_fp is None:
        ref = np.array([1.0, 1.0, 1.0])
        c_b = 0.5
    else:
        ref = np.array([ref_fp.rates_hz[1], ref_fp.rates_hz[2], ref_fp.fatigue[1]])
        c_b = float(ref_fp.fatigue[1])
    lo = np.linspace(0.02, 12.0, n_grid // 2)
    hi = np.linspace(12.0 + (nu_max - 12.0) / (n_grid - n_grid // 2), nu_max,
                     n_grid - n_grid // 2)
    nu_grid = np.concatenate([lo, hi])
    c_values = np.asarray(c_values, dtype=np.float64)
    roots = [_rate_roots_at_c(sys, float(c), c_b, nu_grid) for c in c_values]
    return NullclineSet(c_values, roots, ref)


# ---------------------------------------------------------------------------
# Trajectory integration
# ---------------------------------------------------------------------------


def integrate_mf(sys: MeanFieldSystem, state0, duration_ms: float,
                 dt_ms: float = 1.0):
    """Fixed-step 4th-order Runge-Kutta integration of the rate equations.

    Returns (times, states) with states of shape (n+1, 5); rates clamped
    at zero after every step.
    """
    if dt_ms > min(sys.tau_e, sys.tau_i) / 10.0:
        raise ValueError("dt too large: must be <= min(tau_e, tau_i)/10")
    x = np.asarray(state0, dtype=np.float64).copy()
    if x.shape != (5,):
        raise ValueError("state must be (nuF, nuB, nuI, cF, cB)")
    n = int(round(duration_ms / dt_ms))
    out = np.empty((n + 1, 5))
    out[0] = x
    for i in range(n):
        k1 = sys.derivative(x)
        k2 = sys.derivative(x + 0.5 * dt_ms * k1)
        k3 = sys.derivative(x + 0.5 * dt_ms * k2)
        k4 = sys.derivative(x + dt_ms * k3)
        x = x + dt_ms / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        x[:3] = np.clip(x[:3], 0.0, None)
        if not np.all(np.isfinite(x)):
            raise ArithmeticError(f"mean-field integration diverged at step {i}: {x}")
        out[i + 1] = x
    times = np.arange(n + 1) * dt_ms
    return times, out
