"""Explicit monotone finite-difference solver for the terminal-value PDE

    d_t u + G(sigma^2 d_xx u + 2 h d_x u + 2 g(t, x, u, sigma d_x u))
          + b d_x u + f(t, x, u) = 0,      u(T, .) = phi,

stepped backward from T to 0.  The scheme is first order, uses central
second differences, a lagged central first difference inside the generator
argument, upwinding for the drift b, and a zero-second-derivative closure at
the two boundary nodes.  Under the CFL bound every update coefficient is
nonnegative, which gives discrete monotonicity, constant preservation and
sublinearity (the properties the cross-checks in tests rely on).
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gcore import (DomainError, DriverSpec, GFunction1D, Grid1D,
                    NumericalError)


class PdeForm(enum.Enum):
    GHEAT = "gheat"
    REGULARIZED_BSDE = "regularized_bsde"
    MARKOVIAN_FBSDE = "markovian_fbsde"


# ---------------------------------------------------------------------------
# problem container
# ---------------------------------------------------------------------------

def _sampled_zero(fn: Callable, args: tuple, name: str, what: str) -> None:
    vals = np.asarray(fn(*args), dtype=float)
    if np.max(np.abs(vals)) > 1e-14:
        raise DomainError(f"{what} requires {name} == 0, sampled "
                          f"max |{name}| = {np.max(np.abs(vals)):.3g}")


@dataclass(frozen=True)
class PdeProblem:
    """A grid, a driver and a generator, tagged with the equation form."""

    grid: Grid1D
    driver: DriverSpec
    G: GFunction1D
    form: PdeForm

    def __post_init__(self) -> None:
        xs = self.grid.xs[:: max(1, self.grid.nx // 16)]
        ys = np.linspace(-1.0, 1.0, 5)
        d = self.driver
        if self.form in (PdeForm.GHEAT, PdeForm.REGULARIZED_BSDE):
            for t in (0.0, 0.5 * self.grid.T, self.grid.T):
                _sampled_zero(d.b, (t, xs), "b", self.form.value)
                _sampled_zero(d.h, (t, xs), "h", self.form.value)
                sig = np.asarray(d.sigma(t, xs), dtype=float)
                if np.max(np.abs(sig - 1.0)) > 1e-14:
                    raise DomainError(f"{self.form.value} requires sigma == 1")
                for y in ys:
                    _sampled_zero(d.f, (t, xs, np.full_like(xs, y)), "f",
                                  self.form.value)
        if self.form is PdeForm.GHEAT:
            for t in (0.0, self.grid.T):
                _sampled_zero(d.g, (t, xs, xs, xs), "g", self.form.value)


# ---------------------------------------------------------------------------
# CFL bound
# ---------------------------------------------------------------------------

def _driver_bounds(grid: Grid1D, driver: DriverSpec) -> dict:
    """Sampled coefficient bounds used by the CFL denominator."""
    xs = grid.xs
    ts = (0.0, 0.5 * grid.T, grid.T)
    sig_max = b_max = h_max = 0.0
    for t in ts:
        sig_max = max(sig_max, float(np.max(np.abs(driver.sigma(t, xs)))))
        b_max = max(b_max, float(np.max(np.abs(driver.b(t, xs)))))
        h_max = max(h_max, float(np.max(np.abs(driver.h(t, xs)))))
    ys = np.array([-2.0, 0.0, 2.0])
    gz = gy = fy = 0.0
    for t in (0.0, grid.T):
        for y in ys:
            for z in ys:
                yv = np.full_like(xs, y)
                zv = np.full_like(xs, z)
                gz = max(gz, float(np.max(np.abs(driver.g_z(t, xs, yv, zv)))))
                gy = max(gy, float(np.max(np.abs(driver.g_y(t, xs, yv, zv)))))
            fy = max(fy, float(np.max(np.abs(driver.f_y(t, xs,
                                                        np.full_like(xs, y))))))
    return dict(sig_max=sig_max, b_max=b_max, h_max=h_max,
                g_z_lip=gz, g_y_lip=gy, f_y_lip=fy)


def cfl_timestep(grid: Grid1D, G: GFunction1D, driver: DriverSpec,
                 safety: float = 0.9) -> float:
    """Largest stable explicit time step for the monotone scheme.

    The denominator collects every first-order update coefficient:
    diffusion max sigma^2 * sigma_high^2, drift dx*|b|, the dx-scaled
    contributions of h and of the z-slope of g, and the dx^2-scaled
    zero-order Lipschitz rates of g and f.
    """
    if not (0.0 < safety <= 1.0):
        raise DomainError(f"need 0 < safety <= 1, got {safety}")
    bb = _driver_bounds(grid, driver)
    dx = grid.dx
    sh2 = G.sigma_high ** 2
    denom = (bb["sig_max"] ** 2 * sh2
             + dx * bb["b_max"]
             + dx * sh2 * (bb["h_max"] + bb["g_z_lip"] * bb["sig_max"])
             + dx * dx * (sh2 * bb["g_y_lip"] + bb["f_y_lip"]))
    denom = max(denom, dx * dx / grid.T)  # all-zero coefficients: dt <= T
    return safety * dx * dx / denom


# ---------------------------------------------------------------------------
# solution containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PdeSolution:
    """Dense backward solution on the grid.

    ``u[n, j]`` approximates u(t_n, x_j) with t_n = n*dt; ``a_field[n, j]``
    is the generator argument sigma^2 d_xx u + 2 h d_x u + 2 g evaluated from
    the same slice.  ``metadata`` holds CFL and timing diagnostics (kept out
    of file exports so artifacts stay byte-reproducible).
    """

    u: np.ndarray
    a_field: np.ndarray
    grid: Grid1D
    driver: DriverSpec
    G: GFunction1D
    form: PdeForm
    dx: float
    dt: float
    metadata: dict = field(default_factory=dict)

    @property
    def nt(self) -> int:
        return self.u.shape[0] - 1

    @property
    def xs(self) -> np.ndarray:
        return self.grid.xs

    @property
    def ts(self) -> np.ndarray:
        return np.arange(self.u.shape[0]) * self.dt

    def value(self, t: float, x: float) -> float:
        """u at (t, x): nearest time level at or below t, linear in x."""
        n = _time_index(self.ts, t)
        return float(np.interp(x, self.xs, self.u[n]))


@dataclass(frozen=True)
class DerivativeFields:
    ux: np.ndarray
    uxx: np.ndarray
    ut: np.ndarray


@dataclass(frozen=True)
class ControlField:
    """Bang-bang volatility field sigma*(t, x) with tie diagnostics."""

    sigma_star: np.ndarray
    ambiguous: np.ndarray
    tie_tol: float


def _time_index(ts: np.ndarray, t: float) -> int:
    n = int(np.searchsorted(ts, t + 1e-12, side="right") - 1)
    return min(max(n, 0), len(ts) - 1)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def _slice_fields(driver: DriverSpec, t: float, xs: np.ndarray,
                  u: np.ndarray, dx: float):
    """(a, d1) for one time slice: generator argument and the lagged slope."""
    d2 = np.zeros_like(u)
    d2[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (dx * dx)
    d1 = np.empty_like(u)
    d1[1:-1] = (u[2:] - u[:-2]) / (2.0 * dx)
    d1[0] = (u[1] - u[0]) / dx
    d1[-1] = (u[-1] - u[-2]) / dx
    sig = np.asarray(driver.sigma(t, xs), dtype=float)
    h = np.asarray(driver.h(t, xs), dtype=float)
    a = sig * sig * d2 + 2.0 * h * d1 \
        + 2.0 * np.asarray(driver.g(t, xs, u, sig * d1), dtype=float)
    return a, d1


def solve_terminal_pde(problem: PdeProblem, *, safety: float = 0.9) -> PdeSolution:
    """Backward explicit sweep from u(T, .) = phi to u(0, .).

    Raises :class:`NumericalError` if the grid pins an ``nt`` above the CFL
    bound, or if any slice turns non-finite (with the offending node and
    time level in the message).
    """
    grid, driver, G = problem.grid, problem.driver, problem.G
    xs = grid.xs
    dx = grid.dx
    bound = cfl_timestep(grid, G, driver, safety)
    nt_needed = max(1, math.ceil(grid.T / bound - 1e-12))
    if grid.nt is None:
        nt = nt_needed
    else:
        nt = grid.nt
        if grid.T / nt > bound * (1.0 + 1e-12):
            raise NumericalError(
                f"CFL violation: grid.nt={nt} gives dt={grid.T / nt:.6g} "
                f"above the stable bound {bound:.6g} (needs nt >= {nt_needed})")
    dt = grid.T / nt

    t_start = time.perf_counter()
    u = np.empty((nt + 1, grid.nx))
    a_field = np.empty_like(u)
    u[nt] = np.asarray(driver.phi(xs), dtype=float)
    if not np.all(np.isfinite(u[nt])):
        j = int(np.argmin(np.isfinite(u[nt])))
        raise NumericalError(f"terminal data non-finite at node {j} (x={xs[j]:.6g})")

    for n in range(nt - 1, -1, -1):
        t_known = (n + 1) * dt
        un = u[n + 1]
        a, _ = _slice_fields(driver, t_known, xs, un, dx)
        a_field[n + 1] = a
        b = np.asarray(driver.b(t_known, xs), dtype=float)
        if np.any(b):
            fwd = np.empty_like(un)
            fwd[:-1] = (un[1:] - un[:-1]) / dx
            fwd[-1] = (un[-1] - un[-2]) / dx
            bwd = np.empty_like(un)
            bwd[1:] = (un[1:] - un[:-1]) / dx
            bwd[0] = (un[1] - un[0]) / dx
            drift = b * np.where(b > 0.0, fwd, bwd)
        else:
            drift = 0.0
        unew = un + dt * (G.eval(a) + drift
                          + np.asarray(driver.f(t_known, xs, un), dtype=float))
        if not np.all(np.isfinite(unew)):
            j = int(np.argmin(np.isfinite(unew)))
            raise NumericalError(
                f"solution turned non-finite at time level {n} "
                f"(t={n * dt:.6g}), node {j} (x={xs[j]:.6g})")
        u[n] = unew
    a_field[0], _ = _slice_fields(driver, 0.0, xs, u[0], dx)

    meta = dict(cfl_dt_bound=bound, dt=dt, nt=nt, safety=safety,
                wall_time=time.perf_counter() - t_start,
                max_abs_u=float(np.max(np.abs(u))))
    return PdeSolution(u=u, a_field=a_field, grid=grid.with_nt(nt),
                       driver=driver, G=G, form=problem.form,
                       dx=dx, dt=dt, metadata=meta)


# ---------------------------------------------------------------------------
# derivative fields and the extremal control
# ---------------------------------------------------------------------------

def derivatives(sol: PdeSolution) -> DerivativeFields:
    """Central d_x and d_xx (one-sided at boundaries), forward d_t."""
    u, dx, dt = sol.u, sol.dx, sol.dt
    ux = np.empty_like(u)
    ux[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2.0 * dx)
    ux[:, 0] = (u[:, 1] - u[:, 0]) / dx
    ux[:, -1] = (u[:, -1] - u[:, -2]) / dx
    uxx = np.empty_like(u)
    uxx[:, 1:-1] = (u[:, 2:] - 2.0 * u[:, 1:-1] + u[:, :-2]) / (dx * dx)
    uxx[:, 0] = (u[:, 2] - 2.0 * u[:, 1] + u[:, 0]) / (dx * dx)
    uxx[:, -1] = (u[:, -1] - 2.0 * u[:, -2] + u[:, -3]) / (dx * dx)
    ut = np.empty_like(u)
    ut[:-1] = (u[1:] - u[:-1]) / dt
    ut[-1] = ut[-2]
    return DerivativeFields(ux=ux, uxx=uxx, ut=ut)


def extremal_control(sol: PdeSolution, G: GFunction1D,
                     tie_tol: float | None = None) -> ControlField:
    """Pointwise maximizing volatility: sigma_high where the generator
    argument is positive, sigma_low where negative, sigma_high (flagged) at
    ties within ``tie_tol``."""
    a = sol.a_field
    if tie_tol is None:
        tie_tol = 1e-10 * max(float(np.max(np.abs(a))), 1e-300)
    ambiguous = np.abs(a) <= tie_tol
    sigma_star = np.where(a > tie_tol, G.sigma_high, G.sigma_low)
    sigma_star[ambiguous] = G.sigma_high
    return ControlField(sigma_star=sigma_star, ambiguous=ambiguous,
                        tie_tol=float(tie_tol))


class FieldInterpolator:
    """Left-endpoint-in-time, linear-in-x sampler of a solution's fields."""

    def __init__(self, sol: PdeSolution):
        self.sol = sol
        self.ts = sol.ts
        self.xs = sol.xs
        d = derivatives(sol)
        self.ux = d.ux

    def _level(self, t: float) -> int:
        return _time_index(self.ts, t)

    def u_at(self, t: float, x):
        return np.interp(x, self.xs, self.sol.u[self._level(t)])

    def z_at(self, t: float, x):
        return np.interp(x, self.xs, self.ux[self._level(t)])

    def a_at(self, t: float, x):
        return np.interp(x, self.xs, self.sol.a_field[self._level(t)])


# ---------------------------------------------------------------------------
# regularity moduli
# ---------------------------------------------------------------------------

def fit_space_modulus(sol: PdeSolution, m: int | None = None,
                      fractions=(0.0, 1 / 16, 1 / 4)) -> float:
    """Smallest C with |u(t,x1)-u(t,x2)| <= C(1+|x1|^m+|x2|^m)|x1-x2|
    over node pairs separated by one node and by fixed fractions of the
    domain (comparable across refinements)."""
    if m is None:
        m = sol.driver.m
    u, xs = sol.u, sol.xs
    c = 0.0
    for frac in fractions:
        k = min(sol.grid.nx - 1, max(1, round(frac * (sol.grid.nx - 1))))
        num = np.abs(u[:, k:] - u[:, :-k])
        den = (1.0 + np.abs(xs[k:]) ** m + np.abs(xs[:-k]) ** m) \
            * (xs[k:] - xs[:-k])
        c = max(c, float(np.max(num / den)))
    return c


def fit_time_modulus(sol: PdeSolution, m: int | None = None,
                     fractions=(1 / 64, 1 / 16, 1 / 4, 1.0)) -> float:
    """Smallest C with |u(t1,x)-u(t2,x)| <= C(1+|x|^{m+1})sqrt(t2-t1)
    over level pairs separated by fixed fractions of T (so the fit is
    comparable across grid refinements)."""
    if m is None:
        m = sol.driver.m
    u, xs = sol.u, sol.xs
    weight = 1.0 + np.abs(xs) ** (m + 1)
    c = 0.0
    for frac in fractions:
        k = min(sol.nt, max(1, round(frac * sol.nt)))
        num = np.abs(u[k:] - u[:-k])
        c = max(c, float(np.max(num / (weight[None, :] * math.sqrt(k * sol.dt)))))
    return c


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def export_solution_csv(sol: PdeSolution, path: str,
                        control: ControlField | None = None) -> None:
    """Write the dense solution as CSV rows (t, x, u, ux, uxx, a, sigma_star)
    with 13 significant digits and a mandatory header."""
    d = derivatives(sol)
    if control is None:
        control = extremal_control(sol, sol.G)
    ts, xs = sol.ts, sol.xs
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,x,u,ux,uxx,a,sigma_star\n")
        for n in range(sol.u.shape[0]):
            for j in range(sol.u.shape[1]):
                fh.write(",".join(format(v, ".12e") for v in (
                    ts[n], xs[j], sol.u[n, j], d.ux[n, j], d.uxx[n, j],
                    sol.a_field[n, j], control.sigma_star[n, j])) + "\n")
