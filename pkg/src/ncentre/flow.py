"""Flow of the equations of motion and its linearisation.

Provides the Cartesian integrator for ``x'' = grad V_eps(x)`` with collision
guards and sphere-crossing events, homothetic orbits through central
configurations (via their one-dimensional radial reduction), first returns to
the working sphere, the variational (linearised) flow, and the McGehee
blow-up system for the single-centre collision problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import potential as pot
from .errors import (
    CollisionApproach,
    Escape,
    HillBoundary,
    InvariantViolation,
    NoReturn,
    OutsideHill,
    SingularBVP,
    StepSizeUnderflow,
)


@dataclass(frozen=True)
class State:
    """Phase-space point (position, velocity, time)."""

    x: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(2))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(2))


@dataclass
class Trajectory:
    """Sampled solution piece with per-sample energy residuals.

    ``energy_level`` is the signed energy (``-1`` for the rescaled problem,
    ``-h`` for the original one); ``max_energy_drift`` is the sup-norm of
    ``|v|^2/2 - V(x) - energy_level`` over the samples.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    energy_level: float
    residuals: np.ndarray
    max_energy_drift: float

    @property
    def samples(self):
        return [State(self.x[i], self.v[i], float(self.t[i])) for i in range(len(self.t))]

    @property
    def start(self) -> State:
        return State(self.x[0], self.v[0], float(self.t[0]))

    @property
    def end(self) -> State:
        return State(self.x[-1], self.v[-1], float(self.t[-1]))

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def write_csv(self, fh):
        """Delimited export, 17 significant digits, deterministic layout."""
        close = False
        if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
            fh = open(fh, "w")
            close = True
        try:
            fh.write("t,x,y,vx,vy,energy_residual\n")
            for i in range(len(self.t)):
                fh.write(
                    "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n"
                    % (self.t[i], self.x[i, 0], self.x[i, 1], self.v[i, 0], self.v[i, 1], self.residuals[i])
                )
        finally:
            if close:
                fh.close()


@dataclass(frozen=True)
class McGeheeState:
    """Blow-up coordinates (r, theta, phi) at rescaled time s."""

    r: float
    theta: float
    phi: float
    s: float = 0.0


@dataclass(frozen=True)
class IntegrateOpts:
    """Integrator settings shared by all flow operations."""

    tol: float = 1e-10
    method: str = "DOP853"
    coll_guard: float = 1e-6
    t_max: float = 200.0
    r_escape: float = 50.0
    max_step: float = math.inf


DEFAULT_OPTS = IntegrateOpts()


def _make_trajectory(ts, ys, energy_level, value_at):
    xs = ys[:2].T.copy()
    vs = ys[2:4].T.copy()
    vals = np.array([value_at(x, y) for x, y in xs])
    residuals = 0.5 * np.sum(vs * vs, axis=1) - vals - energy_level
    return Trajectory(
        t=np.asarray(ts, dtype=float).copy(),
        x=xs,
        v=vs,
        energy_level=energy_level,
        residuals=residuals,
        max_energy_drift=float(np.max(np.abs(residuals))),
    )


def _collision_events(spec, eps, guard):
    events = []
    terms = spec._terms_total() if eps is None else spec._terms_rescaled(eps)
    for cx, cy, _, _, _ in terms:
        def ev(t, z, cx=cx, cy=cy):
            return (z[0] - cx) ** 2 + (z[1] - cy) ** 2 - guard * guard
        ev.terminal = True
        ev.direction = -1
        events.append(ev)
    return events


def _run_ivp(rhs, z0, t_span, opts, events):
    sol = solve_ivp(
        rhs,
        t_span,
        z0,
        method=opts.method,
        rtol=opts.tol,
        atol=opts.tol,
        events=events,
        max_step=opts.max_step,
        dense_output=False,
    )
    if sol.status == -1:
        raise StepSizeUnderflow(sol.message)
    return sol


def integrate(spec, eps, initial: State, t_end: float, opts: IntegrateOpts = DEFAULT_OPTS, energy_level: float = -1.0) -> Trajectory:
    """Integrate the equations of motion from ``initial`` up to ``t_end``.

    ``eps=None`` integrates the original problem (pass ``energy_level=-h``);
    otherwise the rescaled one at energy ``-1``.  Aborts cleanly with
    ``CollisionApproach`` when the trajectory enters the collision guard of a
    centre.
    """
    if t_end <= initial.t:
        raise ValueError("t_end must exceed the initial time")
    accel, value_grad, _ = pot.make_rhs(spec, eps)

    def rhs(t, z):
        ax, ay = accel(z[0], z[1])
        return (z[2], z[3], ax, ay)

    events = _collision_events(spec, eps, opts.coll_guard)
    z0 = np.concatenate([initial.x, initial.v])
    sol = _run_ivp(rhs, z0, (initial.t, t_end), opts, events)
    if sol.status == 1:
        for j, te in enumerate(sol.t_events):
            if len(te):
                raise CollisionApproach(float(te[0]), j)
    value_at = lambda x, y: pot._eval_terms(
        spec._terms_total() if eps is None else spec._terms_rescaled(eps), x, y, order=0
    )
    return _make_trajectory(sol.t, sol.y, energy_level, value_at)


def energy_residual(spec, eps, state: State, energy_level: float = -1.0) -> float:
    """Pointwise residual of the energy relation |v|^2/2 - V = energy_level."""
    terms = spec._terms_total() if eps is None else spec._terms_rescaled(eps)
    val = pot._eval_terms(terms, float(state.x[0]), float(state.x[1]), order=0)
    return float(0.5 * np.dot(state.v, state.v) - val - energy_level)


# ---------------------------------------------------------------------------
# Homothetic orbits
# ---------------------------------------------------------------------------

def homothetic_orbit(spec, cc, R: float, opts: IntegrateOpts = DEFAULT_OPTS):
    """Homothetic orbit x(t) = lambda(t) xi through ``xi = R e^{i theta*}``.

    The radial factor solves the one-dimensional problem
    ``lambda'' = -mu lambda^(-alpha-1)`` with ``lambda(0) = 1`` and the
    outward speed fixed by the energy shell; the first return to
    ``lambda = 1`` is located by event detection.  Returns
    ``(trajectory, T_xi)``.
    """
    a = spec.alpha_min
    u0 = cc.u_value
    w0_xi = R ** (-a) * u0
    if w0_xi <= 1.0:
        raise OutsideHill(f"W0(xi) = {w0_xi:.6g} <= 1 at R = {R:.6g}")
    mu = a * R ** (-a - 2.0) * u0
    lamdot0 = math.sqrt(2.0 * (w0_xi - 1.0)) / R

    def rhs(t, z):
        lam = z[0]
        return (z[1], -mu * lam ** (-a - 1.0))

    def back_on_sphere(t, z):
        return z[0] - 1.0
    back_on_sphere.terminal = True
    back_on_sphere.direction = -1

    sol = _run_ivp(rhs, np.array([1.0, lamdot0]), (0.0, opts.t_max), opts, [back_on_sphere])
    if sol.status != 1 or not len(sol.t_events[0]):
        raise NoReturn(opts.t_max)
    T_xi = float(sol.t_events[0][0])
    xi = np.array([R * math.cos(cc.theta), R * math.sin(cc.theta)])
    lam = sol.y[0]
    lamdot = sol.y[1]
    xs = np.outer(lam, xi)
    vs = np.outer(lamdot, xi)
    vals = u0 * (lam * R) ** (-a)
    residuals = 0.5 * np.sum(vs * vs, axis=1) - vals + 1.0
    traj = Trajectory(
        t=sol.t.copy(),
        x=xs,
        v=vs,
        energy_level=-1.0,
        residuals=residuals,
        max_energy_drift=float(np.max(np.abs(residuals))),
    )
    return traj, T_xi


def homothetic_initial_velocity(spec, cc, R: float) -> np.ndarray:
    """Outward launch velocity of the homothetic orbit at xi."""
    a = spec.alpha_min
    w0_xi = R ** (-a) * cc.u_value
    if w0_xi <= 1.0:
        raise OutsideHill(f"W0(xi) = {w0_xi:.6g} <= 1 at R = {R:.6g}")
    xi = np.array([math.cos(cc.theta), math.sin(cc.theta)])
    return math.sqrt(2.0 * (w0_xi - 1.0)) * xi


# ---------------------------------------------------------------------------
# Sphere returns (shared by the outer shooting)
# ---------------------------------------------------------------------------

@dataclass
class SphereReturn:
    """Outcome of integrating until the first downward crossing of |x| = R."""

    T: float
    end: State
    trajectory: Trajectory
    q_end: np.ndarray | None = None
    w_end: np.ndarray | None = None
    length: float | None = None


def sphere_return(spec, eps, x0, v0, R, opts: IntegrateOpts = DEFAULT_OPTS,
                  var_dir=None, with_length=False) -> SphereReturn:
    """Integrate outward from the sphere until the next crossing of |x| = R.

    Optionally carries one column of the variational equation (initial
    position offset zero, velocity offset ``var_dir``) and the Jacobi-length
    quadrature ``dl/dt = |v|^2 / sqrt(2)`` along as extra state, so both
    inherit the integrator tolerance.
    """
    accel, value_grad, hess = pot.make_rhs(spec, eps)
    nvar = 4 + (4 if var_dir is not None else 0) + (1 if with_length else 0)
    z0 = np.zeros(nvar)
    z0[0:2] = x0
    z0[2:4] = v0
    if var_dir is not None:
        z0[6:8] = var_dir

    if var_dir is None and not with_length:
        def rhs(t, z):
            ax, ay = accel(z[0], z[1])
            return (z[2], z[3], ax, ay)
    else:
        def rhs(t, z):
            out = np.empty(nvar)
            out[0] = z[2]
            out[1] = z[3]
            if var_dir is not None:
                h = hess(z[0], z[1])
                # gradient shares the Hessian call cost only notionally; keep both exact
                gx, gy = accel(z[0], z[1])
                out[2] = gx
                out[3] = gy
                out[4] = z[6]
                out[5] = z[7]
                out[6] = h[0, 0] * z[4] + h[0, 1] * z[5]
                out[7] = h[1, 0] * z[4] + h[1, 1] * z[5]
            else:
                gx, gy = accel(z[0], z[1])
                out[2] = gx
                out[3] = gy
            if with_length:
                out[-1] = (z[2] * z[2] + z[3] * z[3]) / math.sqrt(2.0)
            return out

    def crossing(t, z):
        return z[0] * z[0] + z[1] * z[1] - R * R
    crossing.terminal = True
    crossing.direction = -1

    def escape(t, z):
        return z[0] * z[0] + z[1] * z[1] - opts.r_escape ** 2
    escape.terminal = True
    escape.direction = 1

    events = [crossing, escape] + _collision_events(spec, eps, opts.coll_guard)
    sol = _run_ivp(rhs, z0, (0.0, opts.t_max), opts, events)
    if sol.status != 1:
        raise NoReturn(opts.t_max)
    if len(sol.t_events[1]):
        raise Escape(f"|x| exceeded {opts.r_escape}")
    for j, te in enumerate(sol.t_events[2:]):
        if len(te):
            raise CollisionApproach(float(te[0]), j)
    if not len(sol.t_events[0]):
        raise NoReturn(opts.t_max)
    T = float(sol.t_events[0][0])
    z_end = sol.y_events[0][0]
    value_at = lambda x, y: pot._eval_terms(
        spec._terms_total() if eps is None else spec._terms_rescaled(eps), x, y, order=0
    )
    traj = _make_trajectory(sol.t, sol.y[:4], -1.0, value_at)
    return SphereReturn(
        T=T,
        end=State(z_end[0:2], z_end[2:4], T),
        trajectory=traj,
        q_end=z_end[4:6].copy() if var_dir is not None else None,
        w_end=z_end[6:8].copy() if var_dir is not None else None,
        length=float(z_end[-1]) if with_length else None,
    )


def first_return_to_sphere(spec, eps, start: State, R: float, opts: IntegrateOpts = DEFAULT_OPTS):
    """First return of an outward sphere state to |x| = R.

    Requires ``|start.x| = R`` (to 1e-10) and strictly outward velocity;
    returns ``(T, end_state)`` with the crossing located by the integrator's
    bracketing root solve on the event function.
    """
    r0 = float(np.hypot(*start.x))
    if abs(r0 - R) > 1e-10 * max(1.0, R):
        raise ValueError(f"start must lie on the sphere: |x| = {r0:.12g}, R = {R:.12g}")
    if float(np.dot(start.x, start.v)) <= 0.0:
        raise ValueError("start velocity must point strictly outward")
    res = sphere_return(spec, eps, start.x, start.v, R, opts)
    return res.T, res.end


# ---------------------------------------------------------------------------
# Variational flow
# ---------------------------------------------------------------------------

@dataclass
class MatrixTrajectory:
    """Linearised-flow samples M(t), M'(t) along a base trajectory."""

    t: np.ndarray
    M: np.ndarray
    Mdot: np.ndarray


def variational_flow(spec, eps, base: Trajectory, M0, Mdot0, opts: IntegrateOpts = DEFAULT_OPTS) -> MatrixTrajectory:
    """Integrate M'' = Hess V_eps(x(t)) M along ``base`` as an initial value problem.

    The base solution is re-integrated jointly with the matrix equation from
    the base's initial state, and sampled at the base's time grid.
    """
    if base.max_energy_drift > 1e-7:
        raise ValueError("base trajectory drift too large for the variational flow")
    accel, _, hess = pot.make_rhs(spec, eps)

    def rhs(t, z):
        out = np.empty(12)
        out[0] = z[2]
        out[1] = z[3]
        gx, gy = accel(z[0], z[1])
        out[2] = gx
        out[3] = gy
        h = hess(z[0], z[1])
        M = z[4:8].reshape(2, 2)
        Md = z[8:12].reshape(2, 2)
        out[4:8] = Md.ravel()
        out[8:12] = (h @ M).ravel()
        return out

    z0 = np.concatenate([base.x[0], base.v[0], np.asarray(M0, dtype=float).ravel(), np.asarray(Mdot0, dtype=float).ravel()])
    t0, t1 = float(base.t[0]), float(base.t[-1])
    sol = solve_ivp(rhs, (t0, t1), z0, method=opts.method, rtol=opts.tol, atol=opts.tol, t_eval=base.t)
    if not sol.success:
        raise StepSizeUnderflow(sol.message)
    M = sol.y[4:8].T.reshape(-1, 2, 2)
    Md = sol.y[8:12].T.reshape(-1, 2, 2)
    return MatrixTrajectory(t=sol.t.copy(), M=M.copy(), Mdot=Md.copy())


def variational_bvp(spec, eps, base: Trajectory, opts: IntegrateOpts = DEFAULT_OPTS) -> MatrixTrajectory:
    """Solve the endpoint-variation problem M(0) = 0, M(T) = I along ``base``.

    Assembled from the fundamental initial-value solution with
    ``M(0) = 0, M'(0) = I`` by a linear solve at the far endpoint.
    """
    fund = variational_flow(spec, eps, base, np.zeros((2, 2)), np.eye(2), opts)
    MT = fund.M[-1]
    if np.linalg.cond(MT) > 1e12:
        raise SingularBVP(f"endpoint matrix condition {np.linalg.cond(MT):.3g}")
    C = np.linalg.inv(MT)
    return MatrixTrajectory(t=fund.t, M=fund.M @ C, Mdot=fund.Mdot @ C)


# ---------------------------------------------------------------------------
# McGehee blow-up of the single-centre collision
# ---------------------------------------------------------------------------

def mcgehee_vector_field(spec, state: McGeheeState):
    """Right-hand side of the blow-up system in (r, theta, phi).

    The angular profile is the leading sum U of the localized problem;
    ``r = 0`` is an invariant plane carrying the collision manifold.
    """
    u = spec.leading_angular()
    r, th, ph = state.r, state.theta, state.phi
    a = spec.alpha_min
    u0 = u.value(th)
    u1 = u.deriv(th)
    c = math.cos(ph - th)
    s = math.sin(ph - th)
    k = u0 - (r ** a if r > 0.0 else 0.0)  # r = 0 bounds the blow-up chart
    return (2.0 * r * k * c, 2.0 * k * s, u1 * c + a * u0 * s)


def mcgehee_equilibrium(spec, cc):
    """Closed-form eigen-data of the collision equilibrium (0, theta*, theta* + pi).

    Returns ``(lambda_r, lambda_minus, v_minus)``: the two stable eigenvalues
    and the non-radial stable eigendirection.  Both eigenvalues are negative
    and the third component of ``v_minus`` exceeds 1 for every minimal
    non-degenerate configuration.
    """
    if cc.kind != pot.MINIMAL_NONDEGENERATE:
        raise ValueError("equilibrium data requires a minimal non-degenerate configuration")
    a = spec.alpha_min
    u0, u2 = cc.u_value, cc.u_second
    lam_r = -2.0 * u0
    disc = math.sqrt((2.0 - a) ** 2 * u0 * u0 + 8.0 * u0 * u2)
    lam_minus = 0.5 * (2.0 - a) * u0 - 0.5 * disc
    third = 0.5 + a / 4.0 + 0.25 * math.sqrt((2.0 - a) ** 2 + 8.0 * u2 / u0)
    v_minus = np.array([0.0, 1.0, third])
    if not (lam_r < 0.0 and lam_minus < 0.0 and third > 1.0):
        raise InvariantViolation("collision equilibrium eigen-data out of range")
    return lam_r, lam_minus, v_minus


def integrate_mcgehee(spec, initial: McGeheeState, s_end: float, opts: IntegrateOpts = DEFAULT_OPTS):
    """Integrate the blow-up system from ``initial`` to rescaled time ``s_end``.

    Raises ``HillBoundary`` if ``U(theta) - r^alpha`` vanishes along the way.
    Returns the list of sampled states.
    """
    u = spec.leading_angular()
    a = spec.alpha_min

    def rhs(s, z):
        r, th, ph = z
        u0 = u.value(th)
        u1 = u.deriv(th)
        c = math.cos(ph - th)
        si = math.sin(ph - th)
        k = u0 - (r ** a if r > 0.0 else 0.0)
        return (2.0 * r * k * c, 2.0 * k * si, u1 * c + a * u0 * si)

    def hill(s, z):
        return u.value(z[1]) - (z[0] ** a if z[0] > 0.0 else 0.0)
    hill.terminal = True
    hill.direction = -1

    z0 = np.array([initial.r, initial.theta, initial.phi])
    if u.value(initial.theta) - (initial.r ** a if initial.r > 0 else 0.0) <= 0.0:
        raise HillBoundary("initial state outside the Hill region")
    sol = _run_ivp(rhs, z0, (initial.s, s_end), opts, [hill])
    if sol.status == 1 and len(sol.t_events[0]):
        raise HillBoundary(f"Hill boundary reached at s = {float(sol.t_events[0][0]):.6g}")
    return [McGeheeState(float(r), float(th), float(ph), float(s)) for s, r, th, ph in zip(sol.t, *sol.y)]
