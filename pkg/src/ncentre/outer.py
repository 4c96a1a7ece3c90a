"""Outer solution arcs: Newton shooting outside the working sphere.

An outer arc joins two points of ``partial B_R`` close to a minimal central
configuration while staying outside the ball.  On the energy shell the launch
speed at ``p0`` is fixed, so the shooting unknown reduces to the single angle
``sigma`` between the launch velocity and the outward normal; the arrival
point is matched to ``p1`` by a damped scalar Newton iteration whose
derivative comes from the variational flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import flow, potential as pot
from .errors import (
    InvalidEps,
    InvariantViolation,
    NCentreError,
    NewtonDiverged,
    OutsideHill,
    OutsideNeighbourhood,
)

U_NBHD_DEFAULT = 0.05  # half-width (rad) of the admissible endpoint neighbourhood


def _angle(p) -> float:
    return math.atan2(p[1], p[0])


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def unit_tangent(p) -> np.ndarray:
    """Counter-clockwise unit tangent of the circle through p."""
    r = math.hypot(p[0], p[1])
    return np.array([-p[1] / r, p[0] / r])


@dataclass
class OuterArc:
    """Converged outer shooting result."""

    arc: flow.Trajectory
    p0: np.ndarray
    p1: np.ndarray
    T_ext: float
    v0: np.ndarray
    v1: np.ndarray
    newton_iters: int
    residual: float
    sigma: float
    length: float
    R: float


@dataclass(frozen=True)
class ShootOpts:
    u_nbhd: float = U_NBHD_DEFAULT
    tol: float = 1e-9
    max_iters: int = 25
    max_halvings: int = 20
    flow_opts: flow.IntegrateOpts = flow.DEFAULT_OPTS


DEFAULT_SHOOT = ShootOpts()


def _launch_velocity(speed, n, nperp, sigma):
    return speed * (math.cos(sigma) * n + math.sin(sigma) * nperp)


def shoot_outer(spec, eps, p0, p1, cc, opts: ShootOpts = DEFAULT_SHOOT, sigma0: float = 0.0) -> OuterArc:
    """Outer arc from ``p0`` to ``p1`` near the configuration ``cc``.

    Newton iteration on the launch angle ``sigma`` (measured from the
    outward normal, with speed fixed by the energy shell) drives the arrival
    mismatch below ``opts.tol``.  The initial guess ``sigma0 = 0`` is the
    homothetic-like radial launch; steps are halved on residual increase.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    R = float(np.hypot(*p0))
    if abs(float(np.hypot(*p1)) - R) > 1e-10 * max(1.0, R):
        raise OutsideNeighbourhood("endpoints must lie on the same sphere")
    if eps >= spec.eps_max:
        raise InvalidEps(f"eps={eps} outside [0, eps_max={spec.eps_max:.6g})")
    for p in (p0, p1):
        if abs(_wrap(_angle(p) - cc.theta)) > opts.u_nbhd + 1e-12:
            raise OutsideNeighbourhood(
                f"endpoint at angle {_angle(p):.6g} outside the {opts.u_nbhd:.3g}-neighbourhood of {cc.theta:.6g}"
            )

    v_of_p0 = pot._eval_terms(spec._terms_rescaled(eps), p0[0], p0[1], order=0)
    if v_of_p0 <= 1.0:
        raise OutsideHill("launch point outside the Hill region of the shell")
    speed = math.sqrt(2.0 * (v_of_p0 - 1.0))
    n = p0 / R
    nperp = np.array([-n[1], n[0]])
    theta_target = _angle(p1)

    sigma = float(sigma0)
    best = None

    def evaluate(sig):
        v0 = _launch_velocity(speed, n, nperp, sig)
        dv0 = _launch_velocity(speed, n, nperp, sig + 0.5 * math.pi)  # d v0 / d sigma
        res = flow.sphere_return(spec, eps, p0, v0, R, opts.flow_opts, var_dir=dv0, with_length=True)
        x1 = res.end.x
        mis = float(np.linalg.norm(x1 - p1))
        g = R * _wrap(_angle(x1) - theta_target)
        # return-point derivative constrained to the sphere
        q, v1 = res.q_end, res.end.v
        dTds = -float(np.dot(x1, q)) / float(np.dot(x1, v1))
        dx1 = q + v1 * dTds
        dg = float(np.dot(dx1, np.array([-x1[1], x1[0]]))) / R
        return res, v0, mis, g, dg

    res, v0, mis, g, dg = evaluate(sigma)
    iters = 0
    while mis > opts.tol:
        if iters >= opts.max_iters:
            raise NewtonDiverged(iters, mis)
        if dg == 0.0:
            raise NewtonDiverged(iters, mis)
        step = -g / dg
        accepted = False
        for _ in range(opts.max_halvings + 1):
            try:
                cand = evaluate(sigma + step)
            except NCentreError:
                cand = None
            if cand is not None and cand[2] < mis:
                sigma += step
                res, v0, mis, g, dg = cand
                accepted = True
                break
            step *= 0.5
        iters += 1
        if not accepted:
            raise NewtonDiverged(iters, mis)

    arc = res.trajectory
    interior = arc.x[1:-1]
    if len(interior) and float(np.min(np.hypot(interior[:, 0], interior[:, 1]))) <= R * (1.0 + 1e-12):
        raise InvariantViolation("outer arc dips to the sphere in its interior")
    if arc.max_energy_drift > 1e-8:
        raise InvariantViolation(f"outer arc energy drift {arc.max_energy_drift:.3g}")
    return OuterArc(
        arc=arc,
        p0=p0,
        p1=res.end.x.copy(),
        T_ext=res.T,
        v0=v0,
        v1=res.end.v.copy(),
        newton_iters=iters,
        residual=mis,
        sigma=sigma,
        length=res.length,
        R=R,
    )


def length_gradient_ext(arc: OuterArc, dphi0: float, dphi1: float) -> float:
    """Differential of the outer Jacobi length under endpoint rotations.

    ``dphi0``/``dphi1`` are angular variations of ``p0``/``p1``; the
    corresponding tangent vectors are ``R dphi n_perp(p)``.
    """
    t0 = arc.R * dphi0 * unit_tangent(arc.p0)
    t1 = arc.R * dphi1 * unit_tangent(arc.p1)
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    return float(-inv_sqrt2 * np.dot(arc.v0, t0) + inv_sqrt2 * np.dot(arc.v1, t1))


@dataclass
class MonotonicityRow:
    phi0: float
    phi1: float
    ratio: float
    ok: bool


@dataclass
class MonotonicityReport:
    rows: list
    min_ratio: float
    ok: bool

    def write_text(self, fh):
        fh.write("phi0,phi1,ratio,ok\n")
        for r in self.rows:
            fh.write("%.17g,%.17g,%.17g,%d\n" % (r.phi0, r.phi1, r.ratio, r.ok))
        fh.write("# min_ratio = %.17g, ok = %d\n" % (self.min_ratio, self.ok))


def tangential_monotonicity_check(spec, cc, phi_grid, opts: ShootOpts = DEFAULT_SHOOT) -> MonotonicityReport:
    """Empirical check of the launch-velocity variation bound at eps = 0.

    For every ``phi0`` in the grid and ``phi1`` in ``{-phi0, 0, phi0}``
    the ratio ``-<v0, p0(phi0)^perp> / phi0`` is recorded; the boundary
    variation mechanism of the gluing step needs it positive and bounded
    away from zero on the instance.
    """
    R = spec.R_work
    rows = []
    for phi0 in phi_grid:
        if phi0 == 0.0:
            continue
        for phi1 in (-phi0, 0.0, phi0):
            p0 = R * np.array([math.cos(cc.theta + phi0), math.sin(cc.theta + phi0)])
            p1 = R * np.array([math.cos(cc.theta + phi1), math.sin(cc.theta + phi1)])
            arc = shoot_outer(spec, 0.0, p0, p1, cc, opts)
            perp = R * unit_tangent(p0)
            ratio = -float(np.dot(arc.v0, perp)) / phi0
            rows.append(MonotonicityRow(phi0, phi1, ratio, ratio > 0.0))
    min_ratio = min(r.ratio for r in rows) if rows else float("nan")
    return MonotonicityReport(rows=rows, min_ratio=min_ratio, ok=all(r.ok for r in rows))
