"""Anisotropic N-centre potentials and their derived quantities.

The total potential is a sum of attractive terms, one per centre,

    V(x) = sum_j |x - c_j|^(-alpha_j) * U_j(theta_j),

where ``theta_j`` is the polar angle of ``x - c_j`` and ``U_j`` is a strictly
positive trigonometric polynomial on the circle.  The module also provides the
rescaled family ``V_eps`` obtained by shrinking the centres into a ball of
radius ``eps``, its leading homogeneous part ``W0``, central configurations of
the leading angular profile, and the working radii used by the rest of the
package.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CollisionPoint,
    DegenerateConfiguration,
    InvalidEps,
    NoAdmissibleRadius,
)

COLL_EPS = 1e-10   # singularity guard for point evaluations
CC_TOL = 1e-8      # criticality / non-degeneracy classification tolerance

MINIMAL_NONDEGENERATE = "minimal_nondegenerate"
DEGENERATE = "degenerate"
NON_MINIMAL = "non_minimal"


@dataclass(frozen=True)
class AngularPotential:
    """Trigonometric polynomial U(theta) = a0 + sum_k (a_k cos k theta + b_k sin k theta).

    ``cosine_coeffs`` is ``(a_0, a_1, ..., a_K)`` and ``sine_coeffs`` is
    ``(b_1, ..., b_K)``; trailing entries may be omitted on either side.
    Evaluation and both derivatives are exact trigonometric sums.
    """

    cosine_coeffs: tuple = (1.0,)
    sine_coeffs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "cosine_coeffs", tuple(float(a) for a in self.cosine_coeffs))
        object.__setattr__(self, "sine_coeffs", tuple(float(b) for b in self.sine_coeffs))
        if len(self.cosine_coeffs) < 1:
            raise ValueError("cosine_coeffs must contain at least a_0")
        harmonics = []
        for k in range(1, max(len(self.cosine_coeffs) - 1, len(self.sine_coeffs)) + 1):
            a, b = self._coeff(k)
            if a != 0.0 or b != 0.0:
                harmonics.append((k, a, b))
        object.__setattr__(self, "_harmonics", tuple(harmonics))
        if self.min_value() <= 0.0:
            raise ValueError("angular potential must be strictly positive on the circle")

    @property
    def degree(self) -> int:
        return max(len(self.cosine_coeffs) - 1, len(self.sine_coeffs))

    def _coeff(self, k: int):
        a = self.cosine_coeffs[k] if k < len(self.cosine_coeffs) else 0.0
        b = self.sine_coeffs[k - 1] if 0 < k <= len(self.sine_coeffs) else 0.0
        return a, b

    def value(self, theta):
        if isinstance(theta, (float, int)):
            out = self.cosine_coeffs[0]
            for k, a, b in self._harmonics:
                out += a * math.cos(k * theta) + b * math.sin(k * theta)
            return out
        th = np.asarray(theta, dtype=float)
        out = np.full_like(th, self.cosine_coeffs[0])
        for k, a, b in self._harmonics:
            out += a * np.cos(k * th) + b * np.sin(k * th)
        return out

    def deriv(self, theta):
        if isinstance(theta, (float, int)):
            out = 0.0
            for k, a, b in self._harmonics:
                out += -a * k * math.sin(k * theta) + b * k * math.cos(k * theta)
            return out
        th = np.asarray(theta, dtype=float)
        out = np.zeros_like(th)
        for k, a, b in self._harmonics:
            out += -a * k * np.sin(k * th) + b * k * np.cos(k * th)
        return out

    def second(self, theta):
        if isinstance(theta, (float, int)):
            out = 0.0
            for k, a, b in self._harmonics:
                out += -a * k * k * math.cos(k * theta) - b * k * k * math.sin(k * theta)
            return out
        th = np.asarray(theta, dtype=float)
        out = np.zeros_like(th)
        for k, a, b in self._harmonics:
            out += -a * k * k * np.cos(k * th) - b * k * k * np.sin(k * th)
        return out

    def min_value(self, grid: int = 720) -> float:
        """Minimum over the circle: dense grid scan refined by Newton on U'."""
        th = np.linspace(0.0, 2.0 * math.pi, grid, endpoint=False)
        vals = self.value(th)
        if self.degree == 0:
            return float(vals[0])
        i0 = int(np.argmin(vals))
        t = float(th[i0])
        for _ in range(60):
            d1 = self.deriv(t)
            d2 = self.second(t)
            if abs(d2) < 1e-14 or abs(d1) < 1e-14:
                break
            t -= d1 / d2
        cand = self.value(t) if abs(self.deriv(t)) < 1e-10 else math.inf
        return float(min(np.min(vals), cand))

    @staticmethod
    def sum_of(parts: "list[AngularPotential]") -> "AngularPotential":
        deg = max(p.degree for p in parts)
        cos = [sum(p._coeff(k)[0] for p in parts) for k in range(deg + 1)]
        sin = [sum(p._coeff(k)[1] for p in parts) for k in range(1, deg + 1)]
        return AngularPotential(tuple(cos), tuple(sin))


@dataclass(frozen=True)
class CentreSpec:
    """One attractive centre: position, homogeneity exponent, angular profile."""

    position: np.ndarray
    alpha: float
    angular: AngularPotential

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if float(np.hypot(*pos)) > 1.0 + 1e-12:
            raise ValueError("centres must lie in the closed unit ball")


@dataclass(frozen=True)
class ProblemSpec:
    """Immutable problem description plus derived admissibility constants.

    Centres are stored sorted by ascending exponent, so the leading group of
    ``k_lead`` centres shares the smallest exponent ``alpha_min``.
    """

    centres: tuple
    alpha_min: float = field(init=False)
    k_lead: int = field(init=False)
    m_frak: float = field(init=False)
    h_tilde: float = field(init=False)
    eps_tilde: float = field(init=False)
    R_work: float = field(init=False)
    gamma: float = field(init=False)

    def __post_init__(self):
        centres = tuple(sorted(self.centres, key=lambda c: c.alpha))
        if len(centres) < 1:
            raise ValueError("at least one centre is required")
        object.__setattr__(self, "centres", centres)
        alpha = centres[0].alpha
        k = sum(1 for c in centres if abs(c.alpha - alpha) <= 1e-12)
        m_frak = min(c.angular.min_value() for c in centres)
        h_tilde = m_frak / 2.0 ** alpha
        object.__setattr__(self, "alpha_min", alpha)
        object.__setattr__(self, "k_lead", k)
        object.__setattr__(self, "m_frak", m_frak)
        object.__setattr__(self, "h_tilde", h_tilde)
        object.__setattr__(self, "eps_tilde", h_tilde ** (1.0 / alpha))
        object.__setattr__(self, "R_work", m_frak ** (1.0 / alpha) / 2.0)
        if k < len(centres):
            gamma = min(1.0, centres[k].alpha - alpha)
        else:
            gamma = 1.0
        object.__setattr__(self, "gamma", gamma)

    @property
    def n_centres(self) -> int:
        return len(self.centres)

    @property
    def eps_max(self) -> float:
        return self.R_work / 2.0

    def leading_angular(self) -> AngularPotential:
        """Angular profile U = sum of the leading-group angular potentials."""
        return AngularPotential.sum_of([c.angular for c in self.centres[: self.k_lead]])

    # -- term lists used by the evaluators ---------------------------------

    def _terms_total(self):
        return [(c.position[0], c.position[1], c.alpha, 1.0, c.angular) for c in self.centres]

    def _terms_rescaled(self, eps: float):
        if not 0.0 <= eps < self.eps_tilde:
            raise InvalidEps(f"eps={eps} outside [0, eps_tilde={self.eps_tilde:.6g})")
        terms = []
        for j, c in enumerate(self.centres):
            if j < self.k_lead:
                w, a = 1.0, self.alpha_min
            else:
                w, a = eps ** (c.alpha - self.alpha_min), c.alpha
                if w == 0.0:
                    continue
            terms.append((eps * c.position[0], eps * c.position[1], a, w, c.angular))
        return terms


@dataclass(frozen=True)
class CentralConfiguration:
    """A critical angle of the leading angular profile with its classification."""

    theta: float
    u_value: float
    u_second: float
    kind: str


# ---------------------------------------------------------------------------
# Point evaluation
# ---------------------------------------------------------------------------

def _term_vgh(x: float, y: float, term, order: int):
    """Value / gradient / Hessian of one term  w * r^(-a) U(theta)  at (x, y).

    Polar derivatives of f = r^(-a) U:
        f_r = -a r^(-a-1) U,   f_rr = a(a+1) r^(-a-2) U,
        H_rt = -(a+1) r^(-a-2) U',   H_tt = r^(-a-2) (-a U + U'').
    """
    cx, cy, a, w, ang = term
    dx = x - cx
    dy = y - cy
    r2 = dx * dx + dy * dy
    r = math.sqrt(r2)
    if r < COLL_EPS:
        raise CollisionPoint(f"evaluation within {COLL_EPS} of centre at ({cx}, {cy})")
    th = math.atan2(dy, dx)
    u0 = ang.value(th)
    rma = r ** (-a)
    v = w * rma * u0
    if order == 0:
        return v, None, None
    u1 = ang.deriv(th)
    c, s = dx / r, dy / r
    f_r = -a * rma / r * u0
    f_t = rma / r * u1  # (1/r) dV/dtheta
    gx = w * (f_r * c - f_t * s)
    gy = w * (f_r * s + f_t * c)
    if order == 1:
        return v, (gx, gy), None
    u2 = ang.second(th)
    rm2 = rma / r2
    h_rr = a * (a + 1.0) * rm2 * u0
    h_rt = -(a + 1.0) * rm2 * u1
    h_tt = rm2 * (-a * u0 + u2)
    cc, ss, cs = c * c, s * s, c * s
    hxx = h_rr * cc - 2.0 * h_rt * cs + h_tt * ss
    hxy = h_rr * cs + h_rt * (cc - ss) - h_tt * cs
    hyy = h_rr * ss + 2.0 * h_rt * cs + h_tt * cc
    return v, (gx, gy), (w * hxx, w * hxy, w * hyy)


def _eval_terms(terms, x: float, y: float, order: int = 2):
    v = 0.0
    gx = gy = 0.0
    hxx = hxy = hyy = 0.0
    for term in terms:
        tv, tg, th_ = _term_vgh(x, y, term, order)
        v += tv
        if order >= 1:
            gx += tg[0]
            gy += tg[1]
        if order >= 2:
            hxx += th_[0]
            hxy += th_[1]
            hyy += th_[2]
    if order == 0:
        return v
    if order == 1:
        return v, np.array([gx, gy])
    return v, np.array([gx, gy]), np.array([[hxx, hxy], [hxy, hyy]])


def eval_total(spec: ProblemSpec, x) -> tuple:
    """Value, gradient and Hessian of the original potential V at ``x``.

    All derivatives are assembled analytically from the polar form of each
    term; no numerical differentiation is involved.
    """
    x = np.asarray(x, dtype=float)
    return _eval_terms(spec._terms_total(), float(x[0]), float(x[1]), order=2)


def eval_rescaled(spec: ProblemSpec, eps: float, y) -> tuple:
    """Value, gradient and Hessian of the rescaled potential V_eps at ``y``.

    At ``eps = 0`` this is exactly the leading homogeneous potential W0.
    """
    y = np.asarray(y, dtype=float)
    return _eval_terms(spec._terms_rescaled(eps), float(y[0]), float(y[1]), order=2)


def eval_wzero(spec: ProblemSpec, y) -> tuple:
    """Value, gradient and Hessian of the leading -alpha-homogeneous part W0."""
    y = np.asarray(y, dtype=float)
    terms = [(0.0, 0.0, spec.alpha_min, 1.0, c.angular) for c in spec.centres[: spec.k_lead]]
    return _eval_terms(terms, float(y[0]), float(y[1]), order=2)


def eval_rescaled_path(spec: ProblemSpec, eps: float, pts: np.ndarray, clamp_guard: float | None = None):
    """Vectorised value and gradient of V_eps on an (n, 2) array of points.

    When ``clamp_guard`` is given, per-centre distances below it are clamped
    to the guard radius (flat continuation, zero gradient from that centre)
    and the affected sample indices are returned as flags.  Without clamping,
    a sample within ``COLL_EPS`` of a centre raises ``CollisionPoint``.
    """
    pts = np.asarray(pts, dtype=float)
    n = pts.shape[0]
    v = np.zeros(n)
    g = np.zeros((n, 2))
    flagged = np.zeros(n, dtype=bool)
    for cx, cy, a, w, ang in spec._terms_rescaled(eps):
        dx = pts[:, 0] - cx
        dy = pts[:, 1] - cy
        r = np.hypot(dx, dy)
        if clamp_guard is not None:
            clamped = r < clamp_guard
            flagged |= clamped
            r = np.maximum(r, clamp_guard)
        elif np.any(r < COLL_EPS):
            raise CollisionPoint("path sample within COLL_EPS of a centre")
        th = np.arctan2(dy, dx)
        u0 = ang.value(th)
        u1 = ang.deriv(th)
        rma = r ** (-a)
        v += w * rma * u0
        f_r = -a * rma / r * u0
        f_t = rma / r * u1
        c, s = dx / r, dy / r
        gx = w * (f_r * c - f_t * s)
        gy = w * (f_r * s + f_t * c)
        if clamp_guard is not None:
            gx = np.where(clamped, 0.0, gx)
            gy = np.where(clamped, 0.0, gy)
        g[:, 0] += gx
        g[:, 1] += gy
    return v, g, flagged


def make_rhs(spec: ProblemSpec, eps: float | None):
    """Scalar-fast closures ``(accel, value_grad, hessian)`` for the flow.

    ``eps=None`` selects the original potential V; otherwise V_eps is used.
    These closures work on plain floats and are the hot path of the
    integrators.
    """
    terms = spec._terms_total() if eps is None else spec._terms_rescaled(eps)

    def accel(x, y):
        _, grad = _eval_terms(terms, x, y, order=1)
        return grad

    def value_grad(x, y):
        return _eval_terms(terms, x, y, order=1)

    def hessian(x, y):
        return _eval_terms(terms, x, y, order=2)[2]

    return accel, value_grad, hessian


# ---------------------------------------------------------------------------
# Central configurations
# ---------------------------------------------------------------------------

def central_configurations(spec: ProblemSpec, grid: int = 720) -> list:
    """All critical angles of U = sum of leading angular profiles, classified.

    Sign changes of U' on a dense grid are refined by Newton (with bisection
    safeguard) to |U'| < 1e-12.  Roots are classified as minimal
    non-degenerate, degenerate (warned, not fatal) or non-minimal, and
    returned sorted by angle.  The minimal non-degenerate sublist is the set
    of admissible outer-arc anchors.
    """
    if grid < 360:
        raise ValueError("grid must be at least 360")
    u = spec.leading_angular()
    th = np.linspace(0.0, 2.0 * math.pi, grid, endpoint=False)
    d1 = np.asarray(u.deriv(th))
    scale = max(float(np.max(np.abs(d1))), abs(u.cosine_coeffs[0]))
    if float(np.max(np.abs(d1))) < 1e-13 * max(scale, 1.0):
        warnings.warn(
            "leading angular potential is constant: every angle is critical",
            DegenerateConfiguration,
        )
        return []

    roots = []
    for i in range(grid):
        a, b = th[i], th[(i + 1) % grid] if i + 1 < grid else 2.0 * math.pi
        fa, fb = d1[i], d1[(i + 1) % grid]
        if fa == 0.0:
            roots.append(float(a))
            continue
        if fa * fb >= 0.0:
            continue
        lo, hi = float(a), float(b)
        t = 0.5 * (lo + hi)
        for _ in range(100):
            f = u.deriv(t)
            if abs(f) < 1e-12:
                break
            df = u.second(t)
            step_ok = False
            if df != 0.0:
                t_new = t - f / df
                if lo < t_new < hi:
                    t = t_new
                    step_ok = True
            if not step_ok:
                if u.deriv(lo) * f < 0.0:
                    hi = t
                else:
                    lo = t
                t = 0.5 * (lo + hi)
        roots.append(t % (2.0 * math.pi))

    roots = sorted(roots)
    merged = []
    for t in roots:
        if merged and min(abs(t - merged[-1]), 2 * math.pi - abs(t - merged[-1])) < 1e-9:
            continue
        merged.append(t)
    if len(merged) > 1 and (2 * math.pi - merged[-1]) + merged[0] < 1e-9:
        merged.pop()

    vals = [float(u.value(t)) for t in merged]
    min_u = min(vals) if vals else float("nan")
    out = []
    for t, v in zip(merged, vals):
        d2 = float(u.second(t))
        if abs(d2) < CC_TOL:
            warnings.warn(
                f"degenerate critical angle at theta={t:.12g}", DegenerateConfiguration
            )
            kind = DEGENERATE
        elif d2 > CC_TOL and v <= min_u + CC_TOL:
            kind = MINIMAL_NONDEGENERATE
        else:
            kind = NON_MINIMAL
        out.append(CentralConfiguration(theta=t, u_value=v, u_second=d2, kind=kind))
    return out


def minimal_configurations(spec: ProblemSpec, grid: int = 720) -> list:
    """The sublist of minimal non-degenerate configurations (the set Xi)."""
    return [cc for cc in central_configurations(spec, grid) if cc.kind == MINIMAL_NONDEGENERATE]


def hessian_eigen_at_cc(spec: ProblemSpec, cc: CentralConfiguration, R: float):
    """Closed-form eigen-data of the W0 Hessian at a minimal configuration.

    Returns ``(lambda_radial, lambda_tangential, s_radial, s_tangential)``
    with the radial/tangential unit eigenvectors at ``R e^{i theta*}``.
    """
    if cc.kind != MINIMAL_NONDEGENERATE:
        raise ValueError("Hessian eigen-data requires a minimal non-degenerate configuration")
    if R <= 0.0:
        raise ValueError("R must be positive")
    a = spec.alpha_min
    scale = R ** (-a - 2.0)
    lam_xi = a * (a + 1.0) * scale * cc.u_value
    lam_tau = scale * (-a * cc.u_value + cc.u_second)
    s_xi = np.array([math.cos(cc.theta), math.sin(cc.theta)])
    s_tau = np.array([-s_xi[1], s_xi[0]])
    return lam_xi, lam_tau, s_xi, s_tau


def admissible_radii(spec: ProblemSpec, grid: int = 720):
    """Working radius and admissible eps bound, with the Hill-region inclusion check.

    ``R_work = m_frak^(1/alpha)/2`` and ``eps_max = R_work/2``.  The inclusion
    ``B_eps subset B_R_work subset {V_eps >= 1}`` is verified on an angular
    grid for ``eps`` in ``{eps_max, eps_max/2}``; failure raises
    ``NoAdmissibleRadius``.
    """
    R = spec.R_work
    eps_max = spec.eps_max
    if not 0.0 < R < spec.m_frak ** (1.0 / spec.alpha_min):
        raise NoAdmissibleRadius("working radius outside (0, m^(1/alpha))")
    th = np.linspace(0.0, 2.0 * math.pi, grid, endpoint=False)
    ring = np.column_stack([R * np.cos(th), R * np.sin(th)])
    for eps in (eps_max, eps_max / 2.0):
        if eps >= R:
            raise NoAdmissibleRadius("B_eps is not contained in B_R_work")
        v, _, _ = eval_rescaled_path(spec, eps, ring)
        if float(np.min(v)) < 1.0:
            raise NoAdmissibleRadius(
                f"V_eps < 1 on |y| = R_work for eps={eps:.6g} (min {float(np.min(v)):.6g})"
            )
    return eps_max, R


# ---------------------------------------------------------------------------
# Problem configuration files
# ---------------------------------------------------------------------------

def load_problem(path) -> tuple:
    """Parse a TOML problem file into ``(ProblemSpec, energy_h)``.

    Expected layout::

        energy_h = 0.01
        [[centres]]
        position = [0.5, 0.0]
        alpha = 1.2
        cosine_coeffs = [1.0, 0.0, 0.3]
        sine_coeffs = []

    Rejects empty centre lists, exponents outside (0, 2) and angular
    profiles that are not strictly positive.
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    rows = raw.get("centres", [])
    if not rows:
        raise ValueError("problem file declares no centres")
    centres = []
    for row in rows:
        ang = AngularPotential(
            tuple(row.get("cosine_coeffs", (1.0,))),
            tuple(row.get("sine_coeffs", ())),
        )
        centres.append(CentreSpec(np.asarray(row["position"], dtype=float), float(row["alpha"]), ang))
    energy_h = raw.get("energy_h", None)
    if energy_h is not None:
        energy_h = float(energy_h)
        if energy_h <= 0.0:
            raise ValueError("energy_h must be positive (the energy level is -energy_h)")
    return ProblemSpec(tuple(centres)), energy_h
