"""Symbol alphabets, first-return readings, and finite-window semi-conjugacy.

Three alphabets label the orbit blocks: the full alphabet pairs a partition
of the centres with a minimal configuration (``Q``), the collisional one
records only the configuration (``S``), and the two-centre problem with a
single configuration uses the centres themselves (``B``).  Words are read
off trajectories through the outward crossings of the working sphere and the
topological class of the excursions between them; prescribed words are
realized through the gluing machinery and re-read for the commutation check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import glue, inner, potential as pot
from .errors import (
    AmbiguousInnerClass,
    AmbiguousWinding,
    InvariantViolation,
    SemiconjugacyFailure,
    UnclassifiableCrossing,
)

MODE_Q = "Q"
MODE_S = "S"
MODE_B = "B"


@dataclass(frozen=True)
class Alphabet:
    """Symbol set for one of the three coding modes."""

    mode: str
    m: int
    n_centres: int

    def __post_init__(self):
        if self.mode == MODE_Q:
            if not ((self.n_centres >= 3 and self.m >= 1) or (self.n_centres >= 2 and self.m >= 2)):
                raise ValueError("the full alphabet needs N>=3, m>=1 or N>=2, m>=2")
        elif self.mode == MODE_S:
            if self.m < 2:
                raise ValueError("the configuration alphabet needs m >= 2")
        elif self.mode == MODE_B:
            if not (self.n_centres == 2 and self.m == 1):
                raise ValueError("the two-centre alphabet needs N = 2 and m = 1")
        else:
            raise ValueError(f"unknown alphabet mode {self.mode!r}")

    @property
    def size(self) -> int:
        if self.mode == MODE_Q:
            return self.m * (2 ** (self.n_centres - 1) - 1)
        if self.mode == MODE_S:
            return self.m
        return 2

    @classmethod
    def for_spec(cls, spec, mode: str) -> "Alphabet":
        return cls(mode, len(pot.minimal_configurations(spec)), spec.n_centres)


@dataclass(frozen=True)
class SymbolSequence:
    """Finite word over an alphabet, optionally marked periodic."""

    word: tuple
    alphabet: Alphabet
    periodic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "word", tuple(int(w) for w in self.word))
        if any(not 0 <= w < self.alphabet.size for w in self.word):
            raise ValueError(f"symbol indices must lie in [0, {self.alphabet.size})")

    def __len__(self):
        return len(self.word)

    def rotated(self, k: int) -> "SymbolSequence":
        n = len(self.word)
        k %= n
        return SymbolSequence(self.word[k:] + self.word[:k], self.alphabet, self.periodic)


def split_index(j: int, m: int):
    """Quotient/remainder decomposition j = l m + r of a full-alphabet index."""
    if j < 0:
        raise ValueError("symbol index must be non-negative")
    if m < 1:
        raise ValueError("m must be at least 1")
    return divmod(j, m)


def compose_index(l: int, r: int, m: int) -> int:
    if not 0 <= r < m:
        raise ValueError("configuration index out of range")
    return l * m + r


def shift_metric(a, b):
    """Partial sum of the shift-space distance over aligned finite windows.

    Windows must have equal odd length ``2M + 1`` and are centred at index 0;
    the neglected tail of the series is bounded by ``2^(2 - M)``, which is
    returned alongside the value.
    """
    a = list(a)
    b = list(b)
    if len(a) != len(b):
        raise ValueError("windows must be aligned (equal length)")
    if len(a) % 2 != 1:
        raise ValueError("windows must have odd length 2M + 1")
    M = (len(a) - 1) // 2
    value = sum((a[i] != b[i]) / 2.0 ** abs(i - M) for i in range(len(a)))
    return value, 2.0 ** (2 - M)


# ---------------------------------------------------------------------------
# Crossing detection and symbol reading
# ---------------------------------------------------------------------------

@dataclass
class _Crossing:
    t: float
    x: np.ndarray
    v: np.ndarray
    outward: bool
    index: int  # sample index just before/at the crossing (extended array)


def _detect_crossings(t, x, v, R, periodic: bool):
    """Sphere crossings of a sampled trajectory, cyclically extended if periodic."""
    if periodic:
        period = t[-1] - t[0]
        t = np.concatenate([t, t[1:] + period])
        x = np.vstack([x, x[1:]])
        v = np.vstack([v, v[1:]])
    s = np.hypot(x[:, 0], x[:, 1]) - R
    band = 1e-6 * R
    cls = np.where(s > band, 1, np.where(s < -band, -1, 0))
    crossings = []
    last = 0
    last_idx = -1
    for i in range(len(s)):
        if cls[i] == 0:
            continue
        if last != 0 and cls[i] != last:
            # a crossing happened between last_idx and i
            zero_idx = [j for j in range(last_idx + 1, i) if cls[j] == 0]
            if zero_idx:
                j = zero_idx[len(zero_idx) // 2]
                tc, xc, vc = float(t[j]), x[j].copy(), v[j].copy()
            else:
                j = i - 1
                f = s[j] / (s[j] - s[j + 1])
                tc = float(t[j] + f * (t[j + 1] - t[j]))
                xc = x[j] + f * (x[j + 1] - x[j])
                vc = v[j] + f * (v[j + 1] - v[j])
            xc = xc * (R / float(np.hypot(*xc)))
            crossings.append(_Crossing(tc, xc, vc, cls[i] > 0, j))
        last = cls[i]
        last_idx = i
    return crossings, t, x, v


def _config_of(x, ccs, width):
    th = math.atan2(x[1], x[0])
    best, bestd = None, math.inf
    for r, cc in enumerate(ccs):
        d = abs((th - cc.theta + math.pi) % (2.0 * math.pi) - math.pi)
        if d < bestd:
            best, bestd = r, d
    if bestd > width:
        raise UnclassifiableCrossing(
            f"crossing at angle {th:.4f} lies outside every configuration neighbourhood"
        )
    return best


def read_symbols(orbit, spec, eps, R, alphabet: Alphabet, anchor: int = 0,
                 nbhd_width: float = 0.15) -> SymbolSequence:
    """Symbol sequence of a periodic orbit (or one-period trajectory).

    Outward crossings of the sphere are anchored to their nearest minimal
    configuration; the excursion preceding the next outward crossing is
    classified by the winding convention of the alphabet.  Transversality of
    every crossing is required.  ``anchor`` selects the outward crossing the
    reading starts from.
    """
    traj = orbit.trajectory if isinstance(orbit, glue.PeriodicOrbit) else orbit
    ccs = pot.minimal_configurations(spec)
    if len(ccs) != alphabet.m:
        raise ValueError("alphabet does not match the spec's configuration count")
    crossings, t_ext, x_ext, v_ext = _detect_crossings(traj.t, traj.x, traj.v, R, periodic=True)
    period = traj.t[-1] - traj.t[0]
    t0 = traj.t[0]
    base = []
    for c in crossings:
        t_mod = t0 + (c.t - t0) % period
        if not any(abs(t_mod - u) < 1e-9 * max(period, 1.0) for u, _ in base):
            base.append((t_mod, c))
    base.sort(key=lambda item: item[0])
    base = [c for _, c in base]
    for c in base:
        if abs(float(np.dot(c.x, c.v))) <= 1e-8:
            raise UnclassifiableCrossing(f"tangential sphere crossing at t = {c.t:.6g}")
    outward = [c for c in base if c.outward]
    if not outward:
        raise UnclassifiableCrossing("the trajectory never crosses the sphere outward")

    # map every outward crossing (cyclically) to the inner excursion that
    # follows it: the stretch from the next inward crossing to the next
    # outward crossing
    all_sorted = sorted(crossings, key=lambda c: c.t)
    word = []
    n_out = len(outward)
    for k in range(n_out):
        c_out = outward[(anchor + k) % n_out]
        r = _config_of(c_out.x, ccs, nbhd_width)
        following = [c for c in all_sorted if c.t > c_out.t + 1e-12]
        if not following or following[0].outward:
            raise UnclassifiableCrossing("missing inward crossing after an outward one")
        c_in = following[0]
        nxt = [c for c in following[1:] if c.outward]
        if not nxt:
            raise UnclassifiableCrossing("missing outward crossing after an excursion")
        c_next = nxt[0]
        if alphabet.mode == MODE_S:
            word.append(r)
            continue
        i0, i1 = c_in.index + 1, c_next.index + 1
        pts = np.vstack([c_in.x, x_ext[i0:i1], c_next.x])
        keep = np.hypot(pts[:, 0], pts[:, 1]) <= R * (1.0 - 1e-12)
        keep[0] = keep[-1] = True
        pts = pts[keep]
        if alphabet.mode == MODE_Q:
            try:
                w = inner._loop_windings(inner.close_path(pts, R, "sphere"), inner._centres_xy(spec, eps))
            except AmbiguousWinding as exc:
                raise UnclassifiableCrossing(str(exc))
            wv = inner.WindingVector(tuple(int(a) % 2 for a in w))
            if not wv.admissible:
                raise UnclassifiableCrossing(
                    f"inner excursion with inadmissible winding parities {wv.parities}"
                )
            l_idx = inner.partition_of(wv).index
            word.append(compose_index(l_idx, r, alphabet.m))
        else:  # MODE_B
            try:
                w = inner._loop_windings(inner.close_path(pts, R, "chord"), inner._centres_xy(spec, eps))
            except AmbiguousWinding as exc:
                raise AmbiguousInnerClass(str(exc))
            aw = np.abs(w)
            if aw[0] == 1 and aw[1] == 0:
                word.append(0)
            elif aw[0] == 0 and aw[1] == 1:
                word.append(1)
            else:
                raise AmbiguousInnerClass(f"excursion windings {tuple(w)} fit neither centre class")
    return SymbolSequence(tuple(word), alphabet)


def realize_word(sequence: SymbolSequence, spec, eps, R,
                 opts: glue.GlueOpts = glue.DEFAULT_GLUE) -> glue.PeriodicOrbit:
    """Periodic orbit whose reading reproduces ``sequence``.

    Delegates to the junction minimization with the inner-arc constraint of
    the alphabet mode, then re-reads the orbit from its first outward
    crossing and verifies the word.
    """
    orbit = glue.minimize_junctions(sequence, spec, eps, R, opts)
    if sequence.alphabet.mode != MODE_S:
        got = read_symbols(orbit, spec, eps, R, sequence.alphabet, anchor=0,
                           nbhd_width=max(0.15, 3.0 * opts.u_nbhd))
        if got.word != sequence.word:
            raise InvariantViolation(
                f"realized orbit reads back as {got.word}, expected {sequence.word}"
            )
    return orbit


@dataclass
class RotationCheck:
    k: int
    expected: tuple
    got: tuple
    ok: bool


@dataclass
class SemiconjugacyReport:
    word: tuple
    checks: list
    ok: bool

    def write_text(self, fh):
        fh.write("rotation,expected,got,ok\n")
        for c in self.checks:
            fh.write(
                "%d,%s,%s,%d\n"
                % (c.k, "-".join(map(str, c.expected)), "-".join(map(str, c.got)), c.ok)
            )
        fh.write("# ok = %d\n" % self.ok)


def verify_semiconjugacy(sequence: SymbolSequence, spec, eps, R,
                         opts: glue.GlueOpts = glue.DEFAULT_GLUE,
                         orbit: glue.PeriodicOrbit | None = None) -> SemiconjugacyReport:
    """Finite-window commutation of the first-return map with the shift.

    The word is realized, its ``n`` outward crossings enumerated, and the
    reading anchored at crossing ``k`` is compared against the ``k``-fold
    shift of the word, for every ``k``.
    """
    if len(sequence) < 1:
        raise ValueError("the word must contain at least one symbol")
    if orbit is None:
        orbit = realize_word(sequence, spec, eps, R, opts)
    checks = []
    width = max(0.15, 3.0 * opts.u_nbhd)
    for k in range(len(sequence)):
        expected = sequence.rotated(k).word
        try:
            got = read_symbols(orbit, spec, eps, R, sequence.alphabet, anchor=k,
                               nbhd_width=width).word
        except (UnclassifiableCrossing, AmbiguousInnerClass) as exc:
            raise SemiconjugacyFailure(k, str(exc))
        checks.append(RotationCheck(k, expected, got, got == expected))
    return SemiconjugacyReport(sequence.word, checks, all(c.ok for c in checks))


# ---------------------------------------------------------------------------
# Word files
# ---------------------------------------------------------------------------

def save_word(sequence: SymbolSequence, fh):
    close = False
    if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
        fh = open(fh, "w")
        close = True
    try:
        for w in sequence.word:
            fh.write("%d\n" % w)
    finally:
        if close:
            fh.close()


def load_word(path, alphabet: Alphabet) -> SymbolSequence:
    with open(path) as fh:
        word = [int(line.strip()) for line in fh if line.strip()]
    return SymbolSequence(tuple(word), alphabet)
