"""
Connection steps, transfer matrices and closed-form transition probabilities.

Amplitudes are tracked in the adiabatic basis transported in parallel from a
real reference time ``t0``, so diagonal couplings vanish identically along any
path used here.  A transfer matrix acts on the vector of WKB coefficients:
entry ``[to, from]`` is the amplitude carried from level ``from`` into level
``to``, and a crossing at a later time multiplies on the left.
"""

from __future__ import annotations

import cmath
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import PathPolyline
from .errors import (CouplingError, IncompleteGraphError, MethodPreconditionError,
                     QuadratureError, ResidueError)
from .model import (ModelSpec, anchor_frame, coupling_exact, eigen_continued, eigenvalues,
                    evaluate_dh, evaluate_h, walk)
from .stokes import (StokesGraph, TurningPoint, _Ambiguous, _match, approach_path,
                     build_graph, find_all_turning_points)

log = logging.getLogger(__name__)

_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)
_GL8_X = 0.5 * (_GL8_X + 1.0)
_GL8_W = 0.5 * _GL8_W

COUNTERCLOCKWISE = "counterclockwise"
CLOCKWISE = "clockwise"


# -- data types ----------------------------------------------------------------

@dataclass(frozen=True)
class ConnectionStep:
    """
    One Stokes-line crossing on the real axis.

    ``coefficient`` is the counterclockwise value (Gamma when the upper level
    of the pair dominates, -1/Gamma otherwise); :func:`step_matrix` applies
    the orientation.  ``matrix_slot`` is (subdominant, dominant), 1-based.
    """

    crossing: float
    tp: TurningPoint
    orientation: str
    coefficient: complex
    exponent: complex
    matrix_slot: tuple
    gamma: complex = 0j

    @property
    def prefactor(self) -> complex:
        return cmath.exp(self.exponent)

    @property
    def signed_coefficient(self) -> complex:
        return self.coefficient if self.orientation == COUNTERCLOCKWISE else -self.coefficient


@dataclass
class TransferMatrix:
    dimension: int
    entries: np.ndarray
    provenance: list = field(default_factory=list)

    def amplitude(self, from_level: int, to_level: int) -> complex:
        return complex(self.entries[to_level - 1, from_level - 1])

    def determinant(self) -> complex:
        return complex(np.linalg.det(self.entries))


@dataclass
class TransitionReport:
    method: str
    from_level: int
    to_level: int
    eta: float
    probability: float
    amplitude: complex | None = None
    raw_probability: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        amp = None if self.amplitude is None else [self.amplitude.real, self.amplitude.imag]
        return {
            "method": self.method,
            "from_level": self.from_level,
            "to_level": self.to_level,
            "eta": self.eta,
            "probability": self.probability,
            "raw_probability": self.raw_probability,
            "amplitude": amp,
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _report(method, from_level, to_level, eta, raw, amplitude=None, diagnostics=None):
    raw = float(raw)
    return TransitionReport(method, from_level, to_level, float(eta),
                            float(min(max(raw, 0.0), 1.0)), amplitude, raw, diagnostics or {})


# -- eigenvalue continuation along ordered nodes -------------------------------

class _EigenvalueTracker:
    """Labelled eigenvalues continued through an ordered sequence of points."""

    def __init__(self, model, t_real):
        w = eigenvalues(model, complex(t_real))
        self.model = model
        self.t = complex(t_real)
        self.e = w[np.argsort(-w.real)]

    def at(self, t, depth=0):
        t = complex(t)
        try:
            e = _match(self.e, eigenvalues(self.model, t))
        except _Ambiguous:
            if depth > 30:
                raise QuadratureError("eigenvalue labels ambiguous along the path", point=t)
            mid = 0.5 * (self.t + t)
            self.at(mid, depth + 1)
            return self.at(t, depth + 1)
        self.t, self.e = t, e
        return e


def _gap_integral(model, vertices, a, b, tol=1e-12):
    """
    Integral of E_a - E_b (0-based labels) along a polyline ending at a turning point.

    Labels start sorted at the real first vertex.  The last leg uses
    s = t_c + (P - t_c) u^2 so the square-root endpoint becomes analytic in u.
    """
    verts = [complex(v) for v in vertices]
    tc, p = verts[-1], verts[-2]
    prev = None
    m = 4
    while m <= 1024:
        tr = _EigenvalueTracker(model, verts[0].real)
        acc = 0j
        for v0, v1 in zip(verts[:-2], verts[1:-1]):
            n = m * max(1, int(math.ceil(abs(v1 - v0))))
            for k in range(n):
                lo = v0 + (v1 - v0) * k / n
                hi = v0 + (v1 - v0) * (k + 1) / n
                for x, w in zip(_GL8_X, _GL8_W):
                    e = tr.at(lo + x * (hi - lo))
                    acc += w * (e[a] - e[b]) * (hi - lo)
        # last leg: u from 1 down to 0 over geometric panels
        edges = [2.0 ** (-k) for k in range(21)]
        for u_hi, u_lo in zip(edges, edges[1:]):
            for j in range(m):
                hi = u_hi - (u_hi - u_lo) * j / m
                lo = u_hi - (u_hi - u_lo) * (j + 1) / m
                for x, w in zip(_GL8_X[::-1], _GL8_W[::-1]):
                    u = lo + x * (hi - lo)
                    e = tr.at(tc + (p - tc) * u * u)
                    acc -= w * (e[a] - e[b]) * 2 * u * (p - tc) * (hi - lo)
        if prev is not None and abs(acc - prev) <= tol * max(1.0, abs(acc)):
            return acc
        prev = acc
        m *= 2
    raise QuadratureError("gap integral did not converge", point=tc, partial=prev)


# -- per turning point data ----------------------------------------------------

def _path_vertices(tp_loc, others, t0):
    verts, _ = approach_path(tp_loc, others)
    out = [complex(t0, 0.0)]
    if abs(verts[0] - out[0]) > 0:
        out.append(verts[0])
    out.extend(verts[1:-1])
    out.append(complex(tp_loc))
    return out


def _branch_to(model, verts, standoff):
    """Transported frames along ``verts`` up to ``standoff`` short of the final vertex."""
    tc, p = verts[-1], verts[-2]
    end = tc + (p - tc) / abs(p - tc) * standoff
    return eigen_continued(model, PathPolyline(tuple(verts[:-1] + [end])))


def _circle_mean(model, frame, tc, radius, a, b, panels):
    """Mean of (t - t_c) g_ab over one sweep of the circle, starting at the approach angle."""
    zeta = cmath.phase(frame.t - tc)
    cur = walk(model, frame, [tc + radius * cmath.exp(1j * zeta)], keep_all=False)[-1]
    acc = 0j
    h = 2 * math.pi / panels
    for k in range(panels):
        for x, w in zip(_GL8_X, _GL8_W):
            ang = zeta + (k + x) * h
            t = tc + radius * cmath.exp(1j * ang)
            cur = walk(model, cur, [t], keep_all=False)[-1]
            acc += w * (t - tc) * coupling_exact(model, cur, a, b)
    return acc / panels


@dataclass
class _Local:
    """Cached data for one turning point along one reference path."""

    tp: TurningPoint
    t0: float
    vertices: list
    branch: object
    gamma: complex
    gamma_spread: float
    gap_integral: complex   # integral of E_a - E_b from t0 to t_c


def _spacing(loc, others):
    d = [abs(o - loc) for o in others if abs(o - loc) > 1e-12]
    return min(d + [abs(loc.imag)])


def gamma_coefficient(model: ModelSpec, tp: TurningPoint, branch=None, t0=None,
                      others=(), rel_check: float = 1e-4):
    """
    Gamma = 4 times the residue of g_ab at the turning point.

    The coupling is continued in the transported gauge from the approach point
    around circles of radius r, r/4 and r/16; Richardson extrapolation in
    r^(1/2) removes half-integer branch terms, and the spread between
    extrapolation levels is the consistency check.

    Returns
    -------
    (gamma, spread)
    """
    a, b = tp.pair[0] - 1, tp.pair[1] - 1
    loc = complex(tp.location)
    spacing = _spacing(loc, others)
    if branch is None:
        if t0 is None:
            t0 = loc.real - 1.0
        branch = _branch_to(model, _path_vertices(loc, others, t0), 0.05 * spacing)
    frame = branch.final
    r0 = 0.5 * abs(frame.t - loc)
    means = []
    for r in (r0, r0 / 4, r0 / 16):
        m1 = _circle_mean(model, frame, loc, r, a, b, 16)
        m2 = _circle_mean(model, frame, loc, r, a, b, 32)
        if abs(m1 - m2) > 1e-8 * max(abs(m2), 1e-300):
            m2 = _circle_mean(model, frame, loc, r, a, b, 64)
        means.append(m2)
    lvl1 = [2 * means[1] - means[0], 2 * means[2] - means[1]]
    res = (8 * lvl1[1] - lvl1[0]) / 7
    spread = abs(res - lvl1[1]) / max(abs(res), 1e-300)
    if abs(means[2]) < 1e-10:
        raise ResidueError(f"coupling of pair {tp.pair} has no pole at {loc}")
    if spread > rel_check:
        raise ResidueError(f"residue of g{tp.pair} at {loc} unstable across radii "
                           f"(relative spread {spread:.2e})")
    return 4 * res, spread


def theta_at_tp(model: ModelSpec, tp: TurningPoint, branch=None, t0=None, others=()):
    """
    tan(theta/2) at the turning point from the mixing-angle relation theta' = 2i g_ab.

    theta is integrated from the real anchor below (above) the turning point
    towards it; tan(theta/2) is evaluated at standoffs shrinking by 4 and
    Richardson-extrapolated in powers of the square root of the standoff.
    For two-level models the result is rotated into the eigenvector gauge of
    the branch, the gauge in which :func:`gamma_coefficient` works.
    """
    a, b = tp.pair[0] - 1, tp.pair[1] - 1
    loc = complex(tp.location)
    if branch is None:
        if t0 is None:
            t0 = loc.real - 1.0
        verts = _path_vertices(loc, others, t0)
        branch = eigen_continued(model, PathPolyline(tuple(verts[:-1])))
    # frame at the start of the last leg
    p = branch.final.t
    frame = branch.final
    if len(branch.path.vertices) >= 2 and abs(p - loc) < 0.5 * _spacing(loc, others):
        # branch ended at a standoff: rewind to the start of the last leg
        p = branch.path.vertices[-2]
        frame = next(s for s in branch.samples if abs(s.t - p) < 1e-12 * (1 + abs(p)))
    theta0 = 0.0
    gauge = 1.0 + 0j
    if model.dimension == 2 and abs(p.imag) < 1e-14:
        hm = evaluate_h(model, p.real)
        theta0 = math.atan2(abs(hm[1, 0]), 0.5 * (hm[0, 0] - hm[1, 1]).real)
        # the mixing-angle vectors are parallel transported, so their phase
        # relative to the branch's vectors is fixed along the path; in that
        # gauge theta' = 2i e^{i phi} g_12
        phi = cmath.phase(hm[1, 0])
        c, s = math.cos(theta0 / 2), math.sin(theta0 / 2)
        angle_vecs = (np.array([c, cmath.exp(1j * phi) * s]),
                      np.array([-cmath.exp(-1j * phi) * s, c]))
        ph = [np.vdot(angle_vecs[k], frame.right[:, k]) for k in (a, b)]
        gauge = cmath.exp(1j * phi) * ph[0] / ph[1]
    n_hat = (p - loc) / abs(p - loc)
    d_top = abs(p - loc)
    delta0 = 0.05 * d_top
    standoffs = [delta0 * 4.0 ** (-k) for k in range(6)]
    # cumulative integral of g_ab ds in the log-distance variable
    cur = frame
    acc = 0j
    values = []
    lam_hi = math.log(d_top)
    m = 24
    for target in standoffs:
        lam_lo = math.log(target)
        n = max(1, int(math.ceil((lam_hi - lam_lo) * m / math.log(4))))
        hstep = (lam_lo - lam_hi) / n
        for k in range(n):
            for x, w in zip(_GL8_X, _GL8_W):
                lam = lam_hi + (k + x) * hstep
                d = math.exp(lam)
                t = loc + n_hat * d
                cur = walk(model, cur, [t], keep_all=False)[-1]
                acc += w * coupling_exact(model, cur, a, b) * n_hat * d * hstep
        lam_hi = lam_lo
        theta = theta0 + 2j * gauge * acc
        values.append(cmath.tan(theta / 2))
    # Richardson in sqrt(delta): successive ratios 2, 4, 8, ...
    table = list(values)
    for p_exp in (1, 2, 3):
        f = 2.0 ** p_exp
        table = [(f * table[i + 1] - table[i]) / (f - 1) for i in range(len(table) - 1)]
    return complex(table[-1] / gauge)


def _local(model, tp, t0, others, cache):
    key = (complex(tp.location), float(t0))
    if key in cache:
        return cache[key]
    loc = complex(tp.location)
    spacing = _spacing(loc, others)
    verts = _path_vertices(loc, others, t0)
    branch = _branch_to(model, verts, 0.05 * spacing)
    gamma, spread = gamma_coefficient(model, tp, branch=branch, others=others)
    a, b = tp.pair[0] - 1, tp.pair[1] - 1
    gi = _gap_integral(model, verts, a, b)
    out = _Local(tp, t0, verts, branch, gamma, spread, gi)
    cache[key] = out
    return out


def exp_prefactor(model: ModelSpec, tp: TurningPoint, t0: float, dominant: int | None = None,
                  others=()) -> complex:
    """
    exp(-i eta int_{t0}^{t_c} (E_dom - E_sub) ds) along the cut-avoiding path.

    ``dominant`` defaults to the lower level of the pair for upper-half turning
    points and the upper level otherwise, the choice that makes the factor small.
    """
    i, j = tp.pair
    if dominant is None:
        dominant = j if tp.location.imag > 0 else i
    verts = _path_vertices(complex(tp.location), others, t0)
    if abs(complex(tp.location) - t0) < 1e-14:
        return 1.0 + 0j
    gi = _gap_integral(model, verts, i - 1, j - 1)
    sign = 1.0 if dominant == i else -1.0
    return cmath.exp(-1j * model.eta * sign * gi)


# -- transfer matrices ---------------------------------------------------------

def step_matrix(step: ConnectionStep, n: int) -> np.ndarray:
    m = np.eye(n, dtype=complex)
    r, c = step.matrix_slot
    m[r - 1, c - 1] = step.signed_coefficient * step.prefactor
    return m


def _zero_eps_points(model):
    base = model.with_epsilon(0.0)
    return base, find_all_turning_points(base)


def _match_tp(tp, candidates):
    same = [c for c in candidates if c.pair == tp.pair]
    if not same:
        raise IncompleteGraphError(f"no unperturbed turning point matches {tp.location}")
    return min(same, key=lambda c: abs(c.location - tp.location))


def default_sweep(graph: StokesGraph, margin: float = 1.0):
    xs = [x for x, _ in graph.crossings] + [tp.location.real for tp in graph.turning_points]
    if not xs:
        return -margin, margin
    return min(xs) - margin, max(xs) + margin


def connection_steps(graph: StokesGraph, model: ModelSpec, t0: float, t1: float,
                     cache=None):
    """ConnectionStep for every principal-sheet crossing in [t0, t1], ascending."""
    if graph.incomplete:
        raise IncompleteGraphError("Stokes graph has lines that failed to trace")
    base, tps0 = _zero_eps_points(model)
    locs0 = [tp.location for tp in tps0]
    cache = {} if cache is None else cache
    steps = []
    for x, idx in graph.crossings:
        if not t0 <= x <= t1:
            continue
        line = graph.lines[idx]
        tp0 = _match_tp(line.origin, tps0)
        loc = _local(base, tp0, t0, locs0, cache)
        i, j = tp0.pair
        dom = line.dominant_index
        sub = j if dom == i else i
        coef = loc.gamma if dom == i else -1.0 / loc.gamma
        sign = 1.0 if dom == i else -1.0
        exponent = -1j * base.eta * sign * loc.gap_integral
        orient = COUNTERCLOCKWISE if tp0.location.imag > 0 else CLOCKWISE
        steps.append(ConnectionStep(float(x), tp0, orient, complex(coef), complex(exponent),
                                    (sub, dom), complex(loc.gamma)))
    return steps


def transfer_product(graph: StokesGraph, model: ModelSpec, t0: float | None = None,
                     t1: float | None = None, cache=None) -> TransferMatrix:
    lo, hi = default_sweep(graph)
    t0 = lo if t0 is None else float(t0)
    t1 = hi if t1 is None else float(t1)
    if not t0 < t1:
        raise ValueError("need t0 < t1")
    n = model.dimension
    steps = connection_steps(graph, model, t0, t1, cache)
    total = np.eye(n, dtype=complex)
    for st in steps:
        total = step_matrix(st, n) @ total
    tm = TransferMatrix(n, total, steps)
    det = tm.determinant()
    if abs(det - 1) > 1e-10 * max(1.0, float(np.max(np.abs(total))) ** n):
        log.warning("transfer matrix determinant %s deviates from 1", det)
    return tm


def _check_levels(model, *levels):
    for lvl in levels:
        if not 1 <= int(lvl) <= model.dimension:
            raise MethodPreconditionError(f"level {lvl} outside 1..{model.dimension}")


def transition_probability_ewkb(model: ModelSpec, from_level: int, to_level: int,
                                t0: float | None = None, t1: float | None = None,
                                graph: StokesGraph | None = None,
                                epsilon_policy: str = "auto") -> TransitionReport:
    """Probability |C[to, from]|^2 of the connection product over the real sweep."""
    _check_levels(model, from_level, to_level)
    if graph is None:
        graph = build_graph(model, epsilon_policy=epsilon_policy)
    tm = transfer_product(graph, model, t0, t1)
    amp = tm.amplitude(from_level, to_level)
    steps = [{
        "crossing": st.crossing,
        "tp": st.tp.location,
        "pair": list(st.tp.pair),
        "orientation": st.orientation,
        "dominant": st.matrix_slot[1],
        "coefficient_abs": abs(st.coefficient),
        "gamma": st.gamma,
        "prefactor_abs": abs(st.prefactor),
    } for st in tm.provenance]
    diag = {"steps": steps, "graph_epsilon": graph.epsilon,
            "determinant": tm.determinant(),
            "virtual_turning_point_candidates": len(graph.intersection_flags),
            "sheet_flags": list(graph.sheet_flags)}
    return _report("ewkb", from_level, to_level, model.eta, abs(amp) ** 2, amp, diag)


# -- two-level closed forms ----------------------------------------------------

def _require_two_level(model):
    if model.dimension != 2:
        raise MethodPreconditionError("DDP-type formulas need a two-level model")


def _upper_points(model):
    base = model.with_epsilon(0.0)
    tps = find_all_turning_points(base)
    return base, [tp for tp in tps if tp.location.imag > 0 and tp.simple], \
        [tp.location for tp in tps]


def _default_t0(tps):
    return min(tp.location.real for tp in tps) - 1.0 if tps else -1.0


def _slanted_vertices(tc, others, t0):
    """Real axis to a foot point beside t_c, then straight in, passing no other cut."""
    spacing = _spacing(tc, others)
    height = abs(tc.imag)
    for k in (0.5, -0.5, 1.0, -1.0, 0.25, -0.25, 2.0, -2.0):
        foot = tc.real - k * height
        ok = True
        for o in others:
            if abs(o - tc) < 1e-12 or o.imag * tc.imag <= 0:
                continue
            lo, hi = sorted((foot, tc.real))
            if not lo - 0.1 * spacing <= o.real <= hi + 0.1 * spacing:
                continue
            u = (o.real - foot) / (tc.real - foot)
            y = min(max(u, 0.0), 1.0) * abs(tc.imag)
            if y > abs(o.imag) - 0.1 * spacing:
                ok = False
                break
        if ok:
            return [complex(t0, 0.0), complex(foot, 0.0), tc]
    raise MethodPreconditionError(f"no cut-free straight approach to {tc}")


def gddp_probability(model: ModelSpec, t0: float | None = None) -> TransitionReport:
    """
    |sum_k Gamma_k exp(-i eta int_{t0}^{t_k}(E_2 - E_1))|^2 over upper-half turning points.

    Each exponent and Gamma_k is computed along a slanted final leg
    (see :func:`_slanted_vertices`), independently of the vertical approach
    used by the connection product.
    """
    _require_two_level(model)
    base, ups, locs = _upper_points(model)
    t0 = _default_t0(ups) if t0 is None else float(t0)
    amp = 0j
    terms = []
    for tp in ups:
        verts = _slanted_vertices(complex(tp.location), locs, t0)
        standoff = 0.05 * _spacing(tp.location, locs)
        branch = _branch_to(base, verts, standoff)
        gamma, _ = gamma_coefficient(base, tp, branch=branch, others=locs)
        gi = _gap_integral(base, verts, 1, 0)
        term = gamma * cmath.exp(-1j * base.eta * gi)
        terms.append({"tp": tp.location, "gamma": gamma, "term": term})
        amp += term
    return _report("gddp", 1, 2, model.eta, abs(amp) ** 2, amp, {"terms": terms, "t0": t0})


def _arg_g_limit(model, tp, branch, a, b):
    """arg of g_ab at t_c approached along the branch's final direction."""
    frame = branch.final
    loc = complex(tp.location)
    n_hat = (frame.t - loc) / abs(frame.t - loc)
    d0 = abs(frame.t - loc)
    vals = []
    cur = frame
    for k in range(7):
        d = d0 * 4.0 ** (-k)
        if k:
            cur = walk(model, cur, [loc + n_hat * d], keep_all=False)[-1]
        vals.append(n_hat * d * coupling_exact(model, cur, a, b))
    table = vals
    for p_exp in (1, 2, 3, 4):
        f = 2.0 ** p_exp
        table = [(f * table[i + 1] - table[i]) / (f - 1) for i in range(len(table) - 1)]
    residue = table[-1]
    zeta = cmath.phase(n_hat)
    return cmath.phase(residue) - zeta, residue


def ddp_probability(model: ModelSpec, t0: float | None = None) -> TransitionReport:
    """
    |sum_k exp(-i eta int_{t0}^{t_k}(E_2 - E_1) - i arg g_12(t_k))|^2.

    arg g_12 at a turning point is the argument of the limit along the
    approach direction, with that direction's angle removed.
    """
    _require_two_level(model)
    base, ups, locs = _upper_points(model)
    t0 = _default_t0(ups) if t0 is None else float(t0)
    amp = 0j
    terms = []
    for tp in ups:
        verts = _path_vertices(tp.location, locs, t0)
        branch = _branch_to(base, verts, 0.05 * _spacing(tp.location, locs))
        arg_g, residue = _arg_g_limit(base, tp, branch, 0, 1)
        gi = _gap_integral(base, verts, 1, 0)
        term = cmath.exp(-1j * base.eta * gi - 1j * arg_g)
        terms.append({"tp": tp.location, "arg_g12": arg_g, "term": term})
        amp += term
    return _report("ddp", 1, 2, model.eta, abs(amp) ** 2, amp, {"terms": terms, "t0": t0})


def perturbative_amplitude(model: ModelSpec, t0: float, t1: float,
                           rel_tol: float = 1e-6) -> TransitionReport:
    """
    First-order amplitude int_{t0}^{t1} exp(-i eta Phi(s)) g_12(s) ds on the real axis.

    Phi is the running integral of E_2 - E_1.  Panels are capped at a fixed
    fraction of the local oscillation period and halved until two successive
    results agree to ``rel_tol``.
    """
    _require_two_level(model)
    if not t0 < t1:
        raise ValueError("need t0 < t1")
    prev = None
    frac = 0.25
    for _ in range(8):
        amp = _perturbative_pass(model, t0, t1, frac)
        if prev is not None and abs(amp - prev) <= rel_tol * max(abs(amp), 1e-12):
            return _report("perturbative", 1, 2, model.eta, abs(amp) ** 2, amp,
                           {"t0": t0, "t1": t1, "panel_fraction": frac})
        prev = amp
        frac /= 2
    raise QuadratureError("perturbative amplitude did not converge", partial=prev)


def _perturbative_pass(model, t0, t1, frac):
    frame = anchor_frame(model, t0)
    x = t0
    phase = 0.0
    amp = 0j
    while x < t1:
        gap = float((frame.energies[0] - frame.energies[1]).real)
        dh = float(np.linalg.norm(evaluate_dh(model, x))) + 1e-300
        h = min(t1 - x, frac * 2 * math.pi / (model.eta * gap), 4 * frac * gap / dh)
        nodes = x + _GL8_X * h
        frames = walk(model, frame, list(nodes) + [x + h], keep_all=False)
        panel = 0j
        for k, (fr, w) in enumerate(zip(frames[:-1], _GL8_W)):
            # phase from the panel start to the node
            local = 0.0
            for y, wy in zip(_GL8_X, _GL8_W):
                e = eigenvalues(model, x + y * (nodes[k] - x))
                e = np.sort(e.real)[::-1]
                local += wy * (e[1] - e[0]) * (nodes[k] - x)
            g = coupling_exact(model, fr, 0, 1)
            panel += w * h * cmath.exp(-1j * model.eta * (phase + local)) * g
        full = 0.0
        for y, wy in zip(_GL8_X, _GL8_W):
            e = np.sort(eigenvalues(model, x + y * h).real)[::-1]
            full += wy * (e[1] - e[0]) * h
        amp += panel
        phase += full
        frame = frames[-1]
        x = frame.t.real
    return amp
