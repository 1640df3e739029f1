"""
Turning points and Stokes graphs.

A Stokes line of the level pair (a, b) issuing from a turning point t_c is a
curve on which ``Re  int_{t_c}^t (E_a - E_b) ds = 0``.  Level ``a`` dominates on
the line iff the imaginary part of that integral is positive there.  Branch
cuts are taken vertically away from the real axis, so the eigenvalue sheet at a
point is the one reached by continuing straight up (or down) from the real axis.
"""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .analytic import PathPolyline, count_zeros, find_root
from .errors import (BoundaryZeroError, DegenerateGraphError, RootFindingError)
from .model import (BranchPath, ModelSpec, _closest_pair, discriminant, eigen_continued,
                    eigenvalues, evaluate_dh)

log = logging.getLogger(__name__)

# Gauss-Legendre nodes on [0, 1] for segment integrals of E_a - E_b
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W

EPSILON_LADDER = (0.01, 0.05)


@dataclass(frozen=True)
class TurningPoint:
    """Zero of E_i - E_j (levels 1-based, i < j) with the approach used to label it."""

    location: complex
    pair: tuple
    order: int = 1
    sheet_anchor: BranchPath | None = field(default=None, repr=False, compare=False)

    @property
    def upper(self) -> bool:
        return self.location.imag > 0

    @property
    def simple(self) -> bool:
        return self.order == 1


@dataclass(frozen=True)
class StokesLine:
    origin: TurningPoint
    polyline: PathPolyline
    dominant_index: int
    real_crossing: float | None
    termination: str
    samples_f: tuple = field(default=(), repr=False, compare=False)
    extra_crossings: tuple = ()

    TERMINATIONS = ("reached_max_radius", "hit_turning_point", "hit_cut_boundary", "step_failure")

    @property
    def subdominant_index(self) -> int:
        i, j = self.origin.pair
        return j if self.dominant_index == i else i


@dataclass
class StokesGraph:
    turning_points: list
    lines: list
    crossings: list
    degeneracy_flags: list
    intersection_flags: list
    epsilon: float = 0.0
    sheet_flags: list = field(default_factory=list)
    incomplete: bool = False

    @property
    def degenerate(self) -> bool:
        return bool(self.degeneracy_flags)


# -- turning points ----------------------------------------------------------

def _disc(model):
    return lambda t: discriminant(model, t)


def _winding_degree(model):
    """Degree of the discriminant polynomial from the winding on a large circle."""
    return count_zeros(_disc(model), (-1e3, 1e3, -1e3, 1e3))


def default_window(model: ModelSpec):
    """Half-width R such that [-R, R]^2 holds every zero of the discriminant."""
    total = _winding_degree(model)
    r = 1.0
    while r < 1e3:
        if count_zeros(_disc(model), (-r, r, -r, r)) == total:
            return 1.25 * r
        r *= 2
    return 1e3


def _seed(f, rect, n=9):
    xmin, xmax, ymin, ymax = rect
    xs = np.linspace(xmin, xmax, n + 2)[1:-1]
    ys = np.linspace(ymin, ymax, n + 2)[1:-1]
    grid = (xs[None, :] + 1j * ys[:, None]).ravel()
    vals = np.abs(f(grid))
    return complex(grid[int(np.argmin(vals))])


def _roots_in_rect(f, rect, scale, depth=0):
    try:
        n = count_zeros(f, rect)
    except BoundaryZeroError:
        n = None
    if n == 0:
        return []
    xmin, xmax, ymin, ymax = rect
    w, h = xmax - xmin, ymax - ymin
    if n is not None and max(w, h) < 1e-7 * scale:
        return [(complex(0.5 * (xmin + xmax), 0.5 * (ymin + ymax)), n)]
    if n == 1:
        try:
            z = find_root(f, _seed(f, rect))
            pad = 1e-6 * scale
            if xmin - pad <= z.real <= xmax + pad and ymin - pad <= z.imag <= ymax + pad:
                return [(z, 1)]
        except RootFindingError:
            pass
    if depth > 60:
        raise RootFindingError(f"turning-point search did not isolate zeros in {rect}")
    if w >= h:
        xm = xmin + w * 0.5037
        halves = ((xmin, xm, ymin, ymax), (xm, xmax, ymin, ymax))
    else:
        ym = ymin + h * 0.5037
        halves = ((xmin, xmax, ymin, ym), (xmin, xmax, ym, ymax))
    out = []
    for sub in halves:
        out.extend(_roots_in_rect(f, sub, scale, depth + 1))
    return out


def approach_path(location: complex, others=(), standoff: float | None = None):
    """
    Vertices of the cut-avoiding approach to a turning point.

    Straight up (down) from the real axis below (above) ``location``, stopping
    a standoff short of it.  If another turning point sits near that vertical
    the anchor is moved sideways and the last leg slants in.
    """
    loc = complex(location)
    sgn = 1.0 if loc.imag > 0 else -1.0
    others = [complex(o) for o in others if abs(complex(o) - loc) > 1e-12]
    spacing = min([abs(o - loc) for o in others], default=abs(loc.imag) + 1.0)
    if standoff is None:
        standoff = 0.05 * min(spacing, abs(loc.imag))
    x = loc.real
    blockers = [o for o in others
                if abs(o.real - x) < 0.1 * spacing and 0 < sgn * o.imag < sgn * loc.imag]
    end = loc - 1j * sgn * standoff
    if not blockers:
        return [complex(x, 0.0), end], end
    shift = 0.3 * spacing
    for cand in (x + shift, x - shift, x + 2 * shift, x - 2 * shift):
        if all(abs(o.real - cand) > 0.1 * spacing for o in blockers):
            direction = (loc - complex(cand, loc.imag - sgn * 0.5 * abs(loc.imag)))
            end = loc - standoff * direction / abs(direction)
            return [complex(cand, 0.0), complex(cand, loc.imag - sgn * 0.5 * abs(loc.imag)),
                    end], end
    return [complex(x, 0.0), end], end


def _attribute_pair(model, loc, others):
    verts, _ = approach_path(loc, others)
    branch = eigen_continued(model, PathPolyline(tuple(verts)))
    pair = _closest_pair(branch.final.energies)
    return pair, branch


def find_all_turning_points(model: ModelSpec, window=None):
    """All zeros of the discriminant in ``window`` (default: both half planes)."""
    f = _disc(model)
    if window is None:
        r = default_window(model)
        rects = [(-r, r, 0.0, r), (-r, r, -r, 0.0)]
        scale = r
    else:
        rects = [tuple(float(v) for v in window)]
        scale = max(window[1] - window[0], window[3] - window[2])
    raw = []
    for rect in rects:
        raw.extend(_roots_in_rect(f, rect, scale))
    roots = []
    for z, order in raw:
        if all(abs(z - r) > 1e-8 * scale for r, _ in roots):
            roots.append((z, order))
    roots.sort(key=lambda zo: (zo[0].imag < 0, zo[0].real, abs(zo[0].imag)))
    locs = [z for z, _ in roots]
    out = []
    for z, order in roots:
        if abs(z.imag) < 1e-12:
            raise RootFindingError(f"turning point on the real axis at {z.real}")
        pair, branch = _attribute_pair(model, z, locs)
        if order != 1:
            log.warning("turning point at %s has order %d; excluded from connection calculus",
                        z, order)
        out.append(TurningPoint(z, pair, order, branch))
    return out


def find_turning_points(model: ModelSpec, pair, window=None):
    """Turning points of the given adjacent level pair (1-based)."""
    pair = tuple(sorted(int(p) for p in pair))
    if pair[1] - pair[0] != 1:
        raise ValueError("pairs must be adjacent levels")
    return [tp for tp in find_all_turning_points(model, window) if tp.pair == pair]


# -- local structure ---------------------------------------------------------

def _squared_gap(model, t):
    w = eigenvalues(model, t)
    pair = _closest_pair(w)
    return complex((w[pair[0] - 1] - w[pair[1] - 1]) ** 2)


def local_coefficient(model: ModelSpec, tp: TurningPoint, radius: float | None = None):
    """c^2 in (E_a - E_b)^2 ~ c^2 (t - t_c), by Richardson over two radii."""
    if radius is None:
        radius = 1e-4 * (1 + abs(tp.location))
    vals = []
    for r in (radius, radius / 2):
        acc = 0j
        for k in range(4):
            d = r * cmath.exp(1j * (0.3 + k * math.pi / 2))
            acc += _squared_gap(model, tp.location + d) / d
        vals.append(acc / 4)
    return 2 * vals[1] - vals[0]


def initial_directions(tp: TurningPoint, model: ModelSpec):
    """The three unit directions along which (t - t_c)^{3/2} * c is purely imaginary."""
    if not tp.simple:
        raise ValueError("initial directions need a simple turning point")
    c2 = local_coefficient(model, tp)
    kappa = cmath.phase(c2)
    base = (math.pi - kappa) / 3
    return [cmath.exp(1j * (base + 2 * math.pi * k / 3)) for k in range(3)]


# -- tracing -----------------------------------------------------------------

class _Ambiguous(Exception):
    pass


def _match(prev, w):
    cost = np.abs(prev[:, None] - w[None, :])
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(w), dtype=int)
    perm[rows] = cols
    new = w[perm]
    n = len(prev)
    for i in range(n):
        sep = min((abs(prev[i] - prev[j]) for j in range(n) if j != i), default=math.inf)
        if abs(new[i] - prev[i]) > 0.3 * sep:
            raise _Ambiguous
    return new


def _eig_at(model, prev, t):
    return _match(prev, eigenvalues(model, t))


def _gap(e, a, b):
    return e[a] - e[b]


def _segment_integral(model, e_start, t0, t1, a, b):
    """Integral of E_a - E_b over the straight segment, eigenvalues continued from t0."""
    acc = 0j
    e = e_start
    for x, wgt in zip(_GL_X, _GL_W):
        e = _eig_at(model, e, t0 + x * (t1 - t0))
        acc += wgt * _gap(e, a, b)
    return acc * (t1 - t0)


def _arc_start(model, tp, direction, r0):
    """Continue eigenvalues from the approach point around t_c to t_c + r0*direction."""
    frame = tp.sheet_anchor.final
    e = frame.energies.copy()
    loc = tp.location
    sgn = 1.0 if loc.imag > 0 else -1.0
    cut = sgn * math.pi / 2
    start_ang = cmath.phase(frame.t - loc)
    target = cmath.phase(direction)
    # keep every angle inside (cut - 2 pi, cut) so the arc never crosses the cut
    while start_ang >= cut:
        start_ang -= 2 * math.pi
    while start_ang < cut - 2 * math.pi:
        start_ang += 2 * math.pi
    while target >= cut:
        target -= 2 * math.pi
    while target < cut - 2 * math.pi:
        target += 2 * math.pi
    r_start = abs(frame.t - loc)
    # radial move from the approach point to radius r0, then the arc
    n_rad = 40
    for k in range(1, n_rad + 1):
        r = r_start * (r0 / r_start) ** (k / n_rad)
        e = _eig_at(model, e, loc + r * cmath.exp(1j * start_ang))
    n_arc = max(8, int(abs(target - start_ang) / 0.05))
    for k in range(1, n_arc + 1):
        ang = start_ang + (target - start_ang) * k / n_arc
        e = _eig_at(model, e, loc + r0 * cmath.exp(1j * ang))
    return e


def _velocity(model, e, t, a, b, sgn):
    e2 = _eig_at(model, e, t)
    d = _gap(e2, a, b)
    if abs(d) == 0:
        raise _Ambiguous
    return sgn * 1j * d.conjugate() / abs(d), e2


def trace_line(model: ModelSpec, tp: TurningPoint, direction: complex, max_radius: float,
               trace_tol: float = 1e-3, others=(), capture: float | None = None,
               max_steps: int = 20000) -> StokesLine:
    """
    Follow the Stokes line leaving ``tp`` along ``direction``.

    RK4 on the unit-speed flow dt/ds = +-i conj(dE)/|dE| with a Newton
    projection after every step re-zeroing Re F, where F is the running
    integral of E_a - E_b from the turning point.
    """
    a, b = tp.pair[0] - 1, tp.pair[1] - 1
    loc = tp.location
    others = [complex(o) for o in others if abs(complex(o) - loc) > 1e-12]
    spacing = min([abs(o - loc) for o in others], default=1.0)
    if capture is None:
        capture = 1e-2 * spacing
    r0 = 1e-3 * min(spacing, abs(loc.imag))
    direction = complex(direction) / abs(direction)
    try:
        e = _arc_start(model, tp, direction, r0)
    except _Ambiguous:
        return StokesLine(tp, PathPolyline((loc, loc + r0 * direction)), tp.pair[0], None,
                          "step_failure")
    t = loc + r0 * direction
    big_f = (2.0 / 3.0) * _gap(e, a, b) * (t - loc)
    sgn = 1.0 if big_f.imag > 0 else -1.0
    dominant = tp.pair[0] if sgn > 0 else tp.pair[1]
    pts = [loc, t]
    fs = [0j, big_f]
    crossing = None
    extra = []
    termination = "reached_max_radius"
    h_max = 0.02 * max_radius
    steps = 0
    while True:
        if abs(t) >= max_radius:
            break
        if steps >= max_steps:
            termination = "step_failure"
            break
        near = min([abs(t - o) for o in others], default=math.inf)
        h = min(h_max, max(0.2 * min(near, abs(t - loc)), 1e-6 * (1 + abs(t))))
        sep = min(abs(e[i] - e[j]) for i in range(len(e)) for j in range(i + 1, len(e)))
        dh = float(np.linalg.norm(evaluate_dh(model, t))) + 1e-300
        h = min(h, max(0.1 * sep / dh, 1e-6 * (1 + abs(t))))
        step = None
        while h > 1e-9 * (1 + abs(t)):
            try:
                step = _rk4_step(model, e, t, big_f, h, a, b, sgn)
                break
            except _Ambiguous:
                h *= 0.5
        if step is None:
            termination = "step_failure"
            break
        t_new, f_new, e_new = step
        steps += 1
        if t.imag != 0 and t_new.imag * t.imag <= 0:
            x, principal = _real_crossing(model, e, t, big_f, t_new, a, b)
            if x is not None:
                if not principal:
                    pts.append(complex(x, 0.0))
                    fs.append(complex(0.0, (big_f.imag + f_new.imag) / 2))
                    termination = "hit_cut_boundary"
                    break
                if crossing is None:
                    crossing = x
                else:
                    extra.append(x)
        t, big_f, e = t_new, f_new, e_new
        pts.append(t)
        fs.append(big_f)
        hit = [o for o in others if abs(t - o) < capture]
        if hit and abs(_gap(e, a, b)) < 10 * math.sqrt(capture) * (1 + np.max(np.abs(e))):
            termination = "hit_turning_point"
            pts.append(hit[0])
            fs.append(big_f)
            break
        if sgn * big_f.imag < 0:
            termination = "step_failure"
            break
    pts = _dedupe(pts)
    return StokesLine(tp, PathPolyline(tuple(pts)), dominant, crossing, termination,
                      tuple(fs), tuple(extra))


def _rk4_step(model, e, t, big_f, h, a, b, sgn):
    """One RK4 step of the unit-speed flow followed by Newton projection onto Re F = 0."""
    k1, e1 = _velocity(model, e, t, a, b, sgn)
    k2, _ = _velocity(model, e1, t + 0.5 * h * k1, a, b, sgn)
    k3, _ = _velocity(model, e1, t + 0.5 * h * k2, a, b, sgn)
    k4, _ = _velocity(model, e1, t + h * k3, a, b, sgn)
    t_new = t + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    f_new = big_f + _segment_integral(model, e1, t, t_new, a, b)
    e_new = _eig_at(model, e1, t_new)
    for _ in range(3):
        d = _gap(e_new, a, b)
        delta = -f_new.real * d.conjugate() / (abs(d) ** 2)
        if abs(delta) < 1e-15 * (1 + abs(t_new)):
            break
        f_new = f_new + _segment_integral(model, e_new, t_new, t_new + delta, a, b)
        t_new = t_new + delta
        e_new = _eig_at(model, e_new, t_new)
    return t_new, f_new, e_new


def _dedupe(pts):
    out = [pts[0]]
    for p in pts[1:]:
        if p != out[-1]:
            out.append(p)
    return out


def _real_crossing(model, e, t, big_f, t_new, a, b):
    """Refine where the traced line meets the real axis; also report the sheet."""
    x = (t.real * t_new.imag - t_new.real * t.imag) / (t_new.imag - t.imag)
    for _ in range(8):
        try:
            fx = big_f + _segment_integral(model, e, t, complex(x, 0), a, b)
            ex = _eig_at(model, e, complex(x, 0))
        except _Ambiguous:
            return None, False
        d = _gap(ex, a, b).real
        if d == 0:
            break
        dx = -fx.real / d
        x += dx
        if abs(dx) < 1e-13 * (1 + abs(x)):
            break
    ex = _eig_at(model, e, complex(x, 0))
    w = eigenvalues(model, complex(x, 0))
    order = np.argsort(-w.real)
    principal = (abs(ex[a] - w[order[a]]) < 1e-6 * (1 + abs(ex[a]))
                 and abs(ex[b] - w[order[b]]) < 1e-6 * (1 + abs(ex[b])))
    return x, principal


# -- graph ---------------------------------------------------------------------

def default_max_radius(tps):
    return 3.0 * (max((abs(tp.location) for tp in tps), default=0.0) + 1.0)


def _trace_all(model, tps, max_radius, trace_tol):
    locs = [tp.location for tp in tps]
    lines = []
    for tp in tps:
        if not tp.simple:
            continue
        for d in initial_directions(tp, model):
            lines.append(trace_line(model, tp, d, max_radius, trace_tol, others=locs))
    return lines


def _segment_intersections(lines, exclude_radius):
    flags = []
    for i in range(len(lines)):
        pi = np.array(lines[i].polyline.vertices)
        for j in range(i + 1, len(lines)):
            if lines[i].origin.location == lines[j].origin.location:
                continue
            pj = np.array(lines[j].polyline.vertices)
            a0, a1 = pi[:-1, None], pi[1:, None]
            b0, b1 = pj[None, :-1], pj[None, 1:]
            da, db = a1 - a0, b1 - b0
            den = (da.conj() * db).imag
            with np.errstate(divide="ignore", invalid="ignore"):
                s = ((b0 - a0).conj() * db).imag / den
                u = ((b0 - a0).conj() * da).imag / den
            mask = (den != 0) & (s >= 0) & (s < 1) & (u >= 0) & (u < 1)
            for ia, ib in zip(*np.nonzero(mask)):
                p = complex(a0[ia, 0] + s[ia, ib] * da[ia, 0])
                if min(abs(p - lines[i].origin.location),
                       abs(p - lines[j].origin.location)) > exclude_radius:
                    flags.append(p)
    return flags


def assemble_graph(model, tps, lines, separation):
    crossings = sorted((ln.real_crossing, idx) for idx, ln in enumerate(lines)
                       if ln.real_crossing is not None)
    flags = []
    for ln in lines:
        if ln.termination == "hit_turning_point":
            flags.append(f"saddle connection from {ln.origin.location:.6g} "
                         f"ending at {ln.polyline.vertices[-1]:.6g}")
    for (x0, i0), (x1, i1) in zip(crossings, crossings[1:]):
        if x1 - x0 < separation:
            flags.append(f"crossings of lines {i0} and {i1} coincide near t={x0:.6g}")
    sheet = [f"line from {ln.origin.location:.6g} leaves the principal sheet"
             for ln in lines if ln.termination == "hit_cut_boundary"]
    incomplete = any(ln.termination == "step_failure" for ln in lines)
    spacing = min([abs(p.location - q.location) for p in tps for q in tps if p is not q],
                  default=1.0)
    inter = _segment_intersections(lines, 0.05 * spacing)
    if inter:
        log.warning("%d Stokes-line intersections (virtual turning point candidates)", len(inter))
    return StokesGraph(list(tps), list(lines), crossings, flags, inter,
                       model.epsilon, sheet, incomplete)


def build_graph(model: ModelSpec, window=None, epsilon_policy: str = "auto",
                flip_sign: bool = False, max_radius: float | None = None,
                trace_tol: float = 1e-3, separation: float | None = None) -> StokesGraph:
    """
    Turning points of all pairs plus their traced Stokes lines.

    ``epsilon_policy="auto"`` retries at epsilon = 0.01 then 0.05 (sign per
    ``flip_sign``) while the graph is degenerate and raises
    :class:`DegenerateGraphError` if that never resolves it;
    ``"fixed"`` returns the graph at the model's epsilon with its flags.
    """
    sign = -1.0 if flip_sign else 1.0
    eps_list = [model.epsilon]
    if epsilon_policy == "auto":
        eps_list += [sign * e for e in EPSILON_LADDER if sign * e != model.epsilon]
    elif epsilon_policy != "fixed":
        raise ValueError(f"unknown epsilon policy {epsilon_policy!r}")
    graph = None
    for eps in eps_list:
        m = model.with_epsilon(eps)
        tps = find_all_turning_points(m, window)
        radius = max_radius if max_radius is not None else default_max_radius(tps)
        sep = separation if separation is not None else 1e-4 * (1 + radius / 3)
        lines = _trace_all(m, tps, radius, trace_tol)
        graph = assemble_graph(m, tps, lines, sep)
        if not graph.degenerate:
            return graph
        log.info("Stokes graph degenerate at epsilon=%g: %s", eps, graph.degeneracy_flags)
    if epsilon_policy == "auto":
        raise DegenerateGraphError(
            f"Stokes graph degenerate even at epsilon={eps_list[-1]}", graph.degeneracy_flags)
    return graph


# -- export --------------------------------------------------------------------

def graph_csv_rows(graph: StokesGraph):
    yield ("line_id", "pair_i", "pair_j", "dominant", "re_t", "im_t")
    for idx, ln in enumerate(graph.lines):
        i, j = ln.origin.pair
        for p in ln.polyline.vertices:
            yield (idx, i, j, ln.dominant_index, f"{p.real:.12g}", f"{p.imag:.12g}")


_PAIR_COLORS = ("#1f77b4", "#17becf", "#2ca02c", "#9467bd", "#8c564b")


def graph_svg(graph: StokesGraph, size: int = 600) -> str:
    pts = [p for ln in graph.lines for p in ln.polyline.vertices]
    pts += [tp.location for tp in graph.turning_points]
    extent = max([abs(p.real) for p in pts] + [abs(p.imag) for p in pts] + [1.0]) * 1.05
    scale = size / (2 * extent)

    def xy(p):
        return (size / 2 + p.real * scale, size / 2 - p.imag * scale)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>',
           f'<line x1="0" y1="{size / 2}" x2="{size}" y2="{size / 2}" stroke="black" '
           'stroke-width="1"/>']
    for ln in graph.lines:
        color = _PAIR_COLORS[(ln.origin.pair[0] - 1) % len(_PAIR_COLORS)]
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in map(xy, ln.polyline.vertices))
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                   'stroke-width="1.5"/>')
    for tp in graph.turning_points:
        x, y = xy(tp.location)
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="red"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
