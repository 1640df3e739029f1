"""
Numerics for analytic functions of one complex variable.

Path quadrature (adaptive Gauss-Kronrod on polylines), Newton root finding,
residues on circles and argument-principle zero counting.  Everything here is
pure; callables are evaluated in double precision.
"""

from __future__ import annotations

import cmath
import heapq
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import BoundaryZeroError, QuadratureError, ResidueError, RootFindingError

ComplexFn = Callable[[complex], complex]

# Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15)
_XGK = (
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
)
_WGK = (
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
)
_WGK_CENTER = 0.209482141084727828012999174891714
# 7-point Gauss weights for the odd Kronrod nodes (1, 3, 5) and the center
_WG = (0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
       0.381830050505118944950369775488975)
_WG_CENTER = 0.417959183673469387755102040816327

ABS_FLOOR = 1e-14


@dataclass(frozen=True)
class PathPolyline:
    """Ordered complex vertices; a closed path joins the last vertex back to the first."""

    vertices: tuple
    closed: bool = False

    def __post_init__(self):
        verts = tuple(complex(v) for v in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 2:
            raise ValueError("a path needs at least 2 vertices")
        for a, b in zip(verts, verts[1:]):
            if a == b:
                raise ValueError(f"consecutive vertices coincide at {a}")
        if self.closed and self.signed_area() <= 0:
            raise ValueError("closed paths must be counterclockwise")

    @classmethod
    def segment(cls, a, b):
        return cls((a, b))

    @classmethod
    def circle(cls, center, radius, n=64):
        """Inscribed regular n-gon, counterclockwise."""
        pts = [center + radius * cmath.exp(2j * math.pi * k / n) for k in range(n)]
        return cls(tuple(pts), closed=True)

    @classmethod
    def rectangle(cls, xmin, xmax, ymin, ymax):
        return cls((complex(xmin, ymin), complex(xmax, ymin), complex(xmax, ymax),
                    complex(xmin, ymax)), closed=True)

    def edges(self):
        verts = self.vertices
        pairs = list(zip(verts, verts[1:]))
        if self.closed:
            pairs.append((verts[-1], verts[0]))
        return pairs

    def signed_area(self):
        verts = self.vertices
        s = 0.0
        for a, b in zip(verts, verts[1:] + verts[:1]):
            s += a.real * b.imag - b.real * a.imag
        return 0.5 * s

    def reversed(self):
        if self.closed:
            raise ValueError("closed paths keep counterclockwise orientation")
        return PathPolyline(self.vertices[::-1])

    def split(self, index):
        """Split an open path at vertex ``index`` into two paths sharing that vertex."""
        if self.closed or not 0 < index < len(self.vertices) - 1:
            raise ValueError("split index must be an interior vertex of an open path")
        return (PathPolyline(self.vertices[: index + 1]),
                PathPolyline(self.vertices[index:]))

    def length(self):
        return sum(abs(b - a) for a, b in self.edges())


@dataclass(frozen=True)
class QuadratureResult:
    value: complex
    error_estimate: float
    evaluations: int


def _checked(f, t):
    try:
        v = complex(f(t))
    except (ZeroDivisionError, OverflowError) as exc:
        raise QuadratureError(f"integrand failed at t={t}: {exc}", point=t) from exc
    if not (math.isfinite(v.real) and math.isfinite(v.imag)):
        raise QuadratureError(f"non-finite integrand value at t={t}", point=t)
    return v


def _gk15(f, a, b):
    """Return (kronrod, gauss) estimates over the straight segment a -> b.

    Symmetric node pairs are summed before weighting so that reversing the
    segment reproduces the negated result bit for bit.
    """
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    fc = _checked(f, c)
    k_re = [_WGK_CENTER * fc.real]
    k_im = [_WGK_CENTER * fc.imag]
    g_re = [_WG_CENTER * fc.real]
    g_im = [_WG_CENTER * fc.imag]
    for idx, (x, w) in enumerate(zip(_XGK, _WGK)):
        pair = _checked(f, c + h * x) + _checked(f, c - h * x)
        k_re.append(w * pair.real)
        k_im.append(w * pair.imag)
        if idx % 2 == 1:
            wg = _WG[idx // 2]
            g_re.append(wg * pair.real)
            g_im.append(wg * pair.imag)
    kron = complex(math.fsum(k_re), math.fsum(k_im)) * h
    gauss = complex(math.fsum(g_re), math.fsum(g_im)) * h
    return kron, gauss


def integrate_path(f: ComplexFn, path: PathPolyline, rel_tol: float = 1e-10,
                   abs_tol: float = ABS_FLOOR, max_subdivisions: int = 4000) -> QuadratureResult:
    """
    Integrate an analytic function along a polyline.

    Globally adaptive 15-point Gauss-Kronrod: the interval with the largest
    Kronrod-Gauss discrepancy is bisected until the summed discrepancy meets
    ``max(rel_tol*|value|, abs_tol)``.

    Raises
    ------
    QuadratureError
        On non-finite integrand values (``point`` set) or when the
        subdivision budget runs out (``point`` is the worst interval midpoint).
    """
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    heap = []
    evals = 0
    for a, b in path.edges():
        k, g = _gk15(f, a, b)
        evals += 15
        heapq.heappush(heap, (-abs(k - g), a.real, a.imag, b.real, b.imag, k))
    splits = 0
    while True:
        err = math.fsum(-item[0] for item in heap)
        value = complex(math.fsum(item[5].real for item in heap),
                        math.fsum(item[5].imag for item in heap))
        if err <= max(rel_tol * abs(value), abs_tol):
            return QuadratureResult(value, err, evals)
        if splits >= max_subdivisions:
            worst = heap[0]
            mid = 0.5 * (complex(worst[1], worst[2]) + complex(worst[3], worst[4]))
            raise QuadratureError(
                f"no convergence after {splits} subdivisions (worst segment near {mid})",
                point=mid, partial=value)
        item = heapq.heappop(heap)
        a = complex(item[1], item[2])
        b = complex(item[3], item[4])
        m = 0.5 * (a + b)
        for lo, hi in ((a, m), (m, b)):
            k, g = _gk15(f, lo, hi)
            evals += 15
            heapq.heappush(heap, (-abs(k - g), lo.real, lo.imag, hi.real, hi.imag, k))
        splits += 1


def central_derivative(f: ComplexFn, z: complex) -> complex:
    h = 1e-6 * (1.0 + abs(z))
    return (f(z + h) - f(z - h)) / (2 * h)


def find_root(f: ComplexFn, seed: complex, tol: float = 1e-12, max_iter: int = 80,
              residual_tol: float = 1e-10) -> complex:
    """
    Damped Newton iteration with a central-difference derivative.

    Converged when the Newton step drops below ``tol*(1+|z|)`` and
    ``|f(z)| <= residual_tol * |f'(z)| * (1+|z|)``.
    """
    z = complex(seed)
    fz = complex(f(z))
    for _ in range(max_iter):
        d = central_derivative(f, z)
        if abs(d) == 0.0 or abs(d) * (1.0 + abs(z)) < 1e-14 * max(abs(fz), 1e-300):
            raise RootFindingError(
                f"derivative vanishes near {z}; possible higher-order zero", last_iterate=z)
        step = fz / d
        lam = 1.0
        for _ in range(30):
            z_new = z - lam * step
            f_new = complex(f(z_new))
            if abs(f_new) < abs(fz) or abs(fz) == 0.0:
                break
            lam *= 0.5
        else:
            # no decrease along the Newton direction: at the noise floor
            z_new, f_new = z - step, complex(f(z - step))
        moved = abs(z_new - z)
        z, fz = z_new, f_new
        if not (math.isfinite(z.real) and math.isfinite(z.imag)):
            raise RootFindingError("Newton iteration diverged", last_iterate=z)
        if moved <= tol * (1.0 + abs(z)):
            scale = abs(central_derivative(f, z)) * (1.0 + abs(z))
            if abs(fz) <= residual_tol * max(scale, 1e-300):
                return z
            raise RootFindingError(
                f"Newton stalled at {z} with residual {abs(fz):.3e}", last_iterate=z)
    raise RootFindingError(f"no convergence after {max_iter} iterations", last_iterate=z)


def _trapezoid_residue(f, center, radius, rel_tol, max_nodes):
    """(1/2 pi i) * contour integral on a circle by the periodic trapezoid rule."""
    n = 16
    angles = 2 * math.pi * np.arange(n) / n
    vals = [complex(f(center + radius * cmath.exp(1j * a))) * radius * cmath.exp(1j * a)
            for a in angles]
    est = sum(vals) / n
    while n < max_nodes:
        mids = 2 * math.pi * (np.arange(n) + 0.5) / n
        new = [complex(f(center + radius * cmath.exp(1j * a))) * radius * cmath.exp(1j * a)
               for a in mids]
        vals = vals + new
        n *= 2
        new_est = sum(vals) / n
        if abs(new_est - est) <= rel_tol * max(abs(new_est), 1e-300) + 1e-15 * radius:
            return new_est
        est = new_est
    raise ResidueError(f"residue quadrature did not converge at center {center}")


def residue_at(f: ComplexFn, center: complex, radius: float, rel_tol: float = 1e-11,
               consistency_tol: float = 1e-6, max_nodes: int = 4096) -> complex:
    """
    Residue of ``f`` at an isolated simple pole, from circles of radius r and r/2.

    The trapezoid rule on a circle converges geometrically for functions
    analytic in an annulus, so nodes are doubled until the estimate settles.
    A mismatch between the two radii signals a non-simple pole or another
    singularity inside the larger circle.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    r1 = _trapezoid_residue(f, center, radius, rel_tol, max_nodes)
    r2 = _trapezoid_residue(f, center, 0.5 * radius, rel_tol, max_nodes)
    scale = max(abs(r1), abs(r2))
    if abs(r1 - r2) > consistency_tol * max(scale, 1e-300):
        raise ResidueError(
            f"residues at radius {radius} and {radius / 2} disagree ({r1} vs {r2}); "
            "pole not simple or another singularity is enclosed")
    return r2


def eval_many(f, ts):
    """Evaluate ``f`` on an array, falling back to a loop for scalar-only callables."""
    ts = np.asarray(ts, dtype=complex)
    try:
        out = np.asarray(f(ts), dtype=complex)
        if out.shape == ts.shape:
            return out
    except Exception:  # noqa: BLE001 - any failure means f is scalar-only
        pass
    return np.array([complex(f(t)) for t in ts.ravel()], dtype=complex).reshape(ts.shape)


def _edge_winding(f, a, b, n0, max_depth, min_len):
    ts = a + (b - a) * np.linspace(0.0, 1.0, n0 + 1)
    vals = eval_many(f, ts)
    total = 0.0
    stack = [(ts[i], ts[i + 1], vals[i], vals[i + 1], 0) for i in range(n0)]
    while stack:
        ta, tb, fa, fb, depth = stack.pop()
        if fa == 0 or fb == 0:
            raise BoundaryZeroError(f"zero of f on the boundary near {ta}")
        dphi = cmath.phase(fb / fa)
        if abs(dphi) > math.pi / 4:
            if depth >= max_depth or abs(tb - ta) < min_len:
                raise BoundaryZeroError(f"zero of f on or near the boundary near {ta}")
            tm = 0.5 * (ta + tb)
            fm = complex(eval_many(f, np.array([tm]))[0])
            stack.append((ta, tm, fa, fm, depth + 1))
            stack.append((tm, tb, fm, fb, depth + 1))
        else:
            total += dphi
    return total


def count_zeros(f, rectangle: Sequence[float], samples_per_edge: int = 64,
                max_nudges: int = 3) -> int:
    """
    Number of zeros (with multiplicity) inside ``(xmin, xmax, ymin, ymax)``.

    The winding number of f along the boundary is accumulated with adaptive
    bisection wherever the phase moves by more than pi/4 between samples.  If
    a zero sits on the boundary the rectangle is grown slightly and retried.
    """
    xmin, xmax, ymin, ymax = map(float, rectangle)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("degenerate rectangle")
    size = max(xmax - xmin, ymax - ymin)
    for attempt in range(max_nudges + 1):
        nudge = attempt * 1e-3 * size
        path = PathPolyline.rectangle(xmin - nudge, xmax + nudge, ymin - nudge, ymax + nudge)
        try:
            total = 0.0
            for a, b in path.edges():
                total += _edge_winding(f, a, b, samples_per_edge, 40, 1e-12 * size)
        except BoundaryZeroError:
            continue
        winding = total / (2 * math.pi)
        count = int(round(winding))
        if abs(winding - count) > 1e-3:
            continue
        return count
    raise BoundaryZeroError(
        f"zero on the boundary of {rectangle} persists after {max_nudges} nudges")
