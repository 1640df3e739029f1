"""
Hamiltonian families with polynomial time dependence.

A :class:`ModelSpec` holds an N x N array of polynomials in complex time.  Eigen
data off the real axis is multivalued, so it is always produced by continuation
from a real anchor (:func:`eigen_continued`), carrying a biorthogonal pair of
right/left eigenvectors in a parallel-transport gauge.  In that gauge the
diagonal couplings g_jj vanish along the path.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .analytic import PathPolyline
from .errors import BranchError, CouplingError, ModelValidationError

BUILTIN_NAMES = ("nlzsm", "lzsm3")

LZSM3_DEFAULTS = {"v1": 1.0, "v2": 2.0, "a": 4.0, "d12": 0.5, "d13": 0.5, "d23": 0.5, "eta": 1.0}


def _as_poly(coeffs) -> tuple:
    out = tuple(complex(c) for c in coeffs)
    return out if out else (0j,)


@dataclass(frozen=True)
class ModelSpec:
    """
    Polynomial Hamiltonian family H(t) with adiabaticity parameter ``eta``.

    ``entries[j][k]`` lists complex coefficients in ascending powers of t.
    ``perturb`` names the (row, col, power) coefficients multiplied by
    ``1 + i*epsilon``; by default the leading coefficient of every
    non-constant diagonal entry (v -> v(1 + i eps) for the built-ins).
    """

    entries: tuple
    eta: float = 1.0
    epsilon: float = 0.0
    label: str = ""
    builtin: str | None = None
    params: Mapping = field(default_factory=dict)
    perturb: tuple | None = None
    _coeffs: np.ndarray = field(init=False, repr=False, compare=False)
    _dcoeffs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows = tuple(tuple(_as_poly(p) for p in row) for row in self.entries)
        n = len(rows)
        if n < 2 or any(len(r) != n for r in rows):
            raise ModelValidationError("entries must form an N x N array with N >= 2")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ModelValidationError(f"eta must be positive, got {self.eta}")
        object.__setattr__(self, "entries", rows)
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        deg = max(len(p) for row in rows for p in row) - 1
        base = np.zeros((deg + 1, n, n), dtype=complex)
        for j, row in enumerate(rows):
            for k, p in enumerate(row):
                base[: len(p), j, k] = p
        if self.perturb is None:
            slots = []
            for j in range(n):
                nz = np.nonzero(base[1:, j, j])[0]
                if nz.size:
                    slots.append((j, j, int(nz[-1]) + 1))
            object.__setattr__(self, "perturb", tuple(slots))
        else:
            object.__setattr__(self, "perturb", tuple(tuple(int(x) for x in s) for s in self.perturb))
        self._check_hermitian(base)
        coeffs = base.copy()
        for j, k, p in self.perturb:
            if p > deg:
                raise ModelValidationError(f"perturbed power {p} exceeds degree {deg}")
            coeffs[p, j, k] *= 1 + 1j * self.epsilon
        dco = np.array([p * coeffs[p] for p in range(1, deg + 1)]) if deg > 0 \
            else np.zeros((1, n, n), dtype=complex)
        object.__setattr__(self, "_coeffs", coeffs)
        object.__setattr__(self, "_dcoeffs", dco)

    @staticmethod
    def _check_hermitian(base):
        if not np.allclose(base, np.conj(np.swapaxes(base, 1, 2)), rtol=0, atol=1e-13):
            raise ModelValidationError("H(t) must be Hermitian for real t (unperturbed)")

    @property
    def dimension(self) -> int:
        return len(self.entries)

    @property
    def degree(self) -> int:
        return self._coeffs.shape[0] - 1

    def with_epsilon(self, epsilon: float) -> "ModelSpec":
        return ModelSpec(self.entries, self.eta, epsilon, self.label, self.builtin,
                         self.params, self.perturb)

    def with_eta(self, eta: float) -> "ModelSpec":
        return ModelSpec(self.entries, eta, self.epsilon, self.label, self.builtin,
                         self.params, self.perturb)

    def with_param(self, name: str, value) -> "ModelSpec":
        """Rebuild with one parameter changed (``eta``/``epsilon`` or a built-in parameter)."""
        if name == "eta":
            return self.with_eta(value)
        if name == "epsilon":
            return self.with_epsilon(value)
        if self.builtin is None:
            raise ModelValidationError(f"parameter {name!r} exists only for built-in models")
        params = dict(self.params)
        if name not in params:
            raise ModelValidationError(f"unknown parameter {name!r} for {self.builtin}")
        params[name] = value
        params["eta"] = self.eta
        return builtin(self.builtin, params).with_epsilon(self.epsilon)

    def is_hermitian_family(self) -> bool:
        return self.epsilon == 0.0 or not self.perturb


def _poly_eval(coeffs, t):
    t = np.asarray(t, dtype=complex)
    out = np.zeros(t.shape + coeffs.shape[1:], dtype=complex)
    tt = t[..., None, None]
    for c in coeffs[::-1]:
        out = out * tt + c
    return out


def evaluate_h(model: ModelSpec, t):
    """H(t) (without the eta factor); vectorised over array-valued t."""
    out = _poly_eval(model._coeffs, t)
    return out if np.ndim(t) else out.reshape(model.dimension, model.dimension)


def evaluate_dh(model: ModelSpec, t):
    out = _poly_eval(model._dcoeffs, t)
    return out if np.ndim(t) else out.reshape(model.dimension, model.dimension)


def eigenvalues(model: ModelSpec, t):
    """Unordered eigenvalues of H(t), vectorised."""
    return np.linalg.eigvals(evaluate_h(model, t))


def discriminant(model: ModelSpec, t):
    """Product over pairs of (E_i - E_j)^2 -- a polynomial in t, zero at turning points."""
    h = evaluate_h(model, np.atleast_1d(np.asarray(t, dtype=complex)))
    if model.dimension == 2:
        tr = h[..., 0, 0] + h[..., 1, 1]
        det = h[..., 0, 0] * h[..., 1, 1] - h[..., 0, 1] * h[..., 1, 0]
        out = tr * tr - 4 * det
    else:
        w = np.linalg.eigvals(h)
        out = np.ones(w.shape[:-1], dtype=complex)
        n = model.dimension
        for i in range(n):
            for j in range(i + 1, n):
                out = out * (w[..., i] - w[..., j]) ** 2
    return out if np.ndim(t) else complex(out[0])


# -- built-ins ---------------------------------------------------------------

def _positive(params, key):
    val = float(params[key])
    if not val > 0:
        raise ModelValidationError(f"{key} must be positive, got {val}")
    return val


def builtin(name: str, parameters: Mapping | None = None) -> ModelSpec:
    """
    Construct a built-in model.

    ``nlzsm``: ``[[v t^n, conj(delta)], [delta, -v t^n]]`` with keys n, v, delta, eta.
    ``lzsm3``: the three-level sweep ``[[v1 t, d12, d13], [d12, v2 t + a, d23], [d13, d23, 0]]``;
    missing keys fall back to ``LZSM3_DEFAULTS``.
    """
    params = dict(parameters or {})
    if "Δ" in params:
        params["delta"] = params.pop("Δ")
    if name == "nlzsm":
        missing = {"n", "v", "delta"} - set(params)
        if missing:
            raise ModelValidationError(f"nlzsm needs parameters {sorted(missing)}")
        n = int(params["n"])
        if n < 1 or n != params["n"]:
            raise ModelValidationError("n must be a positive integer")
        v = _positive(params, "v")
        d = params["delta"]
        delta = complex(d[0], d[1]) if isinstance(d, (list, tuple)) else complex(d)
        if delta == 0:
            raise ModelValidationError("delta = 0 makes the spectrum gapless on the real axis")
        eta = _positive({"eta": params.get("eta", 1.0)}, "eta")
        diag = [0.0] * n + [v]
        entries = ((tuple(diag), (delta.conjugate(),)),
                   ((delta,), tuple(-c for c in diag)))
        clean = {"n": n, "v": v, "delta": delta if delta.imag else delta.real, "eta": eta}
        return ModelSpec(entries, eta, 0.0, f"nlzsm(n={n})", "nlzsm", clean)
    if name == "lzsm3":
        p = dict(LZSM3_DEFAULTS)
        p.update(params)
        unknown = set(p) - set(LZSM3_DEFAULTS)
        if unknown:
            raise ModelValidationError(f"unknown lzsm3 parameters {sorted(unknown)}")
        v1 = _positive(p, "v1")
        v2 = _positive(p, "v2")
        _positive(p, "eta")
        a, d12, d13, d23 = (float(p[k]) for k in ("a", "d12", "d13", "d23"))
        entries = (((0.0, v1), (d12,), (d13,)),
                   ((d12,), (a, v2), (d23,)),
                   ((d13,), (d23,), (0.0,)))
        clean = {k: float(p[k]) for k in LZSM3_DEFAULTS}
        model = ModelSpec(entries, clean["eta"], 0.0, "lzsm3", "lzsm3", clean)
        check_real_axis_gap(model)
        return model
    raise ModelValidationError(f"unknown built-in {name!r}; choose from {BUILTIN_NAMES}")


def check_real_axis_gap(model: ModelSpec, half_width: float = 50.0, samples: int = 4001,
                        rel_tol: float = 1e-9):
    """Reject models whose real-axis spectrum (nearly) touches on a sample grid."""
    xs = np.linspace(-half_width, half_width, samples)
    h = evaluate_h(model.with_epsilon(0.0), xs)
    w = np.linalg.eigvalsh(h)
    gaps = np.diff(w, axis=-1)
    scale = np.max(np.abs(w), axis=-1) + 1.0
    bad = np.min(gaps, axis=-1) < rel_tol * scale
    if np.any(bad):
        x = xs[np.argmax(bad)]
        raise ModelValidationError(f"degenerate real-axis spectrum near t={x:.6g}")


def nlzsm_coupling_closed_form(model: ModelSpec, t):
    """g_12 for the nLZSM built-in: (i/2)|delta| v n t^(n-1) / (|delta|^2 + v^2 t^(2n))."""
    if model.builtin != "nlzsm":
        raise ModelValidationError("closed form only for the nlzsm built-in")
    n, v = model.params["n"], model.params["v"]
    d = abs(complex(model.params["delta"]))
    t = np.asarray(t, dtype=complex)
    return 0.5j * d * v * n * t ** (n - 1) / (d * d + v * v * t ** (2 * n))


# -- eigen frames --------------------------------------------------------------

@dataclass(frozen=True)
class EigenFrame:
    """Eigen data at one (complex) time: E_i, right vectors (columns), left vectors (rows)."""

    t: complex
    energies: np.ndarray
    right: np.ndarray
    left: np.ndarray
    anchor: float

    @property
    def vectors(self):
        return [self.right[:, i] for i in range(len(self.energies))]


@dataclass(frozen=True)
class BranchPath:
    path: PathPolyline
    samples: tuple

    @property
    def final(self) -> EigenFrame:
        return self.samples[-1]

    def times(self):
        return np.array([s.t for s in self.samples])


class _StepRejected(Exception):
    pass


def anchor_frame(model: ModelSpec, x: float, gap_tol: float = 1e-9) -> EigenFrame:
    """Eigen frame at a real time, labelled by descending energy."""
    x = float(np.real(x))
    h = evaluate_h(model, x)
    n = model.dimension
    if model.is_hermitian_family():
        w, v = np.linalg.eigh(h)
        order = np.argsort(-w)
        w = w[order].astype(complex)
        right = v[:, order].astype(complex)
        left = right.conj().T
    else:
        w, v = np.linalg.eig(h)
        order = np.lexsort((-w.imag, -w.real))
        w = w[order]
        right = v[:, order]
        left = np.linalg.inv(right)
    scale = max(1.0, float(np.max(np.abs(w))))
    for i in range(n - 1):
        if abs(w[i] - w[i + 1]) < gap_tol * scale:
            raise BranchError(f"anchor t={x} is degenerate for pair ({i + 1},{i + 2})",
                              pair=(i + 1, i + 2), t=x)
    for i in range(n):
        k = int(np.argmax(np.abs(right[:, i])))
        ph = right[k, i] / abs(right[k, i])
        right[:, i] /= ph
        left[i, :] *= ph
        s = left[i, :] @ right[:, i]
        left[i, :] /= s
    return EigenFrame(complex(x), w, right, left, x)


def _min_separation(w):
    n = len(w)
    sep = np.full(n, np.inf)
    for i in range(n):
        for j in range(n):
            if i != j:
                sep[i] = min(sep[i], abs(w[i] - w[j]))
    return sep


def continue_frame(model: ModelSpec, frame: EigenFrame, t_new: complex,
                   min_overlap: float = 0.9) -> EigenFrame:
    """
    One continuation step with maximal-overlap matching and gauge transport.

    The gauge scale s of each right vector solves
    ``(L_prev + L_new) . (R_new - R_prev) = 0``, a symmetric discretisation
    of L dR/dt = 0 that keeps real-axis vectors unit-normalised with real
    positive overlap to their predecessors.
    """
    h = evaluate_h(model, t_new)
    w, v = np.linalg.eig(h)
    try:
        linv = np.linalg.inv(v)
    except np.linalg.LinAlgError as exc:
        raise _StepRejected("defective eigenbasis") from exc
    rp, lp = frame.right, frame.left
    ov = np.abs((lp @ v) * (linv @ rp).T)
    rows, cols = linear_sum_assignment(-ov)
    perm = np.empty(len(w), dtype=int)
    perm[rows] = cols
    matched = ov[rows, cols]
    if np.min(matched) < min_overlap:
        raise _StepRejected("overlap below threshold")
    sep = _min_separation(frame.energies)
    wn = w[perm]
    if np.any(np.abs(wn - frame.energies) > 0.3 * sep):
        raise _StepRejected("eigenvalue jump too large")
    n = len(w)
    right = np.empty((n, n), dtype=complex)
    left = np.empty((n, n), dtype=complex)
    for j in range(n):
        rt = v[:, perm[j]]
        lt = linv[perm[j], :]
        a = lt @ rp[:, j]
        b = lp[j, :] @ rt
        s = cmath.sqrt(a / b)
        guess = 1.0 / b
        if abs(-s - guess) < abs(s - guess):
            s = -s
        right[:, j] = s * rt
        left[j, :] = lt / s
    return EigenFrame(complex(t_new), wn, right, left, frame.anchor)


def walk(model: ModelSpec, frame: EigenFrame, targets: Sequence[complex],
         max_step: float | None = None, min_step: float = 1e-12, keep_all: bool = True):
    """
    Continue ``frame`` through ``targets`` along straight segments.

    Returns the list of frames produced (intermediate refinement points
    included when ``keep_all``; otherwise one frame per target).
    """
    out = []
    cur = frame
    for target in targets:
        target = complex(target)
        while cur.t != target:
            remaining = target - cur.t
            sep = float(np.min(_min_separation(cur.energies)))
            dh = np.linalg.norm(evaluate_dh(model, cur.t)) + 1e-300
            step = min(abs(remaining), 0.05 * sep / dh)
            if max_step is not None:
                step = min(step, max_step)
            while True:
                if step < min_step * (1 + abs(cur.t)):
                    pair = _closest_pair(cur.energies)
                    raise BranchError(
                        f"continuation stalled near t={cur.t:.6g}: levels {pair} nearly degenerate",
                        pair=pair, t=cur.t)
                t_new = target if step >= abs(remaining) else cur.t + remaining / abs(remaining) * step
                try:
                    nxt = continue_frame(model, cur, t_new)
                    break
                except _StepRejected:
                    step *= 0.5
            cur = nxt
            if keep_all or cur.t == target:
                out.append(cur)
    return out


def _closest_pair(w):
    best, pair = math.inf, (1, 2)
    for i in range(len(w)):
        for j in range(i + 1, len(w)):
            d = abs(w[i] - w[j])
            if d < best:
                best, pair = d, (i + 1, j + 1)
    return pair


def eigen_continued(model: ModelSpec, path: PathPolyline, max_step: float | None = None,
                    degeneracy_tol: float = 1e-8) -> BranchPath:
    """
    Track eigenvalues and a transported eigenbasis along ``path``.

    The path must start on the real axis; labels there follow descending
    energy.  Raises :class:`BranchError` naming the pair if the path runs into
    (or within ``degeneracy_tol`` of) a turning point.
    """
    start = path.vertices[0]
    if abs(start.imag) > 1e-14 * (1 + abs(start)):
        raise BranchError("eigen continuation must start at a real anchor", t=start)
    frame = anchor_frame(model, start.real)
    samples = [frame]
    verts = list(path.vertices[1:]) + ([path.vertices[0]] if path.closed else [])
    for frm in walk(model, frame, verts, max_step=max_step):
        scale = 1.0 + float(np.max(np.abs(frm.energies)))
        pair = _closest_pair(frm.energies)
        if abs(frm.energies[pair[0] - 1] - frm.energies[pair[1] - 1]) < degeneracy_tol * scale:
            raise BranchError(f"path meets a turning point of pair {pair} at t={frm.t:.6g}",
                              pair=pair, t=frm.t)
        samples.append(frm)
    return BranchPath(path, tuple(samples))


def _frame_at(model, branch: BranchPath, t, tol=1e-9):
    t = complex(t)
    best = None
    for idx, s in enumerate(branch.samples):
        if abs(s.t - t) <= tol * (1 + abs(t)):
            return s
    # locate the sample segment that contains t
    samples = branch.samples
    for idx in range(len(samples) - 1):
        a, b = samples[idx].t, samples[idx + 1].t
        seg = b - a
        if seg == 0:
            continue
        u = (t - a) / seg
        if -1e-12 <= u.real <= 1 + 1e-12 and abs(u.imag) * abs(seg) <= tol * (1 + abs(t)):
            best = samples[idx]
            break
    if best is None:
        raise ValueError(f"t={t} does not lie on the branch path")
    return walk(model, best, [t], keep_all=False)[-1]


def delta_e(model: ModelSpec, i: int, j: int, branch: BranchPath, t) -> complex:
    """E_i(t) - E_j(t) under the branch labelling (levels are 1-based)."""
    frm = _frame_at(model, branch, t)
    return complex(frm.energies[i - 1] - frm.energies[j - 1])


def coupling_exact(model: ModelSpec, frame: EigenFrame, j: int, k: int) -> complex:
    """g_jk = i <dE_j/dt|E_k> from i L_j H' R_k / (E_j - E_k); 0-based indices, j != k."""
    dh = evaluate_dh(model, frame.t)
    return complex(1j * (frame.left[j] @ dh @ frame.right[:, k])
                   / (frame.energies[j] - frame.energies[k]))


def coupling_g(model: ModelSpec, j: int, k: int, branch: BranchPath, t,
               turning_points: Sequence[complex] = (), exclusion: float | None = None,
               method: str = "fd") -> complex:
    """
    Non-adiabatic coupling g_jk(t) = i <dE_j/dt|E_k> (1-based levels).

    ``method="fd"`` differentiates the transported left vector by a central
    difference along the path direction with h = min(1e-4, gap/10);
    ``method="exact"`` uses the eigenvector-derivative identity (j != k only).
    """
    t = complex(t)
    if turning_points:
        pts = np.asarray(turning_points, dtype=complex)
        spacing = (float(np.min([abs(a - b) for a in pts for b in pts if a != b]))
                   if len(pts) > 1 else 1.0)
        radius = exclusion if exclusion is not None else 1e-3 * spacing
        near = np.min(np.abs(pts - t))
        if near < radius:
            raise CouplingError(f"t={t} lies within {radius:.3g} of a turning point")
    frm = _frame_at(model, branch, t)
    if method == "exact":
        if j == k:
            raise CouplingError("exact route covers off-diagonal couplings only")
        return coupling_exact(model, frm, j - 1, k - 1)
    if method != "fd":
        raise ValueError(f"unknown method {method!r}")
    direction = _direction_at(branch, t)
    gap = float(np.min(_min_separation(frm.energies)))
    h = min(1e-4, gap / 10)
    fwd = walk(model, frm, [t + h * direction], keep_all=False)[-1]
    bwd = walk(model, frm, [t - h * direction], keep_all=False)[-1]
    dl = (fwd.left[j - 1] - bwd.left[j - 1]) / (2 * h * direction)
    return complex(1j * dl @ frm.right[:, k - 1])


def _direction_at(branch, t):
    verts = branch.path.vertices
    for a, b in zip(verts, verts[1:]):
        seg = b - a
        u = (t - a) / seg
        if -1e-9 <= u.real <= 1 + 1e-9 and abs(u.imag) < 1e-9:
            return seg / abs(seg)
    seg = verts[1] - verts[0]
    return seg / abs(seg)


# -- model files -------------------------------------------------------------

def _poly_from_doc(p):
    out = []
    for c in p:
        if isinstance(c, (list, tuple)):
            if len(c) != 2:
                raise ModelValidationError(f"complex coefficient must be [re, im], got {c}")
            out.append(complex(float(c[0]), float(c[1])))
        else:
            out.append(complex(float(c)))
    return out


def model_from_document(doc: Mapping) -> ModelSpec:
    """Build a model from a parsed model document (see FORMATS.md)."""
    if not isinstance(doc, Mapping):
        raise ModelValidationError("model document must be a mapping")
    eps = float(doc.get("epsilon", 0.0))
    if "builtin" in doc:
        spec = doc["builtin"]
        if not isinstance(spec, Mapping) or "name" not in spec:
            raise ModelValidationError("builtin must be a mapping with 'name' and 'params'")
        params = dict(spec.get("params") or {})
        if "eta" in doc:
            params.setdefault("eta", doc["eta"])
        model = builtin(str(spec["name"]), params)
        if "label" in doc:
            model = ModelSpec(model.entries, model.eta, 0.0, str(doc["label"]), model.builtin,
                              model.params, model.perturb)
        return model.with_epsilon(eps)
    try:
        n = int(doc["dimension"])
        eta = float(doc["eta"])
        flat = doc["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelValidationError(f"model document missing or bad field: {exc}") from exc
    if not isinstance(flat, Sequence) or len(flat) != n * n:
        raise ModelValidationError(f"entries must list {n * n} polynomials in row-major order")
    rows = tuple(tuple(_poly_from_doc(flat[j * n + k]) for k in range(n)) for j in range(n))
    perturb = doc.get("perturb")
    model = ModelSpec(rows, eta, 0.0, str(doc.get("label", "")), None, {},
                      None if perturb is None else tuple(tuple(s) for s in perturb))
    check_real_axis_gap(model)
    return model.with_epsilon(eps)


def model_to_document(model: ModelSpec) -> dict:
    if model.builtin is not None:
        params = {k: ([v.real, v.imag] if isinstance(v, complex) else v)
                  for k, v in model.params.items()}
        return {"builtin": {"name": model.builtin, "params": params},
                "eta": model.eta, "epsilon": model.epsilon, "label": model.label}
    flat = [[[c.real, c.imag] for c in p] for row in model.entries for p in row]
    return {"dimension": model.dimension, "eta": model.eta, "epsilon": model.epsilon,
            "entries": flat, "label": model.label,
            "perturb": [list(s) for s in model.perturb]}


def load_model(path) -> ModelSpec:
    import yaml

    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ModelValidationError(f"cannot read model file {path}: {exc}") from exc
    return model_from_document(doc)
