"""
Direct integration of i d/dt psi = eta H(t) psi on the real axis.

Dormand-Prince 5(4) with error control on both tolerances plus a cap that
keeps every step below a tenth of the fastest local phase period.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .connection import TransitionReport, _report
from .errors import MethodPreconditionError, SolverError, WindowNotConvergedError
from .model import (ModelSpec, anchor_frame, coupling_exact, evaluate_h, walk)

# Dormand-Prince tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100,
                1 / 40])
_E = _B5 - _B4
_C_ARR = np.array(_C)
_A_ARR = np.zeros((7, 7))
for _i, _row in enumerate(_A):
    _A_ARR[_i, :len(_row)] = _row

# Local error target relative to the requested tolerance.  The per-step
# errors of a long phase-resolved run add up, so the controller aims well
# below the requested tolerance to keep the global norm drift within it.
LOCAL_TOLERANCE_FACTOR = 0.05


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    t0: float = -20.0
    t1: float = 20.0
    max_steps: int = 2_000_000

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not 0 < v <= 1e-3:
                raise ValueError(f"{name} must lie in (0, 1e-3]")
        if not self.t0 < self.t1:
            raise ValueError("need t0 < t1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def with_window(self, t0, t1) -> "SolverConfig":
        return SolverConfig(self.rel_tol, self.abs_tol, float(t0), float(t1), self.max_steps)

    def with_tolerance(self, rel_tol, abs_tol=None) -> "SolverConfig":
        return SolverConfig(rel_tol, self.abs_tol if abs_tol is None else abs_tol,
                            self.t0, self.t1, self.max_steps)


@dataclass
class Trajectory:
    """States at the requested sample times plus run statistics."""

    samples: list
    norm_drift: float
    steps: int = 0
    rejected: int = 0
    error_estimate: float = 0.0
    final: np.ndarray | None = field(default=None, repr=False)

    def times(self):
        return np.array([t for t, _ in self.samples])


def _phase_cap(model, eta, t):
    h = evaluate_h(model, t)
    bound = float(np.max(np.sum(np.abs(h), axis=1)))  # infinity norm >= spectral radius
    return 0.1 / (eta * max(bound, 1e-300))


def integrate(model: ModelSpec, eta: float | None, config: SolverConfig, psi0,
              sample_times=None, backward: bool = False) -> Trajectory:
    """
    Propagate ``psi0`` from ``config.t0`` to ``config.t1`` (reversed if ``backward``).

    Samples are produced at ``sample_times`` (default: the two endpoints) by
    cubic Hermite interpolation inside accepted steps.

    Raises
    ------
    SolverError
        When ``max_steps`` is exceeded or the step size underflows.
    """
    eta = model.eta if eta is None else float(eta)
    psi = np.array(psi0, dtype=complex)
    norm0 = float(np.linalg.norm(psi))
    if abs(norm0 - 1) > 1e-10:
        raise ValueError("initial state must be normalised")
    ta, tb = (config.t1, config.t0) if backward else (config.t0, config.t1)
    direction = 1.0 if tb > ta else -1.0
    if sample_times is None:
        sample_times = [ta, tb]
    pending = sorted((float(s) for s in sample_times), reverse=direction < 0)
    samples = []
    n = psi.shape[0]
    rtol = config.rel_tol * LOCAL_TOLERANCE_FACTOR
    atol = config.abs_tol * LOCAL_TOLERANCE_FACTOR

    t = ta
    k = np.empty((7, n), dtype=complex)
    k[0] = -1j * eta * (evaluate_h(model, t) @ psi)
    h = min(_phase_cap(model, eta, t), abs(tb - ta))
    steps = rejected = 0
    drift = 0.0
    err_sum = 0.0
    while pending and direction * (pending[0] - t) <= 0:
        samples.append((pending.pop(0), psi.copy()))
    while direction * (tb - t) > 0:
        if steps + rejected >= config.max_steps:
            raise SolverError(f"max_steps={config.max_steps} exceeded at t={t}")
        h = min(h, _phase_cap(model, eta, t), abs(tb - t))
        if h < 1e-14 * (1 + abs(t)):
            raise SolverError(f"step size underflow at t={t} (stiff or singular dynamics)")
        hs = direction * h
        gens = -1j * eta * evaluate_h(model, t + hs * _C_ARR)
        for i in range(1, 7):
            k[i] = gens[i] @ (psi + hs * (_A_ARR[i, :i] @ k[:i]))
        y_new = psi + hs * (_B5 @ k)
        err_vec = hs * (_E @ k)
        scale = atol + rtol * np.maximum(np.abs(psi), np.abs(y_new))
        err = float(np.sqrt(np.mean(np.abs(err_vec / scale) ** 2)))
        if err <= 1.0:
            t_new = t + hs
            while pending and direction * (pending[0] - t_new) <= 0:
                s = pending.pop(0)
                samples.append((s, _hermite(t, psi, k[0], t_new, y_new, k[6], s)))
            t, psi = t_new, y_new
            k[0] = k[6]  # first same as last
            steps += 1
            err_sum += float(np.linalg.norm(err_vec))
            drift = max(drift, abs(float(np.linalg.norm(psi)) - 1.0))
            h *= 5.0 if err == 0 else min(5.0, 0.9 * err ** -0.2)
        else:
            rejected += 1
            h *= max(0.2, 0.9 * err ** -0.2)
    return Trajectory(samples, drift, steps, rejected, err_sum, psi)


def _hermite(t0, y0, f0, t1, y1, f1, s):
    h = t1 - t0
    u = (s - t0) / h
    h00 = 2 * u ** 3 - 3 * u ** 2 + 1
    h10 = u ** 3 - 2 * u ** 2 + u
    h01 = -2 * u ** 3 + 3 * u ** 2
    h11 = u ** 3 - u ** 2
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


# -- adiabatic projection -----------------------------------------------------

def transported_frames(model: ModelSpec, times):
    """Eigen frames at increasing real ``times``, transported from the first one."""
    times = [float(x) for x in times]
    first = anchor_frame(model, times[0])
    if len(times) == 1:
        return [first]
    return [first] + walk(model, first, [complex(x) for x in times[1:]], keep_all=False)


def project_adiabatic(model: ModelSpec, t: float, psi, anchor: float | None = None):
    """
    Amplitudes a_i = <E_i(t)|psi>.

    With ``anchor`` the eigenbasis is transported along the real axis from
    that time, which fixes the phases to the parallel-transport gauge.
    """
    frame = (anchor_frame(model, t) if anchor is None
             else transported_frames(model, [anchor, t])[-1])
    return frame.left @ np.asarray(psi, dtype=complex)


def _first_order_mix(model, eta, frame):
    """Matrix K with K[k, j] = g_kj / (eta (E_j - E_k)), zero diagonal."""
    n = model.dimension
    k = np.zeros((n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            if a != b:
                k[a, b] = coupling_exact(model, frame, a, b) / (
                    eta * (frame.energies[b] - frame.energies[a]))
    return k


# -- window selection ----------------------------------------------------------

def nonadiabaticity(model: ModelSpec, eta: float, x: float) -> float:
    """max over level pairs of |g_jk| / (eta |E_j - E_k|) at real time x."""
    frame = anchor_frame(model, x)
    n = model.dimension
    best = 0.0
    for a in range(n):
        for b in range(a + 1, n):
            g = abs(coupling_exact(model, frame, a, b))
            best = max(best, g / (eta * abs(frame.energies[a] - frame.energies[b])))
    return best


def adiabatic_window(model: ModelSpec, eta: float | None = None, tol: float = 1e-4,
                     max_half_width: float = 1e4):
    """Symmetric window [-T, T] outside which the nonadiabaticity stays below ``tol``."""
    eta = model.eta if eta is None else float(eta)

    def quiet(t_abs):
        xs = np.linspace(t_abs, 4 * t_abs, 16)
        return all(nonadiabaticity(model, eta, s * x) < tol for x in xs for s in (-1, 1))

    t = 1.0
    while not quiet(t):
        t *= 1.5
        if t > max_half_width:
            raise WindowNotConvergedError("no adiabatic window below the maximum half width")
    lo, hi = t / 1.5, t
    for _ in range(8):
        mid = 0.5 * (lo + hi)
        if quiet(mid):
            hi = mid
        else:
            lo = mid
    return -hi, hi


# -- transition probability ------------------------------------------------------

def _single_run(model, eta, from_level, to_level, config, corrected):
    frames = transported_frames(model, [config.t0, config.t1])
    f0, f1 = frames
    n = model.dimension
    e_from = np.zeros(n, dtype=complex)
    e_from[from_level - 1] = 1.0
    coeffs = e_from.copy()
    if corrected:
        coeffs = coeffs + _first_order_mix(model, eta, f0) @ e_from
        coeffs /= np.linalg.norm(f0.right @ coeffs)
    psi0 = f0.right @ coeffs
    psi0 /= np.linalg.norm(psi0)
    traj = integrate(model, eta, config, psi0)
    raw = f1.left @ traj.final
    amps = raw
    if corrected:
        amps = raw - _first_order_mix(model, eta, f1) @ raw
    amp = complex(amps[to_level - 1])
    eps = traj.error_estimate
    p = abs(amp) ** 2
    err = 2 * abs(amp) * eps + eps ** 2
    return p, amp, err, traj, raw


def numeric_transition_probability(model: ModelSpec, from_level: int, to_level: int,
                                   eta: float | None = None, t0: float | None = None,
                                   t1: float | None = None,
                                   config: SolverConfig | None = None,
                                   corrected: bool = True,
                                   window_rel_tol: float = 1e-2,
                                   window_abs_tol: float = 1e-9) -> TransitionReport:
    """
    Start in |E_from(t0)>, integrate to t1 and read the population of ``to_level``.

    With ``corrected`` the initial state and the read-out include the
    first-order adiabatic dressing, which removes the slowly decaying
    oscillatory tail of finite windows.  The window is then widened by 25%
    (up to twice) until the probability changes by less than
    ``window_abs_tol + window_rel_tol * P``.
    """
    eta = model.eta if eta is None else float(eta)
    model = model.with_eta(eta) if eta != model.eta else model
    for lvl in (from_level, to_level):
        if not 1 <= lvl <= model.dimension:
            raise MethodPreconditionError(f"level {lvl} outside 1..{model.dimension}")
    base = config or SolverConfig()
    auto = t0 is None and t1 is None
    if auto:
        t0, t1 = adiabatic_window(model, eta)
    else:
        t0 = base.t0 if t0 is None else float(t0)
        t1 = base.t1 if t1 is None else float(t1)
    cfg = base.with_window(t0, t1)
    p, amp, err, traj, raw = _single_run(model, eta, from_level, to_level, cfg, corrected)
    history = [(cfg.t0, cfg.t1, p)]
    margin = None
    if auto:
        for _ in range(2):
            mid = 0.5 * (cfg.t0 + cfg.t1)
            half = 0.5 * (cfg.t1 - cfg.t0) * 1.25
            wide = cfg.with_window(mid - half, mid + half)
            p2, amp2, err2, traj2, raw2 = _single_run(model, eta, from_level, to_level, wide,
                                                      corrected)
            history.append((wide.t0, wide.t1, p2))
            margin = abs(p2 - p)
            converged = margin <= window_abs_tol + window_rel_tol * max(p, p2)
            cfg, p, amp, err, traj, raw = wide, p2, amp2, err2, traj2, raw2
            if converged:
                break
        else:
            raise WindowNotConvergedError(
                f"window not converged after two widenings (last change {margin:.3e})")
    diag = {
        "t0": cfg.t0, "t1": cfg.t1, "rel_tol": cfg.rel_tol, "abs_tol": cfg.abs_tol,
        "steps": traj.steps, "rejected": traj.rejected, "norm_drift": traj.norm_drift,
        "error_estimate": err, "window_margin": margin, "window_history": history,
        "corrected_readout": corrected,
        "uncorrected_probability": float(abs(raw[to_level - 1]) ** 2),
    }
    return _report("numeric", from_level, to_level, eta, abs(amp) ** 2, amp, diag)


def trajectory_csv(model: ModelSpec, traj: Trajectory) -> str:
    """Columns: t, Re/Im of each component, then adiabatic populations."""
    n = model.dimension
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["t"]
    for i in range(n):
        header += [f"re_psi{i + 1}", f"im_psi{i + 1}"]
    header += [f"pop{i + 1}" for i in range(n)]
    w.writerow(header)
    for t, psi in traj.samples:
        frame = anchor_frame(model, t)
        pops = np.abs(frame.left @ psi) ** 2
        row = [f"{t:.12g}"]
        for c in psi:
            row += [f"{c.real:.12e}", f"{c.imag:.12e}"]
        row += [f"{p:.12e}" for p in pops]
        w.writerow(row)
    return buf.getvalue()


def default_sample_times(config: SolverConfig, count: int = 201):
    return list(np.linspace(config.t0, config.t1, count))

