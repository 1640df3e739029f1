"""
Acceptance criteria 1-7.

Each test records a one-line verdict in ``VERDICTS``; ``conftest.py`` prints
them after the run (they also go to stdout with ``-s``).  Failing criteria
are left failing: see the decisions ledger for the analysis.
"""

import cmath
import math
import time

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from exactwkb.connection import (ddp_probability, exp_prefactor, gamma_coefficient,
                                 gddp_probability, step_matrix, theta_at_tp, transfer_product,
                                 transition_probability_ewkb)
from exactwkb.integrator import SolverConfig, numeric_transition_probability
from exactwkb.model import builtin
from exactwkb.stokes import build_graph, find_all_turning_points

pytestmark = pytest.mark.slow

VERDICTS = {}
NUMERIC_RUNS = []

LZ = builtin("nlzsm", {"n": 1, "v": 1, "delta": 1})
QUADRATIC = builtin("nlzsm", {"n": 2, "v": 1, "delta": 1})
CUBIC = builtin("nlzsm", {"n": 3, "v": 1, "delta": 1})
THREE = builtin("lzsm3")
BUILTINS = (LZ, QUADRATIC, CUBIC, THREE)
NLZSM = (LZ, QUADRATIC, CUBIC)

SMALL_GAP = (0.02, 0.05)
GAPPED = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def _verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    VERDICTS[n] = line
    print(line)
    return ok


def _numeric(model, a, b, **kw):
    rep = numeric_transition_probability(model, a, b, **kw)
    NUMERIC_RUNS.append((model, a, b, rep))
    return rep


def _ewkb(model, a, b, graph=None):
    return transition_probability_ewkb(model, a, b, graph=graph)


# -- 1 -------------------------------------------------------------------------------

def test_criterion_1_linear_exactness():
    start = time.perf_counter()
    worst_closed, worst_num = 0.0, 0.0
    for eta in (0.5, 1.0, 2.0):
        m = LZ.with_eta(eta)
        exact = math.exp(-math.pi * eta)
        for rep in (ddp_probability(m), gddp_probability(m), _ewkb(m, 1, 2)):
            worst_closed = max(worst_closed, abs(rep.probability - exact) / exact)
        worst_num = max(worst_num, abs(_numeric(m, 1, 2).probability - exact) / exact)
    elapsed = time.perf_counter() - start
    ok = worst_closed <= 0.01 and worst_num <= 0.02 and elapsed < 60
    _verdict(1, ok, f"closed forms max rel err {worst_closed:.2e} (<=1e-2), numeric "
                    f"{worst_num:.2e} (<=2e-2), {elapsed:.1f}s (<60s)")
    assert ok


# -- 2 -------------------------------------------------------------------------------

def _leading_exponent(model):
    tps = find_all_turning_points(model)
    locs = [tp.location for tp in tps]
    return min(-math.log(abs(exp_prefactor(model.with_eta(1.0), tp, 0.0, others=locs)))
               for tp in tps if tp.upper)


def _minima(etas, ps):
    return [k for k in range(1, len(ps) - 1) if ps[k] < ps[k - 1] and ps[k] < ps[k + 1]]


def _refine(f, lo, hi):
    return minimize_scalar(f, bounds=(lo, hi), method="bounded",
                           options={"xatol": 1e-3}).x


def test_criterion_2_cubic_interference():
    x = _leading_exponent(CUBIC)
    lo, hi = 1.0 / x, 4.0 / x
    graph = build_graph(CUBIC)
    etas = np.linspace(lo, hi, 34)
    ew = [_ewkb(CUBIC.with_eta(e), 1, 2, graph).probability for e in etas]
    nu = [_numeric(CUBIC, 1, 2, eta=e).probability for e in etas]
    rel = [abs(a - b) / b for a, b in zip(ew, nu) if b > 1e-3]
    worst = max(rel)
    agree = worst <= 0.05

    me, mn = _minima(etas, ew), _minima(etas, nu)
    positions = []
    if me and mn:
        ke = me[0]
        kn = min(mn, key=lambda k: abs(etas[k] - etas[ke]))
        pe = _refine(lambda e: _ewkb(CUBIC.with_eta(e), 1, 2, graph).probability,
                     etas[ke - 1], etas[ke + 1])
        pn = _refine(lambda e: numeric_transition_probability(CUBIC, 1, 2, eta=e).probability,
                     etas[kn - 1], etas[kn + 1])
        positions = [pe, pn]
    minimum_ok = bool(positions) and abs(positions[0] - positions[1]) <= 0.02 * positions[1]
    where = (f"minima at eta {positions[0]:.4f} (ewkb) / {positions[1]:.4f} (numeric)"
             if positions else "no common minimum")
    ok = agree and minimum_ok
    _verdict(2, ok, f"eta in [{lo:.3f}, {hi:.3f}]: max rel diff {worst:.2%} where P>1e-3 "
                    f"(<=5%: {'yes' if agree else 'no'}); {where} "
                    f"(within 2%: {'yes' if minimum_ok else 'no'})")
    assert minimum_ok, "interference minima do not line up"
    assert agree, f"ewkb and numeric differ by up to {worst:.2%}"


# -- 3 -------------------------------------------------------------------------------

def test_criterion_3_three_level_sweep():
    start = time.perf_counter()
    gaps = []
    for d in SMALL_GAP + GAPPED:
        m = THREE.with_param("d23", d)
        gaps.append((d, _ewkb(m, 3, 2).probability, _numeric(m, 3, 2).probability))
    elapsed = time.perf_counter() - start
    small = [abs(a - b) for d, a, b in gaps if d in SMALL_GAP]
    large = [(d, abs(a - b)) for d, a, b in gaps if d not in SMALL_GAP]
    worst_d, worst = max(large, key=lambda t: t[1])
    small_ok = max(small) > 0.05
    large_ok = worst <= 0.05
    ok = small_ok and large_ok and elapsed < 600
    table = " ".join(f"{d:g}:{a:.3f}/{b:.3f}" for d, a, b in gaps)
    _verdict(3, ok, f"max |dP| {worst:.3f} at d23={worst_d:g} for d23>=0.2 (<=0.05); "
                    f"small-gap disagreement {max(small):.3f} (>0.05); {elapsed:.0f}s; "
                    f"d23:ewkb/numeric {table}")
    assert small_ok
    assert elapsed < 600
    assert large_ok, f"|P_ewkb - P_numeric| reaches {worst:.3f}"


# -- 4 -------------------------------------------------------------------------------

def _departure_angles(graph, tp):
    out = []
    for ln in graph.lines:
        if ln.origin.location == tp.location:
            v = ln.polyline.vertices
            out.append(cmath.phase(v[min(10, len(v) - 1)] - tp.location))
    return out


def test_criterion_4_stokes_structure():
    problems = []
    for m in BUILTINS:
        locs = [tp.location for tp in find_all_turning_points(m)]
        for z in locs:
            if min(abs(z.conjugate() - w) for w in locs) > 1e-8:
                problems.append(f"{m.label}: {z} has no conjugate")
        labels = []
        for eps in (0.01, 0.05):
            g = build_graph(m.with_epsilon(eps), epsilon_policy="fixed")
            if g.degenerate:
                problems.append(f"{m.label} eps={eps}: degenerate")
            for tp in g.turning_points:
                if not tp.simple:
                    continue
                ang = sorted(a % (2 * math.pi) for a in _departure_angles(g, tp))
                if len(ang) != 3:
                    problems.append(f"{m.label} eps={eps}: {len(ang)} lines at {tp.location}")
                    continue
                seps = np.diff(ang + [ang[0] + 2 * math.pi])
                if np.max(np.abs(seps - 2 * math.pi / 3)) > 0.05:
                    problems.append(f"{m.label} eps={eps}: angles {np.round(seps, 3)}")
            labels.append([(g.lines[i].origin.pair, g.lines[i].dominant_index)
                           for _, i in g.crossings])
        if labels[0] != labels[1]:
            problems.append(f"{m.label}: crossings differ between eps 0.01 and 0.05")
    for m in NLZSM:
        if not build_graph(m, epsilon_policy="fixed").degeneracy_flags:
            problems.append(f"{m.label}: unperturbed graph not flagged degenerate")
    ok = not problems
    _verdict(4, ok, "all structural checks hold" if ok else "; ".join(problems))
    assert ok


# -- 5 -------------------------------------------------------------------------------

def test_criterion_5_coefficient_equivalence():
    worst_eq, worst_unit = 0.0, 0.0
    for m in BUILTINS:
        tps = find_all_turning_points(m)
        locs = [tp.location for tp in tps]
        for tp in tps:
            if not tp.simple:
                continue
            g, _ = gamma_coefficient(m, tp, others=locs)
            worst_eq = max(worst_eq, abs(1j * theta_at_tp(m, tp, others=locs) - g))
            if m in NLZSM:
                worst_unit = max(worst_unit, min(abs(g - 1), abs(g + 1)))
    ok = worst_eq <= 1e-4 and worst_unit <= 1e-6
    _verdict(5, ok, f"max |i tan(theta/2) - Gamma| {worst_eq:.2e} (<=1e-4); "
                    f"max |Gamma -+ 1| on nlzsm {worst_unit:.2e} (<=1e-6)")
    assert ok


# -- 6 -------------------------------------------------------------------------------

def _levels(m):
    return (1, 2) if m.dimension == 2 else (3, 2)


def test_criterion_6_algebraic_invariants():
    worst_det, worst_shift, worst_flip = 0.0, 0.0, 0.0
    flips = []
    for m in BUILTINS:
        m = m.with_eta(2.0) if m.dimension == 2 and m.params["n"] > 1 else m
        a, b = _levels(m)
        g = build_graph(m)
        lo = min(x for x, _ in g.crossings)
        hi = max(x for x, _ in g.crossings)
        tm = transfer_product(g, m)
        for st in tm.provenance:
            worst_det = max(worst_det, abs(np.linalg.det(step_matrix(st, m.dimension)) - 1))
        worst_det = max(worst_det, abs(tm.determinant() - 1))
        ref = transition_probability_ewkb(m, a, b, graph=g).probability
        for t0 in (lo - 0.5, lo - 2.5):
            p = transition_probability_ewkb(m, a, b, t0=t0, t1=hi + 1.0, graph=g).probability
            worst_shift = max(worst_shift, abs(p - ref))
        if m.dimension == 2:
            for fn in (ddp_probability, gddp_probability):
                base = fn(m).probability
                for t0 in (lo - 0.5, lo - 2.5):
                    worst_shift = max(worst_shift, abs(fn(m, t0).probability - base))
        flipped = transition_probability_ewkb(m, a, b, graph=build_graph(m, flip_sign=True))
        diff = abs(flipped.probability - ref)
        flips.append(f"{m.label} {ref:.4f}/{flipped.probability:.4f}")
        worst_flip = max(worst_flip, diff)
    ok = worst_det <= 1e-10 and worst_shift <= 1e-8 and worst_flip <= 1e-3
    _verdict(6, ok, f"max |det-1| {worst_det:.1e} (<=1e-10); max t0-shift change "
                    f"{worst_shift:.1e} (<=1e-8); max eps-sign change {worst_flip:.3f} "
                    f"(<=1e-3) [+eps/-eps: {', '.join(flips)}]")
    assert worst_det <= 1e-10
    assert worst_shift <= 1e-8
    assert worst_flip <= 1e-3, "flipping the sign of epsilon changes a probability"


# -- 7 -------------------------------------------------------------------------------

def test_criterion_7_oracle_health():
    cases = [(LZ.with_eta(e), 1, 2) for e in (0.5, 1.0, 2.0)]
    cases += [(CUBIC.with_eta(e), 1, 2) for e in (2.0, 3.5)]
    cases += [(THREE.with_param("d23", d), 3, 2) for d in (0.05, 0.5, 1.0)]
    worst_drift, worst_ratio = 0.0, 0.0
    for m, a, b in cases:
        rep = _numeric(m, a, b)
        d = rep.diagnostics
        half = SolverConfig(rel_tol=d["rel_tol"] / 2, abs_tol=d["abs_tol"] / 2)
        again = numeric_transition_probability(m, a, b, t0=d["t0"], t1=d["t1"], config=half)
        worst_drift = max(worst_drift, again.diagnostics["norm_drift"])
        worst_ratio = max(worst_ratio,
                          abs(again.probability - rep.probability) / d["error_estimate"])
    for _, _, _, rep in NUMERIC_RUNS:
        worst_drift = max(worst_drift, rep.diagnostics["norm_drift"])
    ok = worst_drift <= 1e-8 and worst_ratio <= 1.0
    _verdict(7, ok, f"max norm drift {worst_drift:.2e} over {len(NUMERIC_RUNS)} runs "
                    f"(<=1e-8); tolerance halving moved P by at most {worst_ratio:.3f} of "
                    "the prior error estimate (<=1)")
    assert ok
