import cmath
import math

import numpy as np
import pytest

from exactwkb.model import builtin
from exactwkb.stokes import (build_graph, find_all_turning_points, find_turning_points,
                             graph_csv_rows, graph_svg, initial_directions, trace_line)

LZ = builtin("nlzsm", {"n": 1, "v": 1, "delta": 1})
CUBIC = builtin("nlzsm", {"n": 3, "v": 1, "delta": 1})
THREE = builtin("lzsm3")


def _sorted(points):
    return sorted(points, key=lambda z: (round(z.real, 6), round(z.imag, 6)))


def test_lz_turning_points():
    locs = _sorted([tp.location for tp in find_turning_points(LZ, (1, 2))])
    assert np.allclose(locs, [-1j, 1j], atol=1e-10)


def test_cubic_turning_points():
    tps = find_turning_points(CUBIC, (1, 2))
    expect = [cmath.exp(s * 1j * (math.pi / 6 + m * math.pi / 3))
              for m in range(3) for s in (1, -1)]
    got = _sorted([tp.location for tp in tps])
    assert np.allclose(got, _sorted(expect), atol=1e-10)
    assert all(abs(abs(z) - 1) < 1e-10 for z in got)
    assert all(tp.simple for tp in tps)


def test_three_level_turning_points():
    tps = find_all_turning_points(THREE)
    pairs = [tp.pair for tp in tps]
    assert pairs.count((1, 2)) == 2
    assert pairs.count((2, 3)) == 4
    locs = [tp.location for tp in tps]
    for z in locs:
        assert min(abs(z.conjugate() - w) for w in locs) < 1e-8


def test_pair_must_be_adjacent():
    with pytest.raises(ValueError):
        find_turning_points(THREE, (1, 3))


def test_airy_directions():
    for model in (LZ, CUBIC, THREE):
        for tp in find_all_turning_points(model):
            angles = sorted(cmath.phase(d) % (2 * math.pi) for d in initial_directions(tp, model))
            gaps = np.diff(angles + [angles[0] + 2 * math.pi])
            assert np.allclose(gaps, 2 * math.pi / 3, atol=1e-6)


def test_lz_direction_toward_axis():
    m = LZ.with_epsilon(0.05)
    tp = next(p for p in find_all_turning_points(m) if p.upper)
    dirs = initial_directions(tp, m)
    assert sum(d.imag < 0 for d in dirs) == 1


def test_lz_degenerate_segment():
    tps = find_all_turning_points(LZ)
    up = next(p for p in tps if p.upper)
    line = trace_line(LZ, up, -1j, max_radius=6.0, others=[p.location for p in tps])
    assert line.termination == "hit_turning_point"
    assert abs(line.polyline.vertices[-1] + 1j) < 1e-2


def test_lz_graph_degenerate_then_resolved():
    g0 = build_graph(LZ, epsilon_policy="fixed")
    assert g0.degeneracy_flags
    g = build_graph(LZ.with_epsilon(0.05), epsilon_policy="fixed")
    assert not g.degenerate
    xs = [x for x, _ in g.crossings]
    assert len(xs) == 2 and xs == sorted(xs)


def test_auto_policy_escalates():
    g = build_graph(LZ)
    assert g.epsilon in (0.01, 0.05)
    assert not g.degenerate
    with pytest.raises(ValueError):
        build_graph(LZ, epsilon_policy="sometimes")


def test_cubic_crossings():
    g = build_graph(CUBIC.with_epsilon(0.05), epsilon_policy="fixed")
    assert len(g.crossings) == 6


def test_three_level_crossings():
    g = build_graph(THREE)
    assert len(g.crossings) == 6
    pairs = [g.lines[i].origin.pair for _, i in g.crossings]
    assert pairs == [(2, 3), (2, 3), (1, 2), (1, 2), (2, 3), (2, 3)]


def _graph_invariants(g):
    per_tp = {}
    for ln in g.lines:
        per_tp.setdefault(ln.origin.location, []).append(ln)
        f = np.asarray(ln.samples_f)
        if f.size:
            resid = np.abs(f.real) / (np.abs(f) + 1e-3)
            assert np.max(resid) <= 1e-3
            signs = np.sign(f.imag[np.abs(f.imag) > 1e-12])
            assert np.all(signs == signs[0])
    for tp in g.turning_points:
        if tp.simple:
            assert len(per_tp[tp.location]) == 3


@pytest.mark.parametrize("model", [LZ, CUBIC, THREE])
@pytest.mark.parametrize("eps", [0.01, 0.05])
def test_graph_invariants(model, eps):
    _graph_invariants(build_graph(model.with_epsilon(eps), epsilon_policy="fixed"))


@pytest.mark.parametrize("model", [LZ, CUBIC, THREE])
def test_epsilon_stability(model):
    a = build_graph(model.with_epsilon(0.01), epsilon_policy="fixed")
    b = build_graph(model.with_epsilon(0.05), epsilon_policy="fixed")
    lab = lambda g: [(g.lines[i].origin.pair, g.lines[i].dominant_index) for _, i in g.crossings]
    assert lab(a) == lab(b)


def test_export():
    g = build_graph(LZ.with_epsilon(0.05), epsilon_policy="fixed")
    rows = list(graph_csv_rows(g))
    assert rows[0] == ("line_id", "pair_i", "pair_j", "dominant", "re_t", "im_t")
    assert len(rows) > 10
    svg = graph_svg(g)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
