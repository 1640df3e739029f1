import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exactwkb.analytic import PathPolyline
from exactwkb.errors import BranchError, CouplingError, ModelValidationError
from exactwkb.model import (LZSM3_DEFAULTS, builtin, coupling_g, delta_e, eigen_continued,
                            eigenvalues, evaluate_h, load_model, model_from_document,
                            model_to_document, nlzsm_coupling_closed_form)

LZ = builtin("nlzsm", {"n": 1, "v": 1, "delta": 1})
CUBIC = builtin("nlzsm", {"n": 3, "v": 1, "delta": 1})
THREE = builtin("lzsm3")


def test_h_at_origin():
    assert np.allclose(evaluate_h(LZ, 0), [[0, 1], [1, 0]])
    assert np.allclose(evaluate_h(THREE, 0), [[0, 0.5, 0.5], [0.5, 4, 0.5], [0.5, 0.5, 0]])


def test_lzsm3_defaults():
    assert LZSM3_DEFAULTS == {"v1": 1.0, "v2": 2.0, "a": 4.0, "d12": 0.5, "d13": 0.5,
                              "d23": 0.5, "eta": 1.0}


def test_cubic_entries():
    m = builtin("nlzsm", {"n": 3, "v": 1, "delta": 1, "eta": 10})
    t = 0.7
    assert np.allclose(evaluate_h(m, t), [[t ** 3, 1], [1, -t ** 3]])
    assert m.eta == 10


@pytest.mark.parametrize("params", [
    {"n": 1, "v": 1, "delta": 0, "eta": 1},
    {"n": 1, "v": -1, "delta": 1},
    {"n": 1, "v": 1, "delta": 1, "eta": 0},
    {"n": 1.5, "v": 1, "delta": 1},
])
def test_invalid_nlzsm(params):
    with pytest.raises(ModelValidationError):
        builtin("nlzsm", params)


def test_unknown_builtin():
    with pytest.raises(ModelValidationError):
        builtin("ising", {})


@settings(max_examples=20, deadline=None)
@given(st.floats(-30, 30))
def test_hermitian_on_real_axis(t):
    for m in (LZ, CUBIC, THREE):
        h = evaluate_h(m, t)
        assert np.max(np.abs(h - h.conj().T)) <= 1e-12


def test_epsilon_scales_sweep_rate():
    m = LZ.with_epsilon(0.05)
    assert np.allclose(evaluate_h(m, 1.0), [[1 + 0.05j, 1], [1, -1 - 0.05j]])
    three = THREE.with_epsilon(0.1)
    h = evaluate_h(three, 1.0)
    assert abs(h[0, 0] - (1 + 0.1j)) < 1e-15
    assert abs(h[1, 1] - (4 + 2 * (1 + 0.1j))) < 1e-15
    assert h[2, 2] == 0


def test_real_axis_energies_descend():
    br = eigen_continued(THREE, PathPolyline((-6, -2, 0, 3)))
    for s in br.samples:
        e = s.energies
        assert np.max(np.abs(e.imag)) < 1e-10
        assert np.all(np.diff(e.real) < 0)


def test_gap_shrinks_toward_turning_point():
    br = eigen_continued(LZ, PathPolyline((0, 0.9j)))
    ts = [s.t for s in br.samples]
    gaps = [abs(delta_e(LZ, 1, 2, br, t)) for t in ts]
    assert all(b < a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert abs(gaps[-1] - 2 * math.sqrt(1 - 0.81)) < 1e-9


def test_delta_e_values():
    br = eigen_continued(LZ, PathPolyline((0, 2)))
    assert abs(delta_e(LZ, 1, 2, br, 0) - 2) < 1e-12
    assert abs(delta_e(LZ, 1, 2, br, 2) - 2 * math.sqrt(5)) < 1e-12
    near = eigen_continued(LZ, PathPolyline((0, 0.999999j)))
    assert abs(delta_e(LZ, 1, 2, near, 0.999999j)) < 1e-2
    assert abs(np.diff(eigenvalues(LZ, 1j))[0]) < 1e-7


def test_path_through_turning_point_raises():
    with pytest.raises(BranchError) as info:
        eigen_continued(LZ, PathPolyline((0, 2j)))
    assert info.value.pair == (1, 2)


def test_monodromy_swaps_only_colliding_pair():
    # small loop around the upper (2,3) turning point near -3.96 + 0.89i
    from exactwkb.stokes import find_all_turning_points
    tp = next(p for p in find_all_turning_points(THREE) if p.pair == (2, 3) and p.upper
              and p.location.real < -3)
    c, r = tp.location, 0.05
    ring = [c + r * cmath.exp(1j * (-math.pi / 2 + 2 * math.pi * k / 48)) for k in range(49)]
    br = eigen_continued(THREE, PathPolyline((c.real, c - 1j * r) + tuple(ring[1:])))
    start = br.samples[0].energies
    before = [s for s in br.samples if abs(s.t - (c - 1j * r)) < 1e-12][0].energies
    after = br.final.energies
    assert abs(after[1] - before[2]) < 1e-8
    assert abs(after[2] - before[1]) < 1e-8
    assert abs(after[0] - before[0]) < 1e-8
    assert len(start) == 3


def test_coupling_examples():
    br = eigen_continued(LZ, PathPolyline((-1, 1)))
    assert abs(coupling_g(LZ, 1, 2, br, 0) - 0.5j) < 1e-6
    br3 = eigen_continued(CUBIC, PathPolyline((-1, 1)))
    assert abs(coupling_g(CUBIC, 1, 2, br3, 0)) < 1e-6


@pytest.mark.parametrize("model", [LZ, CUBIC])
def test_closed_form_coupling(model):
    xs = np.linspace(-2.5, 2.5, 23)
    br = eigen_continued(model, PathPolyline((-3, 3)))
    for x in xs:
        ref = complex(nlzsm_coupling_closed_form(model, x))
        fd = coupling_g(model, 1, 2, br, x)
        ex = coupling_g(model, 1, 2, br, x, method="exact")
        assert abs(fd - ref) <= 1e-6 * abs(ref) + 1e-7
        assert abs(ex - ref) <= 1e-10 * abs(ref) + 1e-12


def test_coupling_antisymmetry_real_axis():
    br = eigen_continued(THREE, PathPolyline((-6, 2)))
    for x in (-5.0, -3.1, -1.0, 0.4, 1.7):
        for j in range(1, 4):
            assert abs(coupling_g(THREE, j, j, br, x).imag) < 1e-8
            for k in range(j + 1, 4):
                gjk = coupling_g(THREE, j, k, br, x)
                gkj = coupling_g(THREE, k, j, br, x)
                assert abs(gjk - gkj.conjugate()) < 1e-8


def test_coupling_refuses_turning_point():
    br = eigen_continued(LZ, PathPolyline((0, 0.9999999j)))
    with pytest.raises(CouplingError):
        coupling_g(LZ, 1, 2, br, 0.9999999j, turning_points=[1j, -1j])


def test_two_level_closed_form_energies():
    for t in (0.3, 1.2 + 0.4j, -0.8 + 0.2j):
        e = np.sort_complex(eigenvalues(CUBIC, t))
        root = np.sqrt(complex(t ** 6 + 1))
        assert np.allclose(e, np.sort_complex(np.array([root, -root])), atol=1e-10)


def test_document_round_trip(tmp_path):
    for m in (CUBIC, THREE, LZ.with_epsilon(0.01)):
        doc = model_to_document(m)
        again = model_from_document(doc)
        assert np.allclose(evaluate_h(again, 0.3 + 0.2j), evaluate_h(m, 0.3 + 0.2j))
    path = tmp_path / "m.yaml"
    path.write_text("dimension: 2\neta: 2\nentries: [[0, 1], [[0.6, -0.8]], [[0.6, 0.8]], [0, -1]]\n")
    m = load_model(path)
    assert m.eta == 2
    assert abs(evaluate_h(m, 0)[1, 0] - (0.6 + 0.8j)) < 1e-15


@pytest.mark.parametrize("text", [
    "x: [",
    "dimension: 2\neta: 1\nentries: [[0, 1], [1], [2], [0, -1]]\n",
    "dimension: 2\neta: 1\nentries: [[0, 1], [0], [0], [0, -1]]\n",
    "dimension: 2\neta: -1\nentries: [[0, 1], [1], [1], [0, -1]]\n",
])
def test_bad_model_files(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(ModelValidationError):
        load_model(path)


def test_with_param():
    m = THREE.with_param("d23", 0.3)
    assert m.params["d23"] == 0.3
    assert evaluate_h(m, 0)[1, 2] == 0.3
    with pytest.raises(ModelValidationError):
        THREE.with_param("nope", 1)
