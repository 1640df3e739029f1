import math

import numpy as np
import pytest

from exactwkb.errors import MethodPreconditionError
from exactwkb.integrator import (SolverConfig, adiabatic_window, default_sample_times,
                                 integrate, nonadiabaticity, numeric_transition_probability,
                                 project_adiabatic, trajectory_csv, transported_frames)
from exactwkb.model import ModelSpec, builtin

LZ = builtin("nlzsm", {"n": 1, "v": 1, "delta": 1})
THREE = builtin("lzsm3")


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=0.1)
    with pytest.raises(ValueError):
        SolverConfig(t0=1, t1=0)


def test_constant_hamiltonian_phase():
    # H = diag(1, -1): exact solution is a pure phase
    m = ModelSpec((((1.0,), (0.0,)), ((0.0,), (-1.0,))), eta=2.0)
    cfg = SolverConfig(t0=0.0, t1=3.0)
    traj = integrate(m, None, cfg, np.array([1.0, 0.0]))
    assert abs(traj.final[0] - np.exp(-2j * 3.0)) < 1e-8
    assert traj.norm_drift < 1e-9


def test_backward_returns_to_start():
    cfg = SolverConfig(t0=-3.0, t1=3.0)
    psi0 = np.array([0.6, 0.8j])
    fwd = integrate(LZ, 1.0, cfg, psi0)
    back = integrate(LZ, 1.0, cfg, fwd.final, backward=True)
    assert np.allclose(back.final, psi0, atol=1e-8)


@pytest.mark.parametrize("eta", [0.5, 1.0, 2.0])
def test_lz_probability(eta):
    rep = numeric_transition_probability(LZ, 1, 2, eta=eta)
    expect = math.exp(-math.pi * eta)
    assert abs(rep.probability - expect) <= 0.02 * expect
    assert rep.diagnostics["norm_drift"] <= 1e-8


def test_dressing_only_affects_tail():
    a = numeric_transition_probability(LZ, 1, 2, t0=-30.0, t1=30.0)
    b = numeric_transition_probability(LZ, 1, 2, t0=-30.0, t1=30.0, corrected=False)
    assert abs(a.probability - b.probability) <= 0.02 * a.probability


def test_survival_and_unitarity():
    reps = [numeric_transition_probability(THREE, 3, k) for k in (1, 2, 3)]
    total = sum(r.probability for r in reps)
    assert abs(total - 1) < 1e-6


def test_level_validation():
    with pytest.raises(MethodPreconditionError):
        numeric_transition_probability(LZ, 1, 3)


def test_window_and_nonadiabaticity():
    lo, hi = adiabatic_window(LZ, 1.0)
    assert lo == -hi and hi > 1
    assert nonadiabaticity(LZ, 1.0, 2 * hi) < 1e-4
    assert nonadiabaticity(LZ, 1.0, 0.0) == pytest.approx(0.25, rel=1e-10)


def test_projection_recovers_eigenstate():
    f = transported_frames(THREE, [-1.3])[0]
    amps = project_adiabatic(THREE, -1.3, f.right[:, 1])
    assert abs(abs(amps[1]) - 1) < 1e-12
    assert np.max(np.abs(np.delete(amps, 1))) < 1e-12


def test_trajectory_csv():
    cfg = SolverConfig(t0=-2.0, t1=2.0)
    traj = integrate(LZ, 1.0, cfg, np.array([1.0, 0.0]), default_sample_times(cfg, 5))
    text = trajectory_csv(LZ, traj)
    lines = text.strip().split("\n")
    assert lines[0] == "t,re_psi1,im_psi1,re_psi2,im_psi2,pop1,pop2"
    assert len(lines) == 6
    pops = [float(x) for x in lines[3].split(",")[-2:]]
    assert abs(sum(pops) - 1) < 1e-8
