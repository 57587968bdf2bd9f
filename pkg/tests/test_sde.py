import numpy as np
import pytest

from wiener_reduction import models as M
from wiener_reduction import sde
from wiener_reduction.sde import ParamError, RunParams


def test_params_validation():
    with pytest.raises(ParamError):
        RunParams(mu=0.0)
    with pytest.raises(ParamError):
        RunParams(t_a=1.0, t_b=0.5)
    with pytest.raises(ParamError):
        RunParams(t_b=0.25, dt=0.1)
    assert RunParams(t_b=0.25, dt=1e-3).n_steps == 250


def test_vector_noise_shift_is_exact():
    m = M.builtin_so2_planar()
    p = RunParams()
    st = sde.PathState("total", np.array([[1.0, 0.0, 0.2, 0.4]]), 0.0, np.array([True]))
    new = sde.step_total(m, st, np.zeros((1, 2)), np.array([[0.3, -0.1]]), 1e-3, p)
    assert np.allclose(new.coords[0, 2:], [0.5, 0.3])
    assert np.allclose(new.coords[0, :2], [1.0, 0.0])


def test_block_partition_invariance():
    m = M.builtin_so2_planar(0.1)
    ir = M.so2_irrep(1)
    p = RunParams(t_b=0.02, dt=1e-3)
    full = sde.simulate_reduced_block(m, ir, p, (1.5, 0.5, 0.0), "girsanov", 9, 0, 40)
    a = sde.simulate_reduced_block(m, ir, p, (1.5, 0.5, 0.0), "girsanov", 9, 0, 17)
    b = sde.simulate_reduced_block(m, ir, p, (1.5, 0.5, 0.0), "girsanov", 9, 17, 23)
    assert np.array_equal(full.Z, np.concatenate([a.Z, b.Z]))
    assert np.array_equal(full.end, np.concatenate([a.end, b.end]))
    assert np.array_equal(full.log_jacobian, np.concatenate([a.log_jacobian, b.log_jacobian]))


def test_exits_are_flagged_and_frozen():
    m = M.builtin_so2_planar()
    p = RunParams(t_b=0.5, dt=1e-2, x_min=0.3)
    blk = sde.simulate_reduced_block(m, M.so2_irrep(0), p, (0.35, 0.0, 0.0), "original",
                                     1, 0, 200, record=True)
    dead = ~blk.alive
    assert dead.any()
    last = blk.trajectory[-1, dead]
    assert np.all(last[:, 0] >= 0.3)


def test_simulate_path_records_trajectory():
    m = M.builtin_so2_planar()
    blk = sde.simulate_path(m, (1.2, 0.1, 0.1), "original", RunParams(t_b=0.01, dt=1e-3))
    assert blk.trajectory.shape == (11, 1, 3)
    blk = sde.simulate_path(m, (1.2, 0.0, 0.1, 0.1), "total", RunParams(t_b=0.01, dt=1e-3))
    assert blk.trajectory.shape == (11, 1, 4)


def test_free_heat_kernel_moments():
    # flat R^2 x R^2: Q(t) is Gaussian with variance mu^2 kappa t per component
    m = M.builtin_so2_planar()
    p = RunParams(t_b=0.2, dt=1e-2, mu=1.3, kappa=0.8)
    blk = sde.simulate_total_block(m, p, (2.0, 0.0, 0.0, 0.0), 4, 0, 40_000)
    z = blk.end
    assert np.allclose(z.mean(0), [2.0, 0, 0, 0], atol=0.02)
    assert np.allclose(z.var(0), 1.3 ** 2 * 0.8 * 0.2, rtol=0.03)


def test_reduced_radial_mean_matches_total():
    # E|Q(t)| from the reduced radial process against the total-space process
    m = M.builtin_so2_planar()
    p = RunParams(t_b=0.1, dt=1e-3)
    red = sde.simulate_reduced_block(m, M.so2_irrep(0), p, (1.0, 0.3, 0.0), "original",
                                     5, 0, 20_000)
    tot = sde.simulate_total_block(m, p, (1.0, 0.0, 0.3, 0.0), 6, 0, 20_000)
    r_tot = np.linalg.norm(tot.end[:, :2], axis=1)
    se = np.hypot(red.end[:, 0].std(), r_tot.std()) / np.sqrt(20_000)
    assert abs(red.end[:, 0].mean() - r_tot.mean()) < 4 * se
