import numpy as np
import pytest
from scipy.integrate import solve_ivp

from wienerid.model import DisturbanceSde
from wienerid.truth import (
    gen_example1,
    gen_example2,
    euler_maruyama_ref,
    load_dataset,
    prbs,
    save_dataset,
)


def _const_sde(a, b):
    return DisturbanceSde(A=lambda th: np.array([[a]]), B=lambda th: np.array([[b]]),
                          C=lambda th: np.array([[1.0]]), A_jac=None, B_jac=None, C_jac=None)


def test_example1_all_zero():
    ds = gen_example1(50, 0, theta=[-1.0, 1.0, 0.0], noise_std=0.0, amplitude=0.0)
    np.testing.assert_array_equal(ds.y[1:], 0.0)


def test_example1_matches_fine_integration():
    ds = gen_example1(25, 3, theta=[-1.0, 1.0, 0.0], noise_std=0.0)
    sol = solve_ivp(lambda t, x: -x + ds.exosystem(t), (0.0, ds.t[-1]), [0.0], method="DOP853",
                    t_eval=ds.t, rtol=1e-13, atol=1e-13, max_step=1e-2)
    np.testing.assert_allclose(ds.y[1:], sol.y[0, 1:] ** 2, atol=1e-8)


def test_example1_sampling_intervals():
    ds = gen_example1(10_000, 11)
    deltas = np.diff(ds.t)
    assert deltas.min() >= 0.5 and deltas.max() <= 1.0
    assert deltas.mean() == pytest.approx(0.75, abs=0.01)


def test_example1_input_is_multisine():
    ds = gen_example1(5, 2)
    exo = ds.exosystem
    assert exo.n_osc == 10
    np.testing.assert_array_equal(exo.amplitudes, 6.0)
    k = np.round(exo.frequencies / (np.pi / 5)).astype(int)
    assert len(set(k)) == 10 and k.min() >= 1 and k.max() <= 50
    ell = np.arange(1, 11)
    np.testing.assert_allclose(exo.phases, ell * (ell - 1) * np.pi / 10)
    np.testing.assert_allclose(ds.u, exo(ds.t))


def test_case1_stationary_variance():
    w = gen_example2(100_000, 1, 5).meta["w"]
    assert np.var(w) == pytest.approx(1.5, rel=0.03)


def test_case2_second_moment():
    w = gen_example2(100_000, 2, 6).meta["w"]
    assert np.mean(w**2) == pytest.approx(0.5, rel=0.05)


def test_case3_second_moment():
    w = gen_example2(100_000, 3, 7).meta["w"]
    assert np.mean(w**2) == pytest.approx(0.8 * 1.5 + 0.2 * 0.5, rel=0.05)
    w_std = gen_example2(100_000, 3, 7, case3_param="std").meta["w"]
    assert np.mean(w_std**2) == pytest.approx(0.8 * 1.5 + 0.2 * 0.25, rel=0.05)


def test_case0_brownian_increments():
    w = gen_example2(20_000, 0, 8, sigma_matched=0.1).meta["w"]
    assert w[0] == 0.0
    assert np.var(np.diff(w)) == pytest.approx(0.01 * 0.5, rel=0.05)


def test_no_disturbance_no_noise_no_input():
    ds = gen_example2(100, 1, 0, disturbance=False, noise_std=0.0, prbs_amplitude=0.0)
    np.testing.assert_array_equal(ds.y[1:], 1.0)


def test_unknown_case_and_bad_sizes():
    with pytest.raises(ValueError):
        gen_example2(10, 4, 0)
    with pytest.raises(ValueError):
        gen_example2(0, 1, 0)
    with pytest.raises(ValueError):
        gen_example1(0, 0)
    with pytest.raises(ValueError):
        gen_example2(10, 3, 0, case3_param="sd")


def test_generators_reproducible():
    a, b = gen_example2(300, 2, 42), gen_example2(300, 2, 42)
    np.testing.assert_array_equal(a.y[1:], b.y[1:])
    assert not np.array_equal(a.y[1:], gen_example2(300, 2, 43).y[1:])
    c, d = gen_example1(50, 42), gen_example1(50, 42)
    np.testing.assert_array_equal(c.y[1:], d.y[1:])
    np.testing.assert_array_equal(c.t, d.t)


def test_prbs():
    x = prbs(2 * 32767, 3)
    assert set(np.unique(x)) == {-5.0, 5.0}
    np.testing.assert_array_equal(x[:32767], x[32767:])  # maximal period
    assert abs(np.sum(x[:32767])) == 5.0  # one more 1 than 0 per period
    assert not np.array_equal(prbs(100, 3), prbs(100, 4))


def test_euler_maruyama_constant_path():
    path = euler_maruyama_ref(_const_sde(0.0, 0.0), None, 0.01, 1.0, 0, n_paths=3, x0=[2.5])
    np.testing.assert_array_equal(path, 2.5)
    assert path.shape == (101, 3, 1)


def test_euler_maruyama_consistency():
    sde = _const_sde(-0.75, 1.5)
    v = {}
    for dt in (1e-2, 5e-3):
        end = euler_maruyama_ref(sde, None, dt, 2.0, 1, n_paths=20_000, record_every=None)[-1, :, 0]
        v[dt] = (end.mean(), end.var())
    se = 1.5 / np.sqrt(20_000) * 2
    assert abs(v[1e-2][0] - v[5e-3][0]) < 3 * se
    exact = 1.5**2 / 1.5 * (1 - np.exp(-1.5 * 2.0))
    assert v[5e-3][1] == pytest.approx(exact, rel=0.03)
    with pytest.raises(ValueError):
        euler_maruyama_ref(sde, None, 0.0, 1.0, 0)


@pytest.mark.parametrize("make", [lambda: gen_example2(30, 1, 1), lambda: gen_example1(30, 1)])
def test_csv_round_trip(make, tmp_path):
    ds = make()
    path = save_dataset(ds, tmp_path / "data.csv")
    assert path.read_text().splitlines()[0] == "k,t_k,u_k,y_k"
    back = load_dataset(path)
    np.testing.assert_array_equal(back.t, ds.t)
    np.testing.assert_array_equal(back.u, ds.u)
    np.testing.assert_array_equal(back.y[1:], ds.y[1:])
    assert np.isnan(back.y[0])
    if ds.exosystem is not None:
        np.testing.assert_array_equal(back.exosystem.frequencies, ds.exosystem.frequencies)
