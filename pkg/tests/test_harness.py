import json

import numpy as np
import pytest
from oracles import AliasStreams

from wienerid.estimator import EstimatorConfig
from wienerid.harness import (
    ConfigError,
    ExperimentConfig,
    RunReport,
    identify,
    offline_cost,
    online_gradient,
    read_reports,
    run_experiment,
    summarize,
    write_reports,
)
from wienerid.model import make_example1_model, make_example2_model
from wienerid.truth import gen_example1, gen_example2


def small_config(**kw):
    doc = {"schema_version": 1, "example": 2, "case": 1, "N": 150, "replications": 2, "base_seed": 3,
           "initial_regressors": "data", "estimator": {"gain_exponent": 0.85, "r0_scale": 10.0, "M": 10}}
    doc.update(kw)
    return ExperimentConfig.from_dict(doc)


# --- configuration ------------------------------------------------------------------


@pytest.mark.parametrize("doc", [
    {"schema_version": 1, "colour": "red"},
    {"example": 2},
    {"schema_version": 2},
    {"schema_version": 1, "example": 3},
    {"schema_version": 1, "case": 5},
    {"schema_version": 1, "estimator": {"gain": 1.0}},
    {"schema_version": 1, "estimator": {"gain_exponent": 2.0}},
    {"schema_version": 1, "init_policy": "fixed"},
    {"schema_version": 1, "initial_regressors": "ones"},
    {"schema_version": 1, "disturbance_paths": "frozen"},
    {"schema_version": 1, "trailing_fraction": 0.0},
    {"schema_version": 1, "example": 1, "baseline": True},
    {"schema_version": 1, "N": 0},
])
def test_config_errors(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_config_load(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"schema_version": 1, "example": 1, "N": 10}))
    cfg = ExperimentConfig.load(path)
    assert cfg.example == 1 and cfg.N == 10
    round_trip = ExperimentConfig.from_dict(cfg.to_dict())
    assert round_trip == cfg
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_fixed_theta0_must_be_admissible():
    cfg = small_config(init_policy="fixed", theta0=[-1.0, 0.27, 1.0, 1.0, 1.7])
    with pytest.raises(ConfigError):
        run_experiment(cfg)


# --- runs ----------------------------------------------------------------------------


def test_replay_is_bit_identical():
    a = run_experiment(small_config())
    b = run_experiment(small_config())
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.theta, rb.theta)
        np.testing.assert_array_equal(ra.eps, rb.eps)
    assert not np.array_equal(a[0].theta, a[1].theta)
    c = run_experiment(small_config(), replications=[1])
    np.testing.assert_array_equal(c[0].theta, a[1].theta)


def test_trajectories_stay_in_theta():
    cfg = small_config(N=300)
    model = make_example2_model()
    for rep in run_experiment(cfg):
        assert rep.status == "ok"
        assert all(th in model.constraint for th in rep.theta)
        assert rep.k[0] == 3  # two warm-up samples fill the regressors


def test_example1_runs_keep_a_negative():
    cfg = ExperimentConfig.from_dict({"schema_version": 1, "example": 1, "N": 200, "replications": 2,
                                      "init_policy": "fixed", "theta0": [-0.1, 0.1, 0.1],
                                      "estimator": {"gain_exponent": 0.9, "r0_scale": 5.0, "M": 20}})
    for rep in run_experiment(cfg):
        assert np.all(rep.theta[:, 0] < 0)


def test_baseline_run_has_no_sigma():
    reps = run_experiment(small_config(baseline=True, replications=1))
    assert reps[0].names == ("a", "b", "c", "alpha")
    assert reps[0].theta.shape[1] == 4


def test_divergence_is_reported_not_raised():
    ds = gen_example2(50, 1, 0)
    est = EstimatorConfig(gain_exponent=0.85, r0_scale=1e-6, M=5, theta_bound=1.5)
    rep = identify(ds, make_example2_model(), est, [1.2, 0.27, 1.0, 1.0, 1.7], seed=0)
    assert rep.status == "diverged"
    assert "step" in rep.message
    assert len(rep.theta) < 50


def test_divergence_reset_policy_continues():
    ds = gen_example2(50, 1, 0)
    est = EstimatorConfig(gain_exponent=0.85, r0_scale=1e-6, M=5, theta_bound=1.5, divergence="reset")
    rep = identify(ds, make_example2_model(), est, [1.2, 0.27, 1.0, 1.0, 1.7], seed=0)
    assert rep.status == "ok"
    assert len(rep.theta) == 50


# --- summaries and files -----------------------------------------------------------------


def _report(theta, replication=0):
    theta = np.asarray(theta, dtype=float)
    n = len(theta)
    return RunReport(replication=replication, seed=replication, names=("a", "b"), k=np.arange(1, n + 1),
                     t=np.arange(1, n + 1) * 0.5, theta=theta, eps=np.zeros(n), proj_hit=np.zeros(n, bool),
                     theta0=theta[0] if n else np.zeros(2))


def test_summary_single_run():
    rep = _report(np.tile([[-1.0, -2.0]], (20, 1)))
    s = summarize([rep])
    assert s["statistics"]["a"]["final"]["median"] == -1.0
    assert s["statistics"]["b"]["final"]["median"] == -2.0
    assert s["statistics"]["b"]["final_abs"]["median"] == 2.0
    assert s["runs"][0]["converged"]
    assert s["diverged"] == 0


def test_summary_sign_ambiguity():
    reps = [_report(np.tile([[-1.0, sign * 1.0]], (10, 1)), r) for r, sign in enumerate([1, -1, -1, 1, -1])]
    s = summarize(reps)
    assert s["statistics"]["b"]["final"]["median"] == -1.0
    assert s["statistics"]["b"]["final_abs"]["median"] == 1.0


def test_summary_errors():
    with pytest.raises(ValueError):
        summarize([])
    with pytest.raises(ValueError):
        summarize([_report(np.ones((5, 2)))], trailing_fraction=0.0)
    with pytest.raises(ValueError):
        _report(np.zeros((0, 2))).trailing(0.1)


def test_convergence_flag():
    rng = np.random.default_rng(0)
    steady = _report(1.0 + 0.001 * rng.standard_normal((100, 2)))
    assert steady.diagnostics()["converged"]
    wandering = _report(np.column_stack((np.linspace(0, 5, 100) ** 4, np.ones(100))))
    assert not wandering.diagnostics()["converged"]
    near_zero = _report(np.column_stack((0.05 * (-1.0) ** np.arange(100), np.ones(100))))
    assert not near_zero.diagnostics()["converged"]  # absolute threshold 0.02 near zero


def test_write_and_read_reports(tmp_path):
    cfg = small_config()
    reps = run_experiment(cfg)
    summary = write_reports(reps, tmp_path, cfg)
    assert summary["replications"] == 2
    lines = (tmp_path / "trajectory_000.csv").read_text().splitlines()
    assert lines[0] == "k,t,eps,proj_hit,theta_1,theta_2,theta_3,theta_4,theta_5"
    fields = lines[1].split(",")
    assert len(fields) == 9
    for value in fields[4:]:
        digits = value.lstrip("-").replace(".", "").split("e")[0].lstrip("0")
        assert len(digits) >= 12 or float(value) == float(f"{float(value):.12g}")
    back, meta = read_reports(tmp_path)
    for a, b in zip(reps, back):
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.proj_hit, b.proj_hit)
    assert meta["config"]["N"] == 150
    stored = json.loads((tmp_path / "summary.json").read_text())
    assert stored["statistics"]["a"]["true"] == 1.2
    assert "true" not in stored["statistics"]["sigma"]


# --- offline cost oracle -------------------------------------------------------------------


def test_offline_cost_zero_for_noise_free_matched_data():
    ds = gen_example2(200, 1, 0, disturbance=False, noise_std=0.0)
    assert offline_cost([1.2, 0.27, 1.0, 1.7], ds, make_example2_model(False), M_eval=3) < 1e-20
    ds1 = gen_example1(100, 0, theta=[-1.0, 1.0, 0.0], noise_std=0.0)
    assert offline_cost([-1.0, 1.0, 0.0], ds1, make_example1_model(), M_eval=3) < 1e-20


def test_offline_cost_nonnegative_and_checked():
    model = make_example2_model()
    ds = gen_example2(100, 1, 1)
    rng = np.random.default_rng(0)
    for _ in range(5):
        th = np.array([1.2, 0.27, 1.0, 1.0, 1.7]) * rng.uniform(0.7, 1.3, 5)
        assert offline_cost(th, ds, model, M_eval=20) >= 0.0
    with pytest.raises(ValueError):
        offline_cost([1.2, 0.27, 1.0, 1.0, 0.5], ds, model)
    with pytest.raises(ValueError):
        offline_cost([1.2, 0.27, 1.0, 1.0, 1.7], ds, model, M_eval=0)


def test_offline_cost_local_minimum_in_a():
    # sigma small: the Brownian model's path variance grows with k (see notes)
    model = make_example2_model()
    ds = gen_example2(2000, 1, 17)
    costs = [offline_cost([1.2 * s, 0.27, 1.0, 0.05, 1.7], ds, model, M_eval=200, seed=1)
             for s in (0.8, 0.9, 1.0, 1.1, 1.2)]
    assert np.argmin(costs) == 2


def test_end_to_end_gradient_check():
    model = make_example2_model()
    ds = gen_example2(2000, 0, 21)
    theta = np.array([1.5, 0.2, 0.8, 0.3, 1.3])
    streams = AliasStreams(2, model.n_w)  # common random numbers for both estimates
    online = online_gradient(theta, ds, model, M=500, streams=streams)
    h = 1e-4
    fd = np.empty(5)
    for j in range(5):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        fd[j] = (offline_cost(tp, ds, model, M_eval=500, streams=streams)
                 - offline_cost(tm, ds, model, M_eval=500, streams=streams)) / (2 * h)
    np.testing.assert_array_equal(np.sign(online), np.sign(fd))
    np.testing.assert_allclose(online, fd, rtol=0.2)
