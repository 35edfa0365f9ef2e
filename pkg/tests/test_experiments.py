import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tvrate.errors import NumericalError, ParameterError
from tvrate.experiments import (
    CSV_COLUMNS,
    GENERATOR_ID,
    ExperimentConfig,
    ReplicateResult,
    cell_seed,
    estimate_rate,
    execute,
    fit_oracle_lambda,
    generate_data,
    make_truth,
    mix64,
    oracle_bound,
    read_results_csv,
    results_csv,
    run_experiment,
    standard_normals,
    write_outputs,
)
from tvrate.oracle import design_points
from tvrate.pwpoly import PiecewisePolynomial, Polynomial
from tvrate.tv import tv_continuous

M64 = (1 << 64) - 1


def py_mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def py_normals(seed, count):
    out = []
    j = 1
    while len(out) < count:
        w1 = py_mix64((seed + j * 0x9E3779B97F4A7C15) & M64)
        w2 = py_mix64((seed + (j + 1) * 0x9E3779B97F4A7C15) & M64)
        j += 2
        u1 = ((w1 >> 11) + 1) / 2**53
        u2 = (w2 >> 11) / 2**53
        r = math.sqrt(-2.0 * math.log(u1))
        out += [r * math.cos(2 * math.pi * u2), r * math.sin(2 * math.pi * u2)]
    return out[:count]


def small_config(**kw):
    base = dict(truth_name="ramp3", penalty_order=3, n_grid=(64, 128, 256), replicates=3, lambda_points=8)
    base.update(kw)
    return ExperimentConfig(**base)


def test_truths():
    step, l1 = make_truth("step3")
    ramp, l2 = make_truth("ramp3")
    assert (l1, l2) == (1, 2)
    assert step(0.75) == 3.0 and step(0.25) == 0.0
    assert ramp.domain == (0.0, 1.0)
    assert tv_continuous(ramp, 2).total == pytest.approx(3.0)
    assert ramp.one_sided(0, "left") == pytest.approx(ramp.one_sided(0, "right"), abs=1e-15)
    with pytest.raises(ParameterError):
        make_truth("sawtooth")


def test_splitmix_known_value():
    # first output of the reference SplitMix64 stream seeded with 0
    assert py_mix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF
    assert mix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF


@given(st.integers(0, M64))
def test_mix64_matches_pure_python(x):
    assert mix64(x) == py_mix64(x)


@given(st.integers(0, M64), st.integers(0, 9))
def test_normals_match_pure_python(seed, count):
    np.testing.assert_allclose(standard_normals(seed, count), py_normals(seed, count), rtol=1e-14, atol=1e-15)


def test_normals_are_prefix_stable():
    a = standard_normals(7, 11)
    b = standard_normals(7, 20)
    assert np.array_equal(a, b[:11])


def test_cell_seed_definition():
    assert cell_seed(5, 256, 3) == 5 ^ py_mix64((256 << 32) | 3)
    assert len({cell_seed(1, n, r) for n in (256, 512) for r in range(50)}) == 100
    with pytest.raises(ParameterError):
        cell_seed(1, -1, 0)


def test_generate_data_determinism_and_noise_free_limit():
    truth, _ = make_truth("step3")
    a = generate_data(truth, 100, 1.0, 42)
    assert np.array_equal(a, generate_data(truth, 100, 1.0, 42))
    assert not np.array_equal(a, generate_data(truth, 100, 1.0, 43))
    assert np.array_equal(generate_data(truth, 100, 0.0, 42), truth(design_points(100)))
    tiny = generate_data(truth, 100, 1e-12, 42)
    assert np.max(np.abs(tiny - truth(design_points(100)))) < 1e-10
    with pytest.raises(ParameterError):
        generate_data(truth, 100, -1.0, 1)


def test_noise_moments_clt():
    truth, _ = make_truth("ramp3")
    n = 10**5
    for seed in (1, 2, 3):
        z = (generate_data(truth, n, 2.0, seed) - truth(design_points(n))) / 2.0
        assert abs(z.mean()) <= 4 / math.sqrt(n)
        assert abs(z.var() - 1.0) <= 4 * math.sqrt(2 / n)


def test_fit_oracle_lambda_polynomial_truth():
    x = design_points(80)
    y = 1.0 + 2.0 * x
    lam, mse = fit_oracle_lambda(y, y, 2, [1e-4, 1.0, 100.0])
    assert mse <= 1e-20


def test_fit_oracle_lambda_single_point_and_argmin():
    truth, _ = make_truth("step3")
    y = generate_data(truth, 120, 1.0, 9)
    lam, mse = fit_oracle_lambda(y, truth, 2, [3e-4])
    assert lam == 3e-4
    grid = np.logspace(-6, -1, 7)
    lam, best = fit_oracle_lambda(y, truth, 2, grid)
    assert lam in grid
    for g in grid:
        assert best <= fit_oracle_lambda(y, truth, 2, [g])[1] + 1e-15
    with pytest.raises(ParameterError):
        fit_oracle_lambda(y, truth, 2, [])


def test_fit_oracle_lambda_all_fail(monkeypatch):
    import tvrate.experiments as ex

    real = ex.solve

    def failing(*a, **kw):
        fit = real(*a, **kw)
        fit.converged = False
        return fit

    monkeypatch.setattr(ex, "solve", failing)
    truth, _ = make_truth("step3")
    with pytest.raises(NumericalError):
        fit_oracle_lambda(generate_data(truth, 50, 1.0, 1), truth, 2, [1e-3, 1e-2])


def test_config_validation():
    with pytest.raises(ParameterError):
        small_config(n_grid=(128, 64, 256))
    with pytest.raises(ParameterError):
        small_config(n_grid=(4, 64, 128))
    with pytest.raises(ParameterError):
        small_config(replicates=0)
    with pytest.raises(ParameterError):
        small_config(penalty_order=2)
    with pytest.raises(ParameterError):
        small_config(lambda_grid="cv")
    with pytest.raises(ParameterError):
        small_config(truth_name="custom")
    with pytest.raises(ParameterError):
        small_config(base_seed=-1)


def test_schedule_grid_spans_two_decades_each_side():
    cfg = ExperimentConfig()
    m = cfg.multipliers()
    assert m.size == 30 and m[0] == pytest.approx(0.01) and m[-1] == pytest.approx(100.0)
    assert np.allclose(np.diff(np.log(m)), np.log(m[1] / m[0]))


def test_noise_free_single_replicate_measures_bias():
    cfg = small_config(n_grid=(128,), replicates=1, sigma=0.0)
    (res,) = run_experiment(cfg, threads=1)
    truth, _ = make_truth("ramp3")
    lam, mse = fit_oracle_lambda(truth(design_points(128)), truth, 3, cfg.lambda_values(128))
    assert res.mse == mse and res.chosen_lambda == lam and res.mse > 0


def test_cells_are_order_and_thread_independent():
    cfg = small_config()
    base = execute(cfg, threads=1).results
    cells = [(n, r) for n in cfg.n_grid for r in range(cfg.replicates)][::-1]
    rev = execute(cfg, threads=1, cells=cells).results
    par = execute(cfg, threads=3).results
    assert base == rev == par
    assert [(r.n, r.replicate_index) for r in base] == sorted((r.n, r.replicate_index) for r in base)


def test_thread_count_from_environment(monkeypatch):
    cfg = small_config(n_grid=(64, 128, 256), replicates=1)
    monkeypatch.setenv("TVRATE_THREADS", "2")
    a = run_experiment(cfg)
    monkeypatch.setenv("TVRATE_THREADS", "nope")
    with pytest.raises(ParameterError):
        run_experiment(cfg)
    monkeypatch.setenv("TVRATE_THREADS", "0")
    assert run_experiment(cfg) == a


def test_oracle_bound_components():
    truth, ell = make_truth("ramp3")
    b = oracle_bound(truth, 1024, 3, ell)
    b1 = oracle_bound(truth, 1024, 3, ell, C=1.0)
    # the constant enters λ_n with a negative power, so the larger default shrinks the bound
    assert 0 < b < b1


def test_results_record_oracle_bound_and_seed():
    cfg = small_config(replicates=2)
    results = run_experiment(cfg, threads=1)
    truth, ell = make_truth("ramp3")
    for r in results:
        assert r.seed == cell_seed(cfg.base_seed, r.n, r.replicate_index)
        assert r.oracle_bound == oracle_bound(truth, r.n, 3, ell)
        assert r.mse >= 0 and r.oracle_bound >= 0


def test_estimate_rate_exact_power_law():
    res = [ReplicateResult(n, 0, 0, 1.0, 5.0 * n**-0.571, 1.0) for n in (256, 512, 1024, 2048)]
    est = estimate_rate(res)
    assert est.slope == pytest.approx(-0.571, abs=1e-12)
    assert est.intercept == pytest.approx(math.log(5.0), abs=1e-10)
    assert est.slope_se <= 1e-12 and est.n_points == 4


def test_estimate_rate_matches_scipy_linregress():
    from scipy.stats import linregress

    rng = np.random.default_rng(0)
    ns = [100, 200, 400, 800, 1600]
    res = [ReplicateResult(n, r, 0, 1.0, float(n**-0.7 * rng.lognormal(0, 0.2)), 1.0) for n in ns for r in range(5)]
    est = estimate_rate(res)
    means = [np.mean([r.mse for r in res if r.n == n]) for n in ns]
    ref = linregress(np.log(ns), np.log(means))
    assert est.slope == pytest.approx(ref.slope, rel=1e-12)
    assert est.slope_se == pytest.approx(ref.stderr, rel=1e-10)


def test_estimate_rate_needs_three_sizes():
    res = [ReplicateResult(n, 0, 0, 1.0, 1.0 / n, 1.0) for n in (100, 200)]
    with pytest.raises(ParameterError):
        estimate_rate(res)


def test_csv_round_trip_and_header(tmp_path):
    cfg = small_config(replicates=2)
    run = execute(cfg, threads=1)
    path = tmp_path / "r.csv"
    write_outputs(run, path, tmp_path / "s.json")
    text = path.read_text()
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert read_results_csv(path) == run.results
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["generator"] == GENERATOR_ID
    assert summary["failures"] == 0 and summary["cells"] == 6
    assert summary["config"]["n_grid"] == [64, 128, 256]
    assert "wall_time_s" in summary and "rate" in summary


def test_csv_is_reproducible():
    cfg = small_config(replicates=2)
    a = results_csv(cfg, run_experiment(cfg, threads=1))
    b = results_csv(cfg, run_experiment(cfg, threads=2))
    assert a == b


def test_noise_scaling_of_mse():
    truth, _ = make_truth("step3")
    n, reps = 256, 12
    cfg = ExperimentConfig(truth_name="step3", penalty_order=2)
    lams = np.concatenate([cfg.lambda_values(n), 4 * cfg.lambda_values(n)])
    mean = {}
    for sigma in (0.5, 1.0):
        mse = [fit_oracle_lambda(generate_data(truth, n, sigma, 1000 + r), truth, 2, lams)[1] for r in range(reps)]
        mean[sigma] = np.mean(mse)
    assert 2.0 <= mean[1.0] / mean[0.5] <= 5.0


@pytest.mark.slow
def test_mean_mse_decreases_with_n():
    cfg = ExperimentConfig(truth_name="ramp3", penalty_order=3, n_grid=(128, 256, 512, 1024), replicates=50, lambda_points=15)
    results = run_experiment(cfg)
    means = [np.mean([r.mse for r in results if r.n == n]) for n in cfg.n_grid]
    assert all(b < a for a, b in zip(means, means[1:]))


def test_custom_truth_config():
    f = PiecewisePolynomial.from_global((0.0, 1.0), [0.3], [Polynomial([0.0]), Polynomial([-0.3, 1.0])])
    cfg = ExperimentConfig(truth_name="custom", custom_truth=f, custom_ell=2, penalty_order=3, n_grid=(64, 128, 256), replicates=1, lambda_points=5)
    assert len(run_experiment(cfg, threads=1)) == 3
