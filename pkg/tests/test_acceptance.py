"""
Долгие приёмочные эксперименты: pytest -m slow
"""
import math

import numpy as np
import pytest
from scipy import stats

from app.models.models import GroupPartition, RowTag
from app.schemas.schemas import FitConfig, SimConfig, SweepAxis, SweepSpec
from app.services import mapping_recovery, spherical_regression, vmf
from app.services.pipeline import pipeline
from app.services.sim_bench import sim_bench
from tests.conftest import random_orthogonal, random_unit_rows
from tests.test_vmf import projection_cdf

pytestmark = pytest.mark.slow


def test_procrustes_exact_on_noiseless_instances(rng):
    for _ in range(100):
        x = random_unit_rows(200, 20, rng)
        w = random_orthogonal(20, rng)
        assert np.linalg.norm(spherical_regression.procrustes_fit(x, x @ w) - w) < 1e-8


@pytest.mark.parametrize("p", [4, 8, 50, 300])
@pytest.mark.parametrize("kappa", [1.0, 10.0, 150.0, 3000.0])
def test_vmf_moment_identity(p, kappa):
    moments = vmf.gamma_kp(kappa, p)
    mu = np.zeros(p)
    mu[0] = 1.0
    z = vmf.sample_rows(np.broadcast_to(mu, (100000, p)), kappa, vmf.make_rng(p * 10000 + int(kappa)))
    spread = np.sum((z - moments.gamma * mu) ** 2, axis=1)
    se = spread.std(ddof=1) / math.sqrt(spread.size)
    # 16 ячеек сетки: допуск 4 стандартные ошибки
    assert abs(spread.mean() - moments.eta) < 4 * se


@pytest.mark.parametrize("p", [3, 10])
@pytest.mark.parametrize("kappa", [2.0, 50.0])
def test_sampler_ks_distance(p, kappa):
    t = vmf.sample_projection(kappa, p, 100000, vmf.make_rng(17))
    assert stats.kstest(t, projection_cdf(kappa, p)).statistic < 0.01


@pytest.mark.parametrize("p,kappa,delta", [(4, 10.0, 0.3), (10, 50.0, 0.2), (10, 50.0, 0.5), (50, 150.0, 0.3), (300, 3000.0, 0.1)])
def test_tail_bounds_hold(p, kappa, delta):
    t = vmf.sample_projection(kappa, p, 1_000_000, vmf.make_rng(23))
    assert np.mean(t - 1.0 <= -delta) <= vmf.tail_bound_deviation(kappa, p, delta)


@pytest.mark.parametrize("p,kappa", [(10, 50.0), (50, 150.0)])
def test_group_sum_bound_holds(p, kappa):
    report = vmf.group_sum_tail_check([2, 3, 4, 5] * 5, p=p, kappa=kappa, seed=31, trials=20000)
    assert report.holds


def test_model_selection_at_low_noise():
    correct, total, detected, planted = 0, 0, 0, 0
    for seed in range(20):
        config = SimConfig(n=2000, p=100, kappa=3000.0, n_mis=45, min_beta=0.2, seed=seed)
        truth = sim_bench.generate(config)
        report = pipeline.fit(truth.x, truth.y, truth.partition, FitConfig(seed=seed))
        one_to_one = np.flatnonzero(~truth.pi_true.tag_mask(RowTag.WEIGHTED))
        correct += int(np.sum(
            report.pi_hat.indicator_mask[one_to_one]
            & (report.pi_hat.targets[one_to_one] == truth.pi_true.targets[one_to_one])
        ))
        total += one_to_one.size
        c_rows = np.flatnonzero(truth.pi_true.tag_mask(RowTag.WEIGHTED))
        detected += int(np.sum(report.pi_hat.tag_mask(RowTag.WEIGHTED)[c_rows]))
        planted += c_rows.size
    assert correct / total >= 0.99
    assert detected / planted >= 0.95


def test_refinement_improves_and_beats_ols():
    ours_w1, ours_w2, mt_w1, mt_w2 = [], [], [], []
    for seed in range(20):
        truth = sim_bench.generate(SimConfig(n=4000, p=50, kappa=150.0, alpha=0.8, seed=seed))
        report = pipeline.fit(truth.x, truth.y, truth.partition, FitConfig(seed=seed))
        ours_w1.append(spherical_regression.w_mse(report.w1, truth.w_true))
        ours_w2.append(spherical_regression.w_mse(report.w2, truth.w_true))
        mt = sim_bench.mt_baseline_fit(truth.x, truth.y)
        mt_w1.append(spherical_regression.w_mse(mt.w_ols, truth.w_true))
        mt_w2.append(spherical_regression.w_mse(mt.w_ols_refined, truth.w_true))
    assert np.median(ours_w2) < np.median(ours_w1)
    assert np.median(ours_w1) < np.median(mt_w1)
    assert np.median(ours_w2) < np.median(mt_w2)


def test_first_stage_error_grows_with_mismatch():
    spec = SweepSpec(
        base=SimConfig(n=2000, p=100, seed=0),
        vary=SweepAxis(name="alpha", values=[0.35, 0.5, 0.7, 0.88]),
        replicates=5,
    )
    table = sim_bench.run_sweep(spec)
    ours = table.summary[table.summary["method"] == "spheremap"].sort_values("value")
    assert stats.spearmanr(ours["value"], ours["w1_mse_median"])[0] == pytest.approx(1.0)


def test_match_rate_beats_mt():
    wins = 0
    for seed in range(10):
        truth = sim_bench.generate(SimConfig(n=2000, p=100, kappa=150.0, alpha=0.8, seed=seed))
        report = pipeline.fit(truth.x, truth.y, truth.partition, FitConfig(seed=seed))
        ours = pipeline.evaluate_against_truth(report, truth.w_true, truth.pi_true)
        mt = sim_bench.mt_baseline_fit(truth.x, truth.y)
        theirs = pipeline.evaluate_estimates(mt.w_ols_refined, mt.pi_perm, truth.w_true, truth.pi_true, method="mt")
        assert theirs.detection_rate == 0.0
        wins += int(ours.match_rate > theirs.match_rate)
    assert wins >= 9


def refinement_errors(alpha: float):
    corrected, matched = [], []
    for seed in range(10):
        truth = sim_bench.generate(SimConfig(n=2000, p=100, alpha=alpha, seed=seed))
        for refinement, sink in (("corrected-one-to-one", corrected), ("matched-only", matched)):
            report = pipeline.fit(truth.x, truth.y, truth.partition, FitConfig(seed=seed, refinement=refinement))
            sink.append(spherical_regression.w_mse(report.w2, truth.w_true))
    return np.median(corrected), np.median(matched)


def test_corrected_refinement_at_high_mismatch():
    corrected_high, matched_high = refinement_errors(0.9)
    corrected_low, matched_low = refinement_errors(0.6)
    assert corrected_high <= matched_high
    # выигрыш от исправленных пар растёт вместе с долей рассогласования
    assert matched_high - corrected_high > matched_low - corrected_low


def test_first_stage_error_shrinks_with_n():
    spec = SweepSpec(
        base=SimConfig(n=1000, p=50, alpha=0.5, seed=0),
        vary=SweepAxis(name="n", values=[1000, 4000]),
        replicates=5,
        fit=FitConfig(threshold={"lambda": 0.2}),
    )
    table = sim_bench.run_sweep(spec)
    ours = table.summary[table.summary["method"] == "spheremap"].set_index("value")
    assert (table.records["error"] == "").all()
    assert ours.loc[4000, "w1_mse_median"] < ours.loc[1000, "w1_mse_median"]


def test_ols_block_oracle(rng):
    for _ in range(20):
        n_k = int(rng.integers(1, 11))
        x_k = random_unit_rows(n_k, 20, rng)
        y_k = random_unit_rows(n_k, 20, rng)
        w = random_orthogonal(20, rng)
        z_k = x_k @ w
        # vec(Π) из уравнений Y = Π Z, собранных в одну систему
        design = np.kron(np.eye(n_k), z_k.T)
        oracle = (np.linalg.pinv(design) @ y_k.ravel()).reshape(n_k, n_k)
        np.testing.assert_allclose(mapping_recovery.ols_block(y_k, x_k, w), oracle, atol=1e-8)


def test_stochastic_entry_points_are_reproducible():
    config = SimConfig(n=1000, p=40, seed=9)
    first, second = sim_bench.generate(config), sim_bench.generate(config)
    assert np.array_equal(first.y, second.y)
    fit = FitConfig(seed=9)
    a = pipeline.fit(first.x, first.y, first.partition, fit)
    b = pipeline.fit(second.x, second.y, second.partition, fit)
    assert np.array_equal(a.w2, b.w2)
    assert a.pi_hat.structure_equal(b.pi_hat)
    assert a.cv_table.equals(b.cv_table)
    partition = GroupPartition.from_sizes([5] * 10)
    assert vmf.group_sum_tail_check(partition.sizes, 10, 50.0, seed=1, trials=50) == \
        vmf.group_sum_tail_check(partition.sizes, 10, 50.0, seed=1, trials=50)
