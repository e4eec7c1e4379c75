import math

import numpy as np
import pytest

from fblab.baselines import IdentityScheme, RandomGuessScheme, RepetitionCode, TbccCode, repetition_bler
from fblab.channel import NoiseParams
from fblab.config import SweepSpec
from fblab.decoder import DecoderModel
from fblab.encoder import MissingNormStats
from fblab.evaluator import (EvalReport, binomial_interval, front_back_power, monte_carlo, power_audit,
                             reports_to_csv, sweep, weight_report)
from fblab.trainer import FeedbackCode, train_code

P = NoiseParams(10 ** -0.1, 0.01)


def test_identity_has_zero_errors():
    r = monte_carlo(IdentityScheme(4, 12), P, max_trials=5000)
    assert r.bler == 0 and r.trials == 5000 and r.bler_lo == 0.0 and r.bler_hi > 0


def test_random_guess_is_bernoulli():
    r = monte_carlo(RandomGuessScheme(4, 12), P, max_trials=100_000, target_errors=10 ** 9)
    p = 1 - 2 ** -4
    assert abs(r.bler - p) < 3 * math.sqrt(p * (1 - p) / r.trials)
    assert abs(r.ber - 0.5) < 0.01


def test_repetition_matches_q_function():
    r = monte_carlo(RepetitionCode(4, 12), P, max_trials=50_000, target_errors=10 ** 9)
    _, p = repetition_bler(4, 3, P.sigma1_sq)
    assert abs(r.bler - p) < 3 * math.sqrt(p * (1 - p) / r.trials)
    assert r.mean_power == pytest.approx(12.0)


def test_stops_at_exact_error_count_and_is_chunk_independent():
    a = monte_carlo(TbccCode(6), P, target_errors=50, chunk=1000)
    b = monte_carlo(TbccCode(6), P, target_errors=50, chunk=137)
    assert a.block_errors == 50 and a == b


def test_parallel_equals_serial():
    a = monte_carlo(RepetitionCode(4, 12), P, target_errors=300, chunk=500, workers=1)
    b = monte_carlo(RepetitionCode(4, 12), P, target_errors=300, chunk=500, workers=3)
    assert a == b


def test_ber_bler_bounds():
    r = monte_carlo(RepetitionCode(4, 12), P, target_errors=200)
    assert r.ber <= r.bler <= r.K * r.ber


def test_binomial_interval_modes():
    lo, hi = binomial_interval(0, 100)
    assert lo == 0 and hi == pytest.approx(1 - 0.025 ** (1 / 100), rel=1e-9)  # exact for zero errors
    lo, hi = binomial_interval(50, 100)
    assert (lo + hi) / 2 == pytest.approx(0.5) and hi - 0.5 == pytest.approx(1.96 * 0.05, rel=1e-3)


def test_csv_format():
    r = EvalReport.from_counts("x", 2, 4, 1.0, 0.1, 10, 3, 4, np.ones(4) * 10)
    text = reports_to_csv([r])
    header, row = text.strip().split("\n")
    assert header.startswith("scheme,K,N") and "\r" not in text
    assert "2.99999999999999989e-01" in row  # bler in full precision


def test_sweep_replicates_non_feedback_rows():
    spec = SweepSpec(grid=[1, 0.1, 0.01], target_errors=50, schemes=["repetition", "tbcc"])
    rows = sweep(spec.schemes, spec, P.sigma1_sq,
                 lambda n, s2: RepetitionCode(4, 12) if n == "repetition" else TbccCode(4), seed=0)
    assert len(rows) == 6
    tb = [r for r in rows if r.scheme == "tbcc"]
    assert len({(r.trials, r.block_errors) for r in tb}) == 1
    assert [r.sigma2_sq for r in tb] == [1.0, 0.1, 0.01]


def test_sweep_db_grid():
    assert SweepSpec(grid=[-20, 0], grid_unit="db").variances() == pytest.approx([0.01, 1.0])


def test_weight_report_untrained(tiny_config):
    code = FeedbackCode.init(tiny_config)
    rep = weight_report(code)
    assert rep["power_w_sq"] == [1.0] * 6 and rep["attn_f"] == [1.0] * 6 and len(rep["attn_b"]) == 6


def test_power_audit(tiny_config):
    code = FeedbackCode.init(tiny_config)
    with pytest.raises(MissingNormStats):
        power_audit(code, samples=100)
    code, _ = train_code(tiny_config)
    total, per_k, dev = power_audit(code, samples=5000)
    assert per_k.shape == (6,) and dev < 0.05 and total == pytest.approx(per_k.sum())


def test_front_back_power():
    assert front_back_power([3, 3, 2, 2, 1, 1]) == (3.0, 1.0)
