"""Acceptance criteria, one test per criterion.

Training-based criteria share desk-scale runs through ``acceptance_support``
(cached on disk; the first run trains everything and takes hours on one
core). A PASS/FAIL line per criterion is printed in the terminal summary.
"""
import copy
import math
import time

import numpy as np
import pytest

from acceptance_support import SIGMA1_SQ, desk_config, trained
from fblab.baselines import RepetitionCode, brute_force_ml, repetition_bler, tbcc_decode, tbcc_encode
from fblab.channel import NoiseParams, channel_noise, random_bits
from fblab.cli import main as cli_main
from fblab.config import TrainConfig
from fblab.evaluator import freeze_with, front_back_power, monte_carlo, power_audit
from fblab.gradcheck import run_all
from fblab.trainer import sample_ids, train_code

RESULTS = {}
SEEDS = range(5)


def record(n, title, ok, detail):
    RESULTS[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {title}: {detail}"
    assert ok, RESULTS[n]


def evaluate(code, sigma2_sq, target_errors=200, max_trials=1_000_000):
    return monte_carlo(code, NoiseParams(SIGMA1_SQ, sigma2_sq), seed=1000 + code.config.seed,
                       target_errors=target_errors, max_trials=max_trials)


def neural(s2, seed):
    return trained("neural", desk_config(sigma2_sq=s2, seed=seed))


def test_criterion_01_gradient_correctness():
    results, seconds = run_all(seed=1)
    worst = max(r.max_rel_err for r in results)
    bad = [r.name for r in results if not r.passed]
    ok = not bad and worst < 1e-4 and seconds < 60
    record(1, "gradient correctness", ok,
           f"{len(results)} checks, max rel err {worst:.2e}, {seconds:.1f}s, failing={bad}")


def test_criterion_02_power_lemma_audit():
    t0 = time.perf_counter()
    dev_small, dev_big = [], []
    for seed in SEEDS:
        code = copy.deepcopy(neural(0.01, seed)[0])
        for J, out in ((1000, dev_small), (100_000, dev_big)):
            freeze_with(code, J, seed=seed)
            out.append(power_audit(code, samples=100_000, seed=seed)[2])
    seconds = time.perf_counter() - t0
    ok = max(dev_big) < 0.02 and np.median(dev_big) < np.median(dev_small) and seconds < 300
    record(2, "power constraint audit", ok,
           f"deviation J=1e5 max {max(dev_big):.4f} median {np.median(dev_big):.4f}; "
           f"J=1e3 median {np.median(dev_small):.4f}; {seconds:.0f}s")


def test_criterion_03_power_weights_on_sphere():
    _, rec = neural(0.01, 0)
    first5 = rec["max_violation_per_epoch"][:5]
    ok = len(first5) == 5 and max(first5) < 1e-9 and rec["steps"] > 0
    record(3, "power-weight constraint", ok,
           f"max |sum w^2 - N| over every step of epochs 1-5: {max(first5):.2e}")


def test_criterion_04_baseline_oracles():
    t0 = time.perf_counter()
    ids = sample_ids(4, 0, 1000)
    bits = random_bits(42, ids, 6)
    n1, _ = channel_noise(42, ids, 18, NoiseParams(0.794, 0.0))
    y = tbcc_encode(bits) + n1
    agree = np.array_equal(tbcc_decode(y), brute_force_ml(y, 6))
    rep = monte_carlo(RepetitionCode(4, 12), NoiseParams(0.794, 0.0), seed=42,
                      target_errors=10 ** 9, max_trials=100_000)
    _, p = repetition_bler(4, 3, 0.794)
    z = abs(rep.bler - p) / math.sqrt(p * (1 - p) / rep.trials)
    seconds = time.perf_counter() - t0
    ok = agree and z < 3 and seconds < 300
    record(4, "baseline oracles", ok,
           f"TBCC==ML on 1000 trials: {agree}; repetition MC {rep.bler:.4f} vs analytic {p:.4f} "
           f"({z:.2f} SE); {seconds:.0f}s")


def test_criterion_05_learning_beats_repetition():
    code, rec = neural(0.01, 0)
    nn = evaluate(code, 0.01)
    rep = evaluate_repetition()
    ok = nn.bler < rep.bler and nn.bler_hi < rep.bler_lo
    record(5, "learning beats repetition", ok,
           f"neural {nn.bler:.2e} [{nn.bler_lo:.2e}, {nn.bler_hi:.2e}] vs repetition {rep.bler:.4f} "
           f"[{rep.bler_lo:.4f}, {rep.bler_hi:.4f}]; training {rec['wall_clock'] / 60:.0f} min")


def evaluate_repetition():
    return monte_carlo(RepetitionCode(4, 12), NoiseParams(SIGMA1_SQ, 0.01), seed=7,
                       target_errors=10 ** 9, max_trials=100_000)


def test_criterion_06_feedback_noise_monotonicity():
    reps = {s2: evaluate(neural(s2, 0)[0], s2) for s2 in (1.0, 0.1, 0.01)}

    def leq(a, b):
        ra, rb = reps[a], reps[b]
        return ra.bler <= rb.bler + 3 * math.hypot(ra.bler_se, rb.bler_se)

    ok = leq(0.01, 0.1) and leq(0.1, 1.0)
    record(6, "feedback-noise monotonicity", ok,
           ", ".join(f"bler({s2})={r.bler:.2e}" for s2, r in reps.items()))


def test_criterion_07_power_front_loaded():
    diffs, fronts, backs = [], [], []
    for seed in SEEDS:
        code, _ = neural(0.1, seed)
        _, per_k, _ = power_audit(code, samples=100_000, seed=seed)
        f, b = front_back_power(per_k)
        fronts.append(f)
        backs.append(b)
        diffs.append(f - b)
    ok = np.median(diffs) > 0
    record(7, "power front-loaded", ok,
           f"median first-third {np.median(fronts):.3f} vs last-third {np.median(backs):.3f} "
           f"(median diff {np.median(diffs):+.3f})")


def test_criterion_08_nonlinear_beats_linear():
    nn = [evaluate(neural(0.01, s)[0], 0.01).bler for s in SEEDS]
    lin = [evaluate(trained("linear", desk_config(sigma2_sq=0.01, seed=s))[0], 0.01).bler for s in SEEDS]
    ok = np.median(nn) <= np.median(lin)
    record(8, "non-linear <= linear", ok,
           f"median neural {np.median(nn):.2e} vs linear {np.median(lin):.2e} "
           f"(neural {[f'{b:.1e}' for b in nn]}, linear {[f'{b:.1e}' for b in lin]})")


ABLATIONS = ([{"power_layer": p} for p in ("norm+power", "norm-only", "power-only", "none")]
             + [{"direction": d} for d in ("uni", "bi")]
             + [{"merge_case": c} for c in (1, 2, 3, 4, 5)]
             + [{"direction": "uni", "merge_case": c} for c in (1, 2, 3, 4, 5)]
             + [{"head": h} for h in ("sigmoid", "softmax")]
             + [{"enc_layers": 1, "dec_layers": 1}, {"enc_layers": 3, "enc_hidden": 12}]
             + [{"enc_mode": "open-loop"}])


def test_criterion_09_ablation_axes():
    base = TrainConfig(K=4, N=12, sigma1_sq=SIGMA1_SQ, J=2000, batch=500, epochs=2,
                       enc_hidden=8, dec_hidden=8, seed=0)
    failures, none_power = [], None
    for axes in ABLATIONS:
        try:
            code, report = train_code(base.replace(**axes))
            if len(report.epoch_loss) != 2 or report.diverged or not np.isfinite(report.epoch_loss).all():
                failures.append(axes)
            if axes == {"power_layer": "none"}:
                none_power = power_audit(code, samples=20_000)[0]
        except Exception as exc:  # noqa: BLE001 - any error is a criterion failure
            failures.append((axes, repr(exc)))
    ok = not failures and none_power is not None and none_power < base.N
    record(9, "ablation machinery", ok,
           f"{len(ABLATIONS)} configurations, failures={failures}; 'none' mean power {none_power:.3f} < {base.N}")


REPRO_CFG = """K=4
N=12
J=4000
batch=500
epochs=2
enc_hidden=16
dec_hidden=16
seed=11
grid=1,0.1,0.01
schemes=neural,linear,repetition,tbcc
target_errors=50
max_trials=20000
"""


def test_criterion_10_reproducibility(tmp_path, capsys):
    cfg = tmp_path / "repro.cfg"
    cfg.write_text(REPRO_CFG)
    a, b = tmp_path / "a.fbm", tmp_path / "b.fbm"
    codes = [cli_main(["train", str(cfg), "--out", str(a)]), cli_main(["train", str(cfg), "--out", str(b)])]
    same_model = a.read_bytes() == b.read_bytes()
    s1, s2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
    codes += [cli_main(["sweep", str(cfg), "--csv", str(s1)]), cli_main(["sweep", str(cfg), "--csv", str(s2)])]
    capsys.readouterr()
    same_csv = s1.read_bytes() == s2.read_bytes()
    ok = codes == [0, 0, 0, 0] and same_model and same_csv
    record(10, "reproducibility", ok,
           f"model files identical: {same_model} ({a.stat().st_size} bytes); "
           f"sweep CSVs identical: {same_csv} ({len(s1.read_text().splitlines()) - 1} rows)")


@pytest.fixture(scope="module", autouse=True)
def _summary(request):
    yield
    request.config._acceptance_lines = [RESULTS[k] for k in sorted(RESULTS)]
