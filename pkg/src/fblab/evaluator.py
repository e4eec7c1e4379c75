"""Monte Carlo BLER/BER estimation, sweeps over feedback noise, power audits and weight reports.

Trial ``i`` always draws its message and noise from stream ``(EVAL, i)``, so
results do not depend on chunking or on the number of worker processes.
"""
import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from fblab.channel import PURPOSE_AUDIT, PURPOSE_EVAL, PURPOSE_FREEZE, NoiseParams, channel_noise, random_bits
from fblab.encoder import MissingNormStats
from fblab.trainer import sample_ids


def binomial_interval(errors, trials, level=0.95):
    """(lo, hi) interval for a rate; normal approximation, Clopper-Pearson below 10 errors."""
    if trials <= 0:
        return 0.0, 1.0
    p = errors / trials
    if errors < 10:
        a = 1.0 - level
        lo = 0.0 if errors == 0 else float(stats.beta.ppf(a / 2, errors, trials - errors + 1))
        hi = 1.0 if errors == trials else float(stats.beta.ppf(1 - a / 2, errors + 1, trials - errors))
        return lo, hi
    z = float(stats.norm.ppf(0.5 + level / 2))
    h = z * math.sqrt(p * (1.0 - p) / trials)
    return max(0.0, p - h), min(1.0, p + h)


@dataclass
class EvalReport:
    scheme: str
    K: int
    N: int
    sigma1_sq: float
    sigma2_sq: float
    trials: int
    block_errors: int
    bit_errors: int
    bler: float
    ber: float
    bler_lo: float
    bler_hi: float
    bler_halfwidth: float
    ber_lo: float
    ber_hi: float
    ber_halfwidth: float
    mean_power: float
    power_per_use: list = field(default_factory=list)

    @property
    def bler_se(self):
        return math.sqrt(max(self.bler * (1.0 - self.bler), 0.0) / max(self.trials, 1))

    @classmethod
    def from_counts(cls, scheme, K, N, sigma1_sq, sigma2_sq, trials, block_errors, bit_errors, power_sum):
        bler = block_errors / trials
        ber = bit_errors / (trials * K)
        blo, bhi = binomial_interval(block_errors, trials)
        rlo, rhi = binomial_interval(bit_errors, trials * K)
        per_k = (np.asarray(power_sum, dtype=np.float64) / trials).tolist()
        return cls(scheme, K, N, float(sigma1_sq), float(sigma2_sq), trials, block_errors, bit_errors,
                   bler, ber, blo, bhi, (bhi - blo) / 2, rlo, rhi, (rhi - rlo) / 2,
                   float(np.sum(per_k)), per_k)


CSV_FIELDS = [f for f in EvalReport.__dataclass_fields__]


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17e}"
    if isinstance(v, list):
        return ";".join(f"{x:.17e}" for x in v)
    return str(v)


def reports_to_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in reports:
        d = asdict(r)
        w.writerow([_fmt(d[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def _chunk(scheme, seed, params, start, count, purpose=PURPOSE_EVAL):
    """Per-trial block-error flags, bit-error counts and transmit power for one range of trials."""
    ids = sample_ids(purpose, start, count)
    bits = random_bits(seed, ids, scheme.K)
    n1, n2 = channel_noise(seed, ids, scheme.N, params)
    bits_hat, x = scheme.transmit(bits, n1, n2)
    wrong = bits_hat != bits
    return wrong.any(axis=1), wrong.sum(axis=1), x * x


def _chunk_job(args):
    return _chunk(*args)


def monte_carlo(scheme, params, seed=0, target_errors=100, max_trials=1_000_000, chunk=10_000, workers=1):
    """Simulate until ``target_errors`` block errors or ``max_trials`` trials.

    The run stops at the exact trial on which the error target is reached,
    so the counts are the same for any chunk size and worker count.
    """
    if scheme.K < 1 or max_trials < 1:
        raise ValueError("need K >= 1 and max_trials >= 1")
    trials = block = bit = 0
    power = np.zeros(scheme.N)
    starts = list(range(0, max_trials, chunk))
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        i = 0
        while i < len(starts) and block < target_errors:
            wave = starts[i:i + max(1, workers)]
            jobs = [(scheme, seed, params, s, min(chunk, max_trials - s)) for s in wave]
            results = list(pool.map(_chunk_job, jobs)) if pool else [_chunk_job(j) for j in jobs]
            for blk, bits_wrong, pw in results:
                need = target_errors - block
                cum = np.cumsum(blk)
                cut = len(blk)
                if cum.size and cum[-1] >= need:
                    cut = int(np.searchsorted(cum, need)) + 1
                trials += cut
                block += int(blk[:cut].sum())
                bit += int(bits_wrong[:cut].sum())
                power += pw[:cut].sum(axis=0)
                if block >= target_errors:
                    break
            i += len(wave)
    finally:
        if pool:
            pool.shutdown()
    return EvalReport.from_counts(scheme.kind, scheme.K, scheme.N, params.sigma1_sq, params.sigma2_sq,
                                  trials, block, bit, power)


def power_audit(code, samples=100_000, seed=0, chunk=20_000):
    """Mean total transmit power over fresh episodes, per-use means and the relative deviation from N."""
    enc = getattr(code, "encoder", None) or getattr(code, "model", None)
    if enc.power_layer in ("norm+power", "norm-only") and not enc.frozen:
        raise MissingNormStats("power audit needs frozen normalisation statistics")
    params = NoiseParams(code.config.sigma1_sq, code.config.sigma2_sq)
    per_k = np.zeros(code.N)
    for start in range(0, samples, chunk):
        n = min(chunk, samples - start)
        _, _, pw = _chunk(code, seed, params, start, n, purpose=PURPOSE_AUDIT)
        per_k += pw.sum(axis=0)
    per_k /= samples
    total = float(per_k.sum())
    return total, per_k, abs(total - code.N) / code.N


def freeze_with(code, samples, seed=None):
    """Re-freeze normalisation statistics from ``samples`` tuples of the FREEZE streams."""
    cfg = code.config
    seed = cfg.seed if seed is None else seed
    ids = sample_ids(PURPOSE_FREEZE, 0, samples)
    params = NoiseParams(cfg.sigma1_sq, cfg.sigma2_sq)
    bits = random_bits(seed, ids, cfg.K)
    n1, n2 = channel_noise(seed, ids, cfg.N, params)
    code.freeze(bits, n1, n2)
    return code


def weight_report(code):
    """Power weights squared and attention weights, in channel-use order."""
    out = {}
    pw = getattr(code, "encoder", None)
    w = (pw.power_w if pw is not None else code.model.power_w).data
    out["power_w_sq"] = (w * w).tolist()
    dec = getattr(code, "decoder", None)
    if dec is not None:
        f, b = dec.attention_weights()
        out["attn_f"] = np.asarray(getattr(f, "data", f), dtype=np.float64).tolist()
        if dec.direction == "bi":
            out["attn_b"] = np.asarray(getattr(b, "data", b), dtype=np.float64).tolist()
    return out


def front_back_power(per_k):
    """Mean per-use power over the first and the last third of the block."""
    per_k = np.asarray(per_k, dtype=np.float64)
    third = len(per_k) // 3
    return float(per_k[:third].mean()), float(per_k[-third:].mean())


def sweep(schemes, spec, sigma1_sq, model_for, seed=0, workers=1):
    """One report per (scheme, sigma2^2) cell.

    ``model_for(name, sigma2_sq)`` returns the codec for a cell. Schemes
    without feedback are simulated once and the report is copied across the
    grid, since their error rate does not depend on the feedback noise.
    """
    rows = []
    for name in schemes:
        cached = None
        for s2 in spec.variances():
            scheme = model_for(name, s2)
            if not scheme.uses_feedback and cached is not None:
                rows.append(EvalReport(**{**asdict(cached), "sigma2_sq": float(s2)}))
                continue
            rep = monte_carlo(scheme, NoiseParams(sigma1_sq, s2), seed=seed,
                              target_errors=spec.target_errors, max_trials=spec.max_trials, workers=workers)
            if not scheme.uses_feedback:
                cached = rep
            rows.append(rep)
    return rows
