"""``fblab`` command line: train, eval, sweep, audit, baseline, gradcheck.

Every command first prints its fully resolved configuration and root seed as
``#``-prefixed lines, then its results (CSV where tabular).
"""
import argparse
import logging
import os
import sys

from fblab.config import ConfigError, TrainConfig, format_config, load_config

log = logging.getLogger("fblab")

EXIT_ERROR = 1
EXIT_DIVERGED = 3


class CliError(Exception):
    pass


def _print_header(cfg, sweep=None, extra=None, out=None):
    out = out or sys.stdout
    for line in format_config(cfg, sweep).splitlines():
        print(f"# {line}", file=out)
    for key, value in (extra or {}).items():
        print(f"# {key}={value}", file=out)
    print(f"# root_seed={cfg.seed}", file=out)
    out.flush()


def _with_seed(cfg, seed):
    return cfg if seed is None else cfg.replace(seed=seed)


def _check_writable(path):
    parent = os.path.dirname(os.path.abspath(path)) or "."
    if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise CliError(f"cannot write output {path!r}: directory {parent!r} is not writable")


def _write_text(path, text):
    if path:
        _check_writable(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _warn_ignored_sigma2(args, scheme):
    if getattr(args, "sigma2_sq", None) is not None and not scheme.uses_feedback:
        print(f"warning: --sigma2-sq is ignored for {scheme.kind}, which uses no feedback", file=sys.stderr)


# ------------------------------------------------------------------ train

def cmd_train(args):
    from fblab.store import save_code
    from fblab.trainer import fit, FeedbackCode

    cfg, _ = load_config(args.config)
    cfg = _with_seed(cfg, args.seed)
    _check_writable(args.out)
    _print_header(cfg)
    code = FeedbackCode.init(cfg)
    checkpoint = None
    if cfg.checkpoint_every and cfg.checkpoint_path:
        def checkpoint(c, epoch):
            save_code(cfg.checkpoint_path, c, epoch=epoch)
    report = fit(code, cfg, checkpoint=checkpoint)
    print(report.summary())
    if report.diverged:
        print("error: training diverged; model not written", file=sys.stderr)
        return EXIT_DIVERGED
    save_code(args.out, code, epoch=len(report.epoch_loss))
    print(f"# wrote {args.out}")
    return 0


# ------------------------------------------------------------------- eval

def _noise(cfg, args):
    from fblab.channel import NoiseParams

    s1 = cfg.sigma1_sq if args.sigma1_sq is None else args.sigma1_sq
    s2 = cfg.sigma2_sq if args.sigma2_sq is None else args.sigma2_sq
    return NoiseParams(s1, s2)


def cmd_eval(args):
    from fblab.evaluator import monte_carlo, reports_to_csv
    from fblab.store import load_code

    code, _ = load_code(args.model)
    cfg = code.config
    for flag, want in (("N", args.N), ("K", args.K)):
        have = getattr(code, flag)
        if want is not None and want != have:
            raise CliError(f"requested {flag}={want} but model {args.model!r} has {flag}={have}")
    params = _noise(cfg, args)
    seed = cfg.seed if args.seed is None else args.seed
    _print_header(cfg.replace(seed=seed), extra={
        "eval.sigma1_sq": repr(params.sigma1_sq), "eval.sigma2_sq": repr(params.sigma2_sq),
        "eval.target_errors": args.target_errors, "eval.max_trials": args.max_trials,
        "eval.workers": args.workers})
    _warn_ignored_sigma2(args, code)
    rep = monte_carlo(code, params, seed=seed, target_errors=args.target_errors,
                      max_trials=args.max_trials, workers=args.workers)
    _write_text(args.csv, reports_to_csv([rep]))
    return 0


# ------------------------------------------------------------------ sweep

def _model_path(model_dir, name, cfg):
    return os.path.join(model_dir, f"{name}_s2_{cfg.sigma2_sq!r}_seed{cfg.seed}.fbm")


def _trained(name, cfg, model_dir):
    from fblab.baselines import train_linear_feedback
    from fblab.store import load_code, save_code
    from fblab.trainer import train_code

    path = _model_path(model_dir, name, cfg) if model_dir else None
    if path and os.path.exists(path):
        code, _ = load_code(path)
        if code.config != cfg:
            raise CliError(f"{path!r} was trained with a different configuration")
        return code
    code, report = (train_code if name == "neural" else train_linear_feedback)(cfg)
    if report.diverged:
        raise CliError(f"{name} training diverged at sigma2_sq={cfg.sigma2_sq}")
    if path:
        save_code(path, code, epoch=len(report.epoch_loss))
    return code


def make_scheme(name, cfg, model_dir=None):
    from fblab.baselines import RepetitionCode, TbccCode

    if name == "repetition":
        return RepetitionCode(cfg.K, cfg.N)
    if name == "tbcc":
        return TbccCode(cfg.K)
    if name in ("neural", "linear"):
        return _trained(name, cfg, model_dir)
    raise CliError(f"unknown scheme {name!r}")


def cmd_sweep(args):
    from fblab.evaluator import reports_to_csv, sweep

    cfg, spec = load_config(args.config)
    cfg = _with_seed(cfg, args.seed)
    if args.model_dir:
        os.makedirs(args.model_dir, exist_ok=True)
    _print_header(cfg, spec, extra={"sweep.workers": args.workers})
    rows = sweep(spec.schemes, spec, cfg.sigma1_sq,
                 lambda name, s2: make_scheme(name, cfg.replace(sigma2_sq=s2), args.model_dir),
                 seed=cfg.seed, workers=args.workers)
    _write_text(args.csv, reports_to_csv(rows))
    return 0


# ------------------------------------------------------------------ audit

def cmd_audit(args):
    from fblab.evaluator import freeze_with, power_audit
    from fblab.store import load_code
    from fblab.trainer import FeedbackCode

    if args.model:
        code, _ = load_code(args.model)
        cfg = _with_seed(code.config, args.seed)
    else:
        cfg, _ = load_config(args.config)
        cfg = _with_seed(cfg, args.seed)
        code = FeedbackCode.init(cfg)
    code.config = cfg
    samples = [int(float(s)) for s in args.samples.split(",") if s.strip()]
    _print_header(cfg, extra={"audit.samples": ",".join(map(str, samples)),
                              "audit.eval_samples": args.eval_samples,
                              "audit.model": args.model or "untrained"})
    print("freeze_samples,mean_total_power,N,deviation,power_per_use")
    for J in samples:
        freeze_with(code, J, seed=cfg.seed)
        total, per_k, dev = power_audit(code, samples=args.eval_samples, seed=cfg.seed)
        print(f"{J},{total:.17e},{code.N},{dev:.17e}," + ";".join(f"{p:.17e}" for p in per_k))
    return 0


# --------------------------------------------------------------- baseline

def cmd_baseline(args):
    from fblab.evaluator import monte_carlo, reports_to_csv

    cfg, _ = load_config(args.config) if args.config else (TrainConfig(), None)
    over = {k: v for k, v in (("K", args.K), ("N", args.N), ("sigma1_sq", args.sigma1_sq),
                              ("sigma2_sq", args.sigma2_sq), ("seed", args.seed)) if v is not None}
    if args.scheme == "tbcc":
        over["N"] = 3 * over.get("K", cfg.K)
    cfg = cfg.replace(**over)
    _print_header(cfg, extra={"baseline.scheme": args.scheme, "eval.target_errors": args.target_errors,
                              "eval.max_trials": args.max_trials, "eval.workers": args.workers})
    scheme = make_scheme(args.scheme, cfg)
    _warn_ignored_sigma2(args, scheme)
    from fblab.channel import NoiseParams

    rep = monte_carlo(scheme, NoiseParams(cfg.sigma1_sq, cfg.sigma2_sq), seed=cfg.seed,
                      target_errors=args.target_errors, max_trials=args.max_trials, workers=args.workers)
    _write_text(args.csv, reports_to_csv([rep]))
    return 0


# -------------------------------------------------------------- gradcheck

def cmd_gradcheck(args):
    from fblab.gradcheck import TOLERANCE, run_all

    print(f"# seed={args.seed}")
    print(f"# tolerance={TOLERANCE}")
    print(f"# root_seed={args.seed}")
    results, seconds = run_all(args.seed)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    worst = max(r.max_rel_err for r in results)
    print(f"{'PASS' if ok else 'FAIL'} overall max_rel_err={worst:.3e} time={seconds:.1f}s")
    return 0 if ok else EXIT_ERROR


# ------------------------------------------------------------------ parser

def _eval_flags(p):
    p.add_argument("--sigma1-sq", type=float, dest="sigma1_sq", help="forward noise variance")
    p.add_argument("--sigma2-sq", type=float, dest="sigma2_sq", help="feedback noise variance")
    p.add_argument("--target-errors", type=int, default=100)
    p.add_argument("--max-trials", type=int, default=1_000_000)
    p.add_argument("--workers", type=int, default=1, help="parallel evaluation processes")
    p.add_argument("--csv", help="write the CSV here instead of standard output")
    p.add_argument("--seed", type=int, help="root seed (defaults to the config/model seed)")


def build_parser():
    ap = argparse.ArgumentParser(prog="fblab", description="Feedback-channel coding laboratory")
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a neural feedback code and write a model file")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Monte Carlo BLER/BER of a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--K", type=int)
    p.add_argument("--N", type=int)
    _eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="BLER table over the configured feedback-noise grid")
    p.add_argument("config")
    p.add_argument("--model-dir", help="reuse/save trained models here")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--csv")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("audit", help="transmit-power audit for several freeze sample sizes")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--config", help="audit an untrained model built from this config")
    p.add_argument("--samples", default="1000,100000", help="comma-separated freeze sample sizes")
    p.add_argument("--eval-samples", type=int, default=100_000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("baseline", help="Monte Carlo BLER of a reference scheme")
    p.add_argument("scheme", choices=("repetition", "tbcc", "linear"))
    p.add_argument("--config")
    p.add_argument("--K", type=int)
    p.add_argument("--N", type=int)
    _eval_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, CliError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
