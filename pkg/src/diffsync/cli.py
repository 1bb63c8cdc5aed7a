"""Command-line experiment runner.

    diffsync sample CONFIG [--seed N] [--out DIR] [--trace]
    diffsync compare-cases CONFIG [--cases 1,2,3,4,5] [--seed N] [--out DIR]
    diffsync verify CONFIG [--trials N] [--seed N]

Exit status: 0 success, 1 runtime failure, 2 invalid configuration.
The output directory is, by priority, ``--out``, ``$DIFFSYNC_OUT``, then
``outputs.dir`` from the config.
"""

import argparse
import csv
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import ConfigError, CoverageError
from .metrics import cross_view_consistency, divergence_matrix, prior_moment_check, variance_series
from .spaces import reprojection_error
from .sync import case_plan, run_case, run_plan, verify_appendix_c_conditions

OUT_ENV = "DIFFSYNC_OUT"


def write_pgm(path, field, value_range):
    """8-bit binary PGM; values mapped affinely from ``value_range`` to 0..255."""
    img = np.asarray(field, dtype=np.float64)
    if img.ndim == 1:
        img = img[None, :]
    elif img.ndim > 2:
        img = img.reshape(-1, img.shape[-1])
    lo, hi = value_range
    scaled = np.clip(np.rint((img - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
    h, w = scaled.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())


def write_f64(path, array):
    """Raw little-endian float64 dump in C order; returns its sha256."""
    data = np.ascontiguousarray(array, dtype="<f8").tobytes()
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x):
    return repr(float(x))


def _out_dir(args, cfg):
    if args.out:
        out = Path(args.out)
    elif os.environ.get(OUT_ENV):
        out = Path(os.environ[OUT_ENV])
    else:
        out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run(cfg, case, seed, trace):
    if case is not None:
        init = cfg.plan.init_policy
        return run_case(case, cfg.operators, _predictor(cfg), cfg.schedule, seed, init_policy=init, trace=trace)
    return run_plan(cfg.plan, cfg.operators, _predictor(cfg), cfg.schedule, seed, trace=trace)


def _predictor(cfg):
    from .denoiser import GMMPredictor

    return GMMPredictor(cfg.prior)


def _metric_rows(prefix, result, cfg):
    rows = [
        (prefix + "cross_view_consistency", _fmt(cross_view_consistency(result, cfg.operators)), ""),
        (prefix + "prior_moment_deviation", _fmt(prior_moment_check(result.final_instances, cfg.prior).value), ""),
    ]
    if result.trace:
        for step, var in zip(result.trace, variance_series(result)):
            rows.append((prefix + "instance_variance", _fmt(var), str(step.t)))
    return rows


def cmd_sample(args):
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    trace = cfg.trace or args.trace
    out = _out_dir(args, cfg)
    result = _run(cfg, cfg.case, seed, trace)

    digest = write_f64(out / "canonical.f64", result.final_canonical.slabs)
    write_pgm(out / "canonical.pgm", result.final_canonical.render(), cfg.value_range)
    for i, w in enumerate(result.final_instances):
        write_pgm(out / f"view_{i}.pgm", w, cfg.value_range)
    rows = _metric_rows("", result, cfg)
    for i, (op, w) in enumerate(zip(cfg.operators, result.final_instances)):
        rows.append((f"reprojection_error.view_{i}", _fmt(reprojection_error(op, w)), ""))
    _write_csv(out / "metrics.csv", ("name", "value", "step"), rows)
    print(f"seed {seed}")
    print(f"canonical.f64 sha256 {digest}")
    return 0


def _parse_cases(text):
    cases = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        cases.append(int(item) if item.isdigit() else item)
    for c in cases:
        case_plan(c)
    return cases


def cmd_compare_cases(args):
    cfg = load_config(args.config)
    cases = _parse_cases(args.cases) if args.cases else list(cfg.compare_cases)
    if not cases:
        raise ConfigError("no cases given", "--cases")
    seed = cfg.seed if args.seed is None else args.seed
    trace = cfg.trace or args.trace
    out = _out_dir(args, cfg)

    results, rows = [], []
    init = cfg.plan.init_policy
    for c in cases:
        r = run_case(c, cfg.operators, _predictor(cfg), cfg.schedule, seed, init_policy=init, trace=trace)
        results.append(r)
        sub = out / f"case_{c}"
        sub.mkdir(exist_ok=True)
        digest = write_f64(sub / "canonical.f64", r.final_canonical.slabs)
        write_pgm(sub / "canonical.pgm", r.final_canonical.render(), cfg.value_range)
        rows.extend(_metric_rows(f"case_{c}.", r, cfg))
        print(f"case {c}: canonical.f64 sha256 {digest}")

    mat = divergence_matrix(results)
    labels = [str(c) for c in cases]
    _write_csv(
        out / "divergence.csv",
        ["case"] + labels,
        [[labels[i]] + [_fmt(v) for v in mat[i]] for i in range(len(cases))],
    )
    _write_csv(out / "metrics.csv", ("name", "value", "step"), rows)
    print(f"seed {seed}")
    print(f"max divergence {_fmt(mat.max())}")
    return 0


def cmd_verify(args):
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    report = verify_appendix_c_conditions(cfg.operators, args.trials, seed)
    print(f"family          {cfg.family}")
    print(f"init residual   {report.init_residual:.3e}")
    print(f"sync residual   {report.sync_residual:.3e}")
    print(f"reprojection    {report.reprojection:.3e}")
    print(f"uncovered       {report.uncovered}")
    print(f"classification  {report.classification}")
    if cfg.family != "one_to_one":
        print("informational (family not declared one_to_one)")
        return 0
    ok = report.passes(1e-9)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="diffsync", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment config (YAML)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--trace", action="store_true", help="record per-step snapshots")

    p = sub.add_parser("sample", parents=[common], help="run the configured plan")
    p.set_defaults(func=cmd_sample)
    p = sub.add_parser("compare-cases", parents=[common], help="run several cases from one seed")
    p.add_argument("--cases", default=None, help="comma-separated case ids, e.g. 1,2,3,4,5")
    p.set_defaults(func=cmd_compare_cases)
    p = sub.add_parser("verify", parents=[common], help="check the case-equivalence preconditions")
    p.add_argument("--trials", type=int, default=8)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except CoverageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
