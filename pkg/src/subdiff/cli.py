"""Command-line entry point: ``subdiff <command> [options]``."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import InvalidInputError, SubdiffError
from .harness import ExperimentConfig, NoiseModel, PRESETS, add_noise, preset, read_trace_csv, run_experiment, write_csv

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_DIVERGED = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser, out_dir=False):
    p.add_argument("--config", help="experiment JSON file")
    if out_dir:
        p.add_argument("--out-dir", "--out", dest="out", help="output directory")
    else:
        p.add_argument("--out", "--out-dir", dest="out", help="output CSV file (stdout when omitted)")
    p.add_argument("--seed", type=int, help="override the noise seed")
    p.add_argument("--noise", type=float, help="override the relative noise level")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="subdiff", description="Time-fractional subdiffusion: forward and inverse tools")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("forward", help="FEM/CQ flux trace on the measurement window")
    _common(p)
    p.add_argument("--full", action="store_true", help="report every time step, not only the window")

    p = sub.add_parser("oracle-flux", help="eigenfunction-series flux on the measurement window")
    _common(p)
    p.add_argument("--K", type=int, default=200)

    p = sub.add_parser("spectrum", help="eigenvalues and phi_k'(0)")
    _common(p)
    p.add_argument("--K", type=int, default=20)

    p = sub.add_parser("probe", help="Laplace cut jump and order estimate")
    _common(p)
    p.add_argument("--K", type=int, default=200)
    p.add_argument("--r-min", type=float, default=1e-4, help="smallest R as a fraction of mu1")
    p.add_argument("--r-max", type=float, default=1e-2, help="largest R as a fraction of mu1")
    p.add_argument("--points", type=int, default=8)

    p = sub.add_parser("invert", help="LM reconstruction from a t,flux CSV")
    _common(p, out_dir=True)
    p.add_argument("--data", required=True, help="trace CSV with columns t,flux")

    p = sub.add_parser("experiment", help="synthesize data, invert, write reports")
    _common(p, out_dir=True)
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")

    p = sub.add_parser("ml-eval", help="evaluate E_{alpha,beta}(z)")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--z", required=True, help="RE or RE,IM")
    p.add_argument("--quiet", action="store_true")
    return ap


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise InvalidInputError("--config is required")
    cfg = ExperimentConfig.load(args.config)
    return _override(cfg, args)


def _override(cfg: ExperimentConfig, args) -> ExperimentConfig:
    from dataclasses import replace

    noise = cfg.noise
    if getattr(args, "seed", None) is not None:
        noise = NoiseModel(noise.epsilon, args.seed, noise.generator)
    if getattr(args, "noise", None) is not None:
        noise = NoiseModel(args.noise, noise.seed, noise.generator)
    return replace(cfg, noise=noise)


def _emit(path, header, cols):
    data = write_csv(path, header, cols)
    if path is None:
        sys.stdout.write(data.decode())


def _log(args, msg):
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr)


def cmd_forward(args):
    from .forward import extract_flux, solve_ibvp

    cfg = _load(args)
    traj = solve_ibvp(cfg.problem, cfg.disc)
    window = (0.0, cfg.problem.T) if args.full else cfg.window
    tr = extract_flux(traj, cfg.problem, cfg.disc, window)
    if cfg.noise.epsilon > 0:
        tr = add_noise(tr, cfg.noise)
    _emit(args.out, ["t", "flux"], [tr.times, tr.values])
    return EXIT_OK


def _eig(cfg, K):
    from .sturm_liouville import eigenpairs

    p = cfg.problem
    return eigenpairs(p.q, p.rho, p.ell, p.bc, K)


def cmd_oracle(args):
    from .forward import measurement_steps
    from .spectral import SeriesControl, flux_series

    cfg = _load(args)
    eig = _eig(cfg, args.K)
    t = measurement_steps(cfg.problem, cfg.disc, cfg.window) * cfg.disc.tau(cfg.problem.T)
    vals = flux_series(eig, cfg.problem.alpha, cfg.problem.excitation, t, SeriesControl(K=args.K))
    _emit(args.out, ["t", "flux"], [t, vals])
    return EXIT_OK


def cmd_spectrum(args):
    cfg = _load(args)
    eig = _eig(cfg, args.K)
    _emit(args.out, ["k", "lambda", "phi_prime_0"], [np.arange(1, len(eig.lam) + 1), eig.lam, eig.phi_prime_0])
    return EXIT_OK


def cmd_probe(args):
    from .probe import LaplaceProbe, estimate_order, jump

    cfg = _load(args)
    eig = _eig(cfg, args.K)
    pr = LaplaceProbe(eig, cfg.problem.alpha, cfg.problem.excitation)
    if not (0 < args.r_min < args.r_max < 1) or args.points < 2:
        raise InvalidInputError("need 0 < r-min < r-max < 1 and at least two points")
    R = np.geomspace(args.r_max, args.r_min, args.points) * pr.mu1
    J = np.array([jump(pr, r) for r in R])
    g = np.real(cfg.problem.excitation.laplace(-R))
    _emit(args.out, ["R", "jump_re", "jump_im", "ghat"], [R, J.real, J.imag, g])
    print(f"alpha_hat={estimate_order(pr, R):.17g}")
    return EXIT_OK


def _report(args, summary):
    if summary["status"] == "failed":
        print(summary.get("error", "failed"), file=sys.stderr)
        return summary.get("exit_code", EXIT_SOLVER)
    if not args.quiet:
        keys = ("status", "iterations", "best_k", "best_e_q", "best_ell", "best_rho", "r_min", "wall_time")
        print(json.dumps({k: summary.get(k) for k in keys}))
    return EXIT_DIVERGED if summary["status"] == "diverged" else EXIT_OK


def _progress(args):
    if args.quiet:
        return None
    return lambda rec: print(f"k={rec.k} r={rec.r:.4e} e_q={rec.e_q:.4e} ell={rec.ell:.5f}", file=sys.stderr)


def cmd_invert(args):
    cfg = _load(args)
    data = read_trace_csv(args.data)
    data.window = cfg.window
    summary = run_experiment(cfg, out_dir=args.out or cfg.outputs, data=data, progress=_progress(args))
    return _report(args, summary)


def cmd_experiment(args):
    if args.preset:
        cfg = preset(args.preset, args.alpha, args.noise or 0.0, args.seed or 0)
        cfg = _override(cfg, args)
    else:
        cfg = _load(args)
    if args.dump_config:
        sys.stdout.write(cfg.to_json())
        return EXIT_OK
    summary = run_experiment(cfg, out_dir=args.out or cfg.outputs, progress=_progress(args))
    return _report(args, summary)


def cmd_ml(args):
    from .mittag_leffler import MLParams, ml

    try:
        parts = [float(v) for v in args.z.split(",")]
    except ValueError:
        raise InvalidInputError("--z must be RE or RE,IM") from None
    if len(parts) not in (1, 2):
        raise InvalidInputError("--z must be RE or RE,IM")
    z = complex(parts[0], parts[1] if len(parts) == 2 else 0.0)
    res = ml(MLParams(args.alpha, args.beta), z)
    v = res.value
    print(f"value={v.real:.17g},{v.imag:.17g} regime={res.regime} est_abs_error={res.est_abs_error:.3g}")
    return EXIT_OK


COMMANDS = {
    "forward": cmd_forward,
    "oracle-flux": cmd_oracle,
    "spectrum": cmd_spectrum,
    "probe": cmd_probe,
    "invert": cmd_invert,
    "experiment": cmd_experiment,
    "ml-eval": cmd_ml,
}


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    try:
        return COMMANDS[args.cmd](args)
    except SubdiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BrokenPipeError:
        # reader went away (e.g. piped into head); not an error of ours
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
