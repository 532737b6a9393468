"""``koopkit`` command line interface.

Exit codes: 0 success, 2 bad flags, 3 unreadable or malformed input,
4 fitting or numerical failure, 5 instability (no certificate exists).
Results go to stdout (or the requested files); diagnostics go to stderr.
"""

import argparse
import json
import logging
import sys
import warnings

import numpy as np

from . import analysis, control, embed, koopfit, linalg, systems
from . import io as kio
from .exceptions import InstabilityError, KoopkitError, ParseError, ValidationError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_FIT, EXIT_UNSTABLE = 0, 2, 3, 4, 5


class UsageError(KoopkitError, ValueError):
    """A flag value is well-formed but not acceptable (exit code 2)."""


def _vector(text):
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def parse_dictionary(spec, n):
    """Dictionary from a flag value.

    ``identity``, ``monomials:D`` or ``monomials:D:const``, ``example1``,
    ``example1-eigen``, ``example4``.
    """
    name, *params = spec.split(":")
    if name == "identity":
        return embed.identity_dictionary(n)
    if name == "monomials":
        try:
            degree = int(params[0])
        except (IndexError, ValueError):
            raise UsageError(f"monomials needs a degree, e.g. monomials:2 (got {spec!r})") from None
        return embed.monomial_dictionary(n, degree, include_constant="const" in params[1:])
    builtin = {
        "example1": embed.example1_observables,
        "example1-eigen": embed.example1_eigenfunctions,
        "example4": embed.example4_lifting,
    }
    if name not in builtin:
        raise UsageError(f"unknown dictionary {spec!r}")
    d = builtin[name]()
    if d.input_dim != n:
        raise UsageError(f"dictionary {name} expects {d.input_dim} states, data has {n}")
    return d


def _nonlinear_basis(n, degree):
    if degree < 2:
        raise UsageError("conjugacy basis degree must be at least 2")
    E = embed.monomial_exponents(n, degree)
    return embed.PolynomialDictionary(E[E.sum(axis=1) >= 2], name=f"monomials-{2}-{degree}")


def _system(args):
    if args.system == "example1":
        return systems.example1_map(args.a, args.b)
    if args.system == "example3":
        return systems.cubic_decay()
    if args.system == "example4":
        return systems.example4_system(args.c, args.d)
    raise ValidationError(f"unknown system {args.system!r}")


def _sample_box(n, count, seed, low=-1.0, high=1.0):
    return np.random.default_rng(seed).uniform(low, high, size=(count, n))


def _sampling_time(trajs, given):
    if given is not None:
        return given
    t = trajs[0].times
    if np.issubdtype(t.dtype, np.integer) or len(t) < 2:
        return None
    return float(t[1] - t[0])


def _provenance(argv, paths):
    return kio._default_provenance("koopkit " + " ".join(argv), [p for p in paths if p])


def _print_residuals(lifting, reconstruction):
    print(f"lifting residual: {kio.format_float(lifting)}")
    print(f"reconstruction residual: {kio.format_float(reconstruction)}")


def cmd_fit(args, argv):
    trajs = [kio.read_trajectory(p) for p in args.input]
    if not trajs and args.method != "bilinear":
        raise UsageError("--input is required")
    method = args.method
    if method == "dmd":
        model = koopfit.fit_dmd(trajs, args.rank)
        model.ts = _sampling_time(trajs, args.ts)
    elif method == "edmd":
        d = parse_dictionary(args.dict, trajs[0].n_states)
        model = koopfit.fit_edmd(trajs, d, ts=_sampling_time(trajs, args.ts))
    elif method == "generator":
        d = parse_dictionary(args.dict, trajs[0].n_states)
        X, Xdot = [], []
        for tr in trajs:
            if len(tr) < 3:
                raise ValidationError("generator fitting needs at least three samples per trajectory")
            X.append(tr.states)
            Xdot.append(np.gradient(tr.states, tr.times.astype(float), axis=0, edge_order=2))
        model = koopfit.fit_generator_edmd(np.vstack(X), np.vstack(Xdot), d, ts=_sampling_time(trajs, args.ts))
    elif method == "hankel":
        col = int(args.column) - 1
        series = trajs[0].states[:, col]
        model = koopfit.hankel_dmd(series, args.depth, args.rank)
        model.ts = _sampling_time(trajs, args.ts)
    elif method == "conjugacy":
        if args.system != "example1":
            raise UsageError("conjugacy fitting needs a known map: --system example1")
        F = _system(args)
        basis = _nonlinear_basis(F.dimension, args.degree)
        X = np.vstack([tr.states for tr in trajs])
        cmap, pairs = koopfit.fit_conjugacy(F, basis=basis, samples=X)
        dec = linalg.eig(cmap.linear_part)
        model = koopfit.SpectralModel(
            np.diag(pairs.eigenvalues), dec.left_vectors.conj().T, dec.right_vectors,
            cmap.as_dictionary(), koopfit.DISCRETE, _sampling_time(trajs, args.ts),
        )
        _print_residuals(cmap.residual, 0.0)
        kio.save_model(model, args.output, _provenance(argv, args.input))
        return EXIT_OK
    else:
        if args.system != "example4":
            raise UsageError("bilinear fitting needs a control-affine system: --system example4")
        sys_ = _system(args)
        d = parse_dictionary(args.dict, sys_.dimension)
        X = np.vstack([tr.states for tr in trajs]) if trajs else _sample_box(sys_.dimension, args.samples, args.seed)
        model = control.lift_control_fields(sys_, d, X)
        model.info["ts"] = args.ts
        res = model.info["residuals"]
        _print_residuals(max(v for k, v in res.items() if k != "output"), res["output"])
        kio.save_model(model, args.output, _provenance(argv, args.input))
        return EXIT_OK
    res = model.info["residuals"]
    _print_residuals(res["lifting"], res["reconstruction"])
    kio.save_model(model, args.output, _provenance(argv, args.input))
    return EXIT_OK


def cmd_predict(args, argv):
    model = kio.load_model(args.model)
    x0 = args.x0
    if isinstance(model, control.BilinearLiftedModel):
        ts = args.dt or model.info.get("ts")
        if ts is None:
            raise UsageError("bilinear prediction needs --dt")
        u = np.zeros(model.n_inputs) if args.u is None else args.u
        Z = control.simulate_bilinear(model, model.lift(x0), np.tile(u, (max(args.steps, 1), 1)), ts, args.steps)
        Y = model.outputs(Z.states)
    else:
        Y = koopfit.predict(model, x0, args.steps, args.dt)
    Y = np.real_if_close(Y, tol=1e8)
    if np.iscomplexobj(Y):
        raise ValidationError("predicted outputs are complex; the model is not real")
    header = ["k"] + [f"y{i + 1}" for i in range(Y.shape[1])]
    rows = [[k] + list(Y[k]) for k in range(len(Y))]
    if args.compare:
        truth = kio.read_trajectory(args.compare).states
        if len(truth) < len(Y) or truth.shape[1] != Y.shape[1]:
            raise ParseError(f"{args.compare} needs {len(Y)} rows of {Y.shape[1]} states")
        err = np.linalg.norm(Y - truth[: len(Y)], axis=1)
        header.append("error")
        rows = [r + [e] for r, e in zip(rows, err)]
    kio.write_rows(args.output, header, rows)
    return EXIT_OK


def _as_spectral(model):
    if isinstance(model, koopfit.SpectralModel):
        return model
    if isinstance(model, koopfit.KoopmanModel):
        return koopfit.extract_spectrum(model)
    raise ValidationError("this command needs an autonomous (dmd, edmd, generator or spectral) model")


def cmd_spectrum(args, argv):
    spec = _as_spectral(kio.load_model(args.model))
    ts = args.ts if args.ts is not None else spec.ts
    lam = spec.eigenvalues
    continuous = spec.time_kind == koopfit.CONTINUOUS
    header = ["index", "re", "im", "abs", "gamma", "omega"]
    if continuous and ts:
        header += ["lambda_re", "lambda_im"]
    if args.modes:
        for i in range(spec.modes.shape[0]):
            header += [f"mode{i + 1}_re", f"mode{i + 1}_im"]
    rows = []
    with np.errstate(divide="ignore"):
        for j, v in enumerate(lam):
            if continuous:
                gamma, omega = v.real, v.imag
            else:
                h = ts or 1.0
                gamma, omega = np.log(abs(v)) / h, np.angle(v) / h
            row = [j, v.real, v.imag, abs(v), gamma, omega]
            if continuous and ts:
                e = np.exp(v * ts)
                row += [e.real, e.imag]
            if args.modes:
                for m in spec.modes[:, j]:
                    row += [m.real, m.imag]
            rows.append(row)
    kio.write_rows(sys.stdout, header, rows)
    if args.output:
        kio.save_model(spec, args.output, _provenance(argv, [args.model]))
    return EXIT_OK


def cmd_lyapunov(args, argv):
    spec = _as_spectral(kio.load_model(args.model))
    samples = step = None
    lo, hi, n = args.low, args.high, args.grid
    if spec.dictionary.input_dim != 2:
        raise ValidationError("the grid export needs a two-state model")
    g = np.linspace(lo, hi, n)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    grid = np.column_stack([X1.ravel(), X2.ravel()])
    if args.system:
        samples, step = grid, _system(args)
    cert = analysis.synthesize_lyapunov(spec, samples, step)
    V = cert.value(grid)
    kio.write_rows(args.output, ["x1", "x2", "V"], np.column_stack([grid, V]))
    P = cert.P.real if np.allclose(cert.P.imag, 0.0) else cert.P
    report = {
        "P_diagonal": [float(v) for v in np.diag(P).real],
        "P": P.tolist() if not np.iscomplexobj(P) else {"real": P.real.tolist(), "imag": P.imag.tolist()},
        "eigenvalues": [[float(v.real), float(v.imag)] for v in spec.eigenvalues],
        "stability": analysis.classify_stability(spec).to_dict(),
        "witness": cert.witness,
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_mpc(args, argv):
    try:
        problem = control.MpcProblem.from_json(args.problem)
    except OSError as exc:
        raise ParseError(f"cannot read problem file: {exc}") from exc
    except (KeyError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed problem file: {exc}") from exc
    sys_ = _system(args)
    if args.model:
        model = kio.load_model(args.model)
        if not isinstance(model, control.BilinearLiftedModel):
            raise ValidationError("mpc needs a bilinear model file")
    else:
        lifting = parse_dictionary(args.dict, sys_.dimension)
        model = control.lift_control_fields(sys_, lifting, _sample_box(sys_.dimension, 200, args.seed))
    result = control.run_mpc(sys_, model, problem, args.x0, args.steps)
    tr = result.trajectory
    n, m = tr.n_states, tr.n_inputs
    p = result.outputs.shape[1]
    header = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
              + [f"y{i + 1}" for i in range(p)] + ["stage_cost"])
    costs = np.concatenate([[0.0], result.stage_costs])
    rows = np.column_stack([tr.times, tr.states, tr.inputs, result.outputs, costs])
    kio.write_rows(args.log, header, rows)
    summary = result.summary()
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.summary:
        with open(args.summary, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_simulate(args, argv):
    sys_ = _system(args)
    x0 = args.x0
    if x0.size != sys_.dimension:
        raise UsageError(f"--x0 needs {sys_.dimension} values")
    if args.system == "example1":
        traj = systems.simulate_map(sys_, x0, args.steps)
    elif args.system == "example3":
        traj = systems.integrate_rk4(sys_, x0, args.steps * args.dt, args.dt, substeps=args.substeps)
    else:
        u = np.zeros(sys_.n_inputs) if args.u is None else args.u
        if u.size != sys_.n_inputs:
            raise UsageError(f"--u needs {sys_.n_inputs} values")
        traj = systems.integrate_rk4(sys_, x0, args.steps * args.dt, args.dt, u=lambda t: u, substeps=args.substeps)
    kio.write_trajectory(traj, args.output)
    return EXIT_OK


def _add_system_flags(p, required=False, choices=("example1", "example3", "example4")):
    p.add_argument("--system", choices=choices, required=required)
    p.add_argument("--a", type=float, default=0.9, help="example1 parameter a")
    p.add_argument("--b", type=float, default=0.8, help="example1 parameter b")
    p.add_argument("--c", type=float, default=-0.5, help="example4 parameter c")
    p.add_argument("--d", type=float, default=-0.5, help="example4 parameter d")


def build_parser():
    parser = argparse.ArgumentParser(prog="koopkit", description="Koopman operator models from trajectory data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model from trajectory CSV files")
    p.add_argument("--method", required=True, choices=["dmd", "edmd", "generator", "hankel", "conjugacy", "bilinear"])
    p.add_argument("--dict", default="identity", help="identity | monomials:D[:const] | example1 | example1-eigen | example4")
    p.add_argument("--input", action="append", default=[], help="trajectory CSV (repeat for several episodes)")
    p.add_argument("--output", required=True, help="model JSON path")
    p.add_argument("--rank", type=int, default=None, help="SVD truncation rank (dmd, hankel)")
    p.add_argument("--depth", type=int, default=2, help="Hankel depth")
    p.add_argument("--column", type=int, default=1, help="state column used by hankel (1-based)")
    p.add_argument("--degree", type=int, default=2, help="conjugacy basis degree")
    p.add_argument("--ts", type=float, default=None, help="sampling time (default: from the time column)")
    p.add_argument("--samples", type=int, default=200, help="bilinear: random lifting samples")
    p.add_argument("--seed", type=int, default=0)
    _add_system_flags(p, choices=("example1", "example4"))
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="multi-step output prediction")
    p.add_argument("--model", required=True)
    p.add_argument("--x0", type=_vector, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--dt", type=float, default=None, help="step for continuous-time models")
    p.add_argument("--u", type=_vector, default=None, help="constant input for bilinear models")
    p.add_argument("--compare", default=None, help="truth trajectory CSV")
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("spectrum", help="eigenvalue table")
    p.add_argument("--model", required=True)
    p.add_argument("--modes", action="store_true")
    p.add_argument("--ts", type=float, default=None)
    p.add_argument("--output", default=None, help="also write the spectral model JSON")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("lyapunov", help="quadratic Lyapunov certificate and grid export")
    p.add_argument("--model", required=True)
    p.add_argument("--output", default="-", help="grid CSV (x1, x2, V)")
    p.add_argument("--grid", type=int, default=21)
    p.add_argument("--low", type=float, default=-1.0)
    p.add_argument("--high", type=float, default=1.0)
    _add_system_flags(p, choices=("example1",))
    p.set_defaults(func=cmd_lyapunov)

    p = sub.add_parser("mpc", help="closed-loop Koopman MPC on a benchmark plant")
    p.add_argument("--problem", required=True, help="problem JSON (horizon, Q, R, u_lower, u_upper, y_ref, ts)")
    p.add_argument("--x0", type=_vector, required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--model", default=None, help="bilinear model JSON (default: lift the plant)")
    p.add_argument("--dict", default="example4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", default="-", help="closed-loop log CSV")
    p.add_argument("--summary", default=None, help="summary JSON path")
    _add_system_flags(p, choices=("example4",))
    p.set_defaults(func=cmd_mpc, system="example4")

    p = sub.add_parser("simulate", help="generate benchmark trajectories")
    _add_system_flags(p, required=True)
    p.add_argument("--x0", type=_vector, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--substeps", type=int, default=1)
    p.add_argument("--u", type=_vector, default=None, help="constant input (example4)")
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        warnings.showwarning = lambda msg, cat, *a, **k: print(f"warning: {msg}", file=sys.stderr)
        try:
            return args.func(args, argv)
        except UsageError as exc:
            print(f"koopkit {args.command}: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except ParseError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        except InstabilityError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_UNSTABLE
        except (KoopkitError, ValueError, np.linalg.LinAlgError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
