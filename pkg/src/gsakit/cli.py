"""Command-line front end.

Every command writes its results plus a ``manifest.json`` into ``--out``;
``gsakit replay manifest.json --out other/`` re-runs the recorded command.

Exit codes: 0 success, 2 input error, 3 numerical degeneracy,
4 external-model failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import shlex
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from . import plotdata
from .core import ExternalModelError, GsaError, InputError, InputSpec, scale_design
from .sampling import design_from_csv, design_to_csv, format_float, make_rng, sample
from .shapley import ShapleyConfig, estimate_shapley
from .sobol import (EstimatorOptions, dependent_indices, estimate_indices, pick_freeze_design)
from .stochsa import end_to_end_stochastic_sa
from .testbed import eval_model, get_model

PATH_OPTIONS = ("--spec", "--design", "--responses")
NOISE_SEED_ENV = "GSAKIT_NOISE_SEED"


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

def external_model(command: str, jobs: int = 1, env: Optional[dict] = None) -> Callable:
    """Wrap a shell command as a vectorized model.

    The command receives the design CSV (with header) on stdin and must print
    one float per data row on stdout.  ``jobs > 1`` splits the rows across
    that many concurrent processes; row order is preserved.
    """

    def run_chunk(X, names):
        text = design_to_csv(X, names)
        try:
            proc = subprocess.run(command, shell=True, input=text, capture_output=True, text=True,
                                  env=env)
        except OSError as exc:
            raise ExternalModelError(f"could not start external model: {exc}") from None
        if proc.returncode != 0:
            raise ExternalModelError(f"external model exited with status {proc.returncode}: "
                                     f"{proc.stderr.strip()[:500]}")
        lines = [ln.strip() for ln in proc.stdout.splitlines() if ln.strip()]
        try:
            y = np.array([float(ln) for ln in lines], dtype=float)
        except ValueError as exc:
            raise ExternalModelError(f"external model printed a malformed number: {exc}") from None
        if y.size != X.shape[0]:
            raise ExternalModelError(f"external model returned {y.size} values for {X.shape[0]} rows")
        return y

    def model(X, names=None):
        X = np.asarray(X, dtype=float)
        if jobs <= 1 or X.shape[0] < 2:
            return run_chunk(X, names)
        chunks = np.array_split(X, min(jobs, X.shape[0]))
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda c: run_chunk(c, names), chunks))
        return np.concatenate(parts)

    return model


class ResolvedModel:
    """Input spec plus deterministic and (optionally) stochastic evaluators."""

    def __init__(self, spec: InputSpec, func: Callable, simulator: Optional[Callable], label: str):
        self.spec = spec
        self.func = func
        self.simulator = simulator
        self.label = label


def resolve_model(args) -> ResolvedModel:
    model_name = getattr(args, "model", None)
    command = getattr(args, "exec_cmd", None)
    if bool(model_name) == bool(command):
        raise InputError("give exactly one of --model or --exec")
    noise_var = getattr(args, "noise_var", None)
    seed = getattr(args, "seed", 0)

    if model_name:
        params = {}
        if model_name == "linear_gaussian":
            params = dict(sigma1=args.sigma1, sigma2=args.sigma2, rho=args.rho)
        elif model_name == "additive_uniform":
            params = dict(d=args.dim)
        m = get_model(model_name, **params)
        if getattr(args, "spec", None):
            raise InputError("--spec is only used with --exec")

        def simulator(X, noise_seed):
            y = eval_model(m, X, noise_seed)
            if noise_var:
                y = y + np.sqrt(noise_var) * make_rng(noise_seed, 99).standard_normal(y.shape[0])
            return y

        if m.stochastic or noise_var:
            return ResolvedModel(m.input_spec, lambda X: simulator(X, seed), simulator, m.name)
        return ResolvedModel(m.input_spec, lambda X: eval_model(m, X), None, m.name)

    if not getattr(args, "spec", None):
        raise InputError("--exec needs --spec describing the inputs")
    spec = load_spec(args.spec)
    jobs = getattr(args, "jobs", 1)
    det = external_model(command, jobs)

    def ext_simulator(X, noise_seed):
        env = dict(os.environ, **{NOISE_SEED_ENV: str(noise_seed)})
        return external_model(command, jobs, env)(X, list(spec.names))

    return ResolvedModel(spec, lambda X: det(X, list(spec.names)), ext_simulator, command)


def load_spec(path) -> InputSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read input specification: {exc}") from None
    return InputSpec.from_json(text)


def read_responses(path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read responses: {exc}") from None
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if lines and lines[0].lower() == "y":
        lines = lines[1:]
    try:
        return np.array([float(v) for v in lines], dtype=float)
    except ValueError as exc:
        raise InputError(f"malformed response value: {exc}") from None


def read_design(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read design: {exc}") from None
    return design_from_csv(text)


def responses_to_csv(y) -> str:
    return "y\n" + "".join(format_float(v) + "\n" for v in y)


# ---------------------------------------------------------------------------
# output handling
# ---------------------------------------------------------------------------

class Run:
    """Collects output files of one command and writes the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = argv
        self.out = Path(args.out)
        self.files: dict = {}
        self.started = datetime.now(timezone.utc).isoformat()

    def write(self, name: str, text: str) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def finish(self) -> None:
        a = self.args
        manifest = {
            "command": a.command,
            "argv": self.argv,
            "input_spec_path": os.path.abspath(a.spec) if getattr(a, "spec", None) else None,
            "model": getattr(a, "model", None) or getattr(a, "exec_cmd", None),
            "seed": getattr(a, "seed", None),
            "n": getattr(a, "n", None),
            "r_bootstrap": getattr(a, "R", None),
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "tool_version": __version__,
            "outputs": self.files,
        }
        self.write_manifest(manifest)

    def write_manifest(self, manifest) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _emit(args, text: str, csv_text: str, json_text: str) -> None:
    fmt = getattr(args, "format", "text")
    sys.stdout.write({"text": text, "csv": csv_text, "json": json_text + "\n"}[fmt])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_design(args, run: Run) -> None:
    spec = load_spec(args.spec) if args.spec else get_model(args.model or "ishigami").input_spec
    if spec.dependence is not None:
        raise InputError("pick-freeze designs need independent inputs")
    design = pick_freeze_design(args.n, spec.d, args.sampler, args.seed)
    X = scale_design(design.rows, spec)
    run.write("design.csv", design_to_csv(X, spec.names))
    print(f"wrote {X.shape[0]} rows ({args.n} x ({spec.d} + 2)) to {run.out / 'design.csv'}")


def cmd_evaluate(args, run: Run) -> None:
    names, X = read_design(args.design)
    if args.model:
        m = get_model(args.model)
        if len(names) != m.d:
            raise InputError(f"design has {len(names)} columns, model {m.name!r} needs {m.d}")
        y = eval_model(m, X, args.seed if m.stochastic else None)
    else:
        y = external_model(args.exec_cmd, args.jobs)(X, names)
    run.write("responses.csv", responses_to_csv(y))
    print(f"wrote {y.size} responses to {run.out / 'responses.csv'}")


def _estimator_options(args) -> EstimatorOptions:
    return EstimatorOptions(first=args.first, R=args.R, level=args.level, ci=args.ci,
                            seed=args.seed)


def cmd_sobol(args, run: Run) -> None:
    opts = _estimator_options(args)
    if args.design or args.responses:
        if not (args.design and args.responses):
            raise InputError("--design and --responses go together")
        names, X = read_design(args.design)
        y = read_responses(args.responses)
        d = len(names)
        if y.size != X.shape[0]:
            raise InputError("responses are not row-aligned with the design")
        if X.shape[0] % (d + 2):
            raise InputError("design row count is not a multiple of d + 2")
        table = estimate_indices(y, X.shape[0] // (d + 2), d, opts, names)
    else:
        rm = resolve_model(args)
        if rm.spec.dependence is not None:
            table = dependent_indices(rm.func, rm.spec, args.n, args.sampler, args.seed, opts)
        else:
            design = pick_freeze_design(args.n, rm.spec.d, args.sampler, args.seed)
            y = np.asarray(rm.func(scale_design(design.rows, rm.spec)), dtype=float)
            table = estimate_indices(y, args.n, rm.spec.d, opts, rm.spec.names)
    run.write("sobol.csv", table.to_csv())
    run.write("sobol.json", table.to_json() + "\n")
    _emit(args, table.to_text(), table.to_csv(), table.to_json())


def cmd_shapley(args, run: Run) -> None:
    rm = resolve_model(args)
    cfg = ShapleyConfig(args.M, args.n_outer, args.n_inner, args.n_var, args.seed)
    est = estimate_shapley(rm.func, rm.spec, cfg)
    run.write("shapley.csv", est.to_csv())
    run.write("shapley.json", est.to_json() + "\n")
    _emit(args, est.to_text(), est.to_csv(), est.to_json())


def cmd_stochsa(args, run: Run) -> None:
    rm = resolve_model(args)
    simulator = rm.simulator or (lambda X, s: rm.func(X))
    opts = _estimator_options(args)
    res = end_to_end_stochastic_sa(simulator, rm.spec, args.design_size, args.replicates, args.n,
                                   opts, args.kernel, args.restarts, args.seed)
    run.write("stochsa.csv", res.input_table.to_csv())
    run.write("stochsa.json", res.to_json() + "\n")
    _emit(args, res.to_text(), res.input_table.to_csv(), res.to_json())


def cmd_plotdata(args, run: Run) -> None:
    kind = args.kind
    if kind == "discrepancy_compare":
        table = plotdata.discrepancy_compare(args.n, args.dim, args.seeds)
        run.write("discrepancy_compare.csv", plotdata.discrepancy_csv(table))
        means = table[:, 1:].mean(axis=0)
        print(f"mean L2-star discrepancy  mc {means[0]:.5f}  lhs {means[1]:.5f}  sobol {means[2]:.5f}")
        return
    if args.design or args.responses:
        if not (args.design and args.responses):
            raise InputError("--design and --responses go together")
        names, X = read_design(args.design)
        y = read_responses(args.responses)
    else:
        rm = resolve_model(args)
        X = scale_design(sample(args.sampler, args.n, rm.spec.d, args.seed).points, rm.spec)
        names = list(rm.spec.names)
        y = np.asarray(rm.func(X), dtype=float)
    if y.size == 0:
        raise InputError("no responses to summarize")
    if kind == "histogram":
        edges, counts = plotdata.histogram(y, args.bins or 30)
        run.write("histogram.csv", plotdata.histogram_csv(edges, counts))
    else:
        if y.size != X.shape[0]:
            raise InputError("responses are not row-aligned with the design")
        binned = plotdata.scatter_bins(X, y, args.bins or 20)
        run.write("scatterbins.csv", plotdata.scatter_bins_csv(names, binned))
    print(f"wrote {kind} data to {run.out}")


COMMANDS = {"design": cmd_design, "evaluate": cmd_evaluate, "sobol": cmd_sobol,
            "shapley": cmd_shapley, "stochsa": cmd_stochsa, "plotdata": cmd_plotdata}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _model_options(p, default_n=5000):
    p.add_argument("--model", help="built-in model name")
    p.add_argument("--exec", dest="exec_cmd", metavar="CMD",
                   help="external model: design CSV on stdin, one float per row on stdout")
    p.add_argument("--spec", help="input specification JSON (with --exec)")
    p.add_argument("--jobs", type=int, default=1, help="parallel external-model processes")
    p.add_argument("--n", type=int, default=default_n)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampler", choices=("mc", "lhs", "sobol"), default="sobol")
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--sigma1", type=float, default=1.0)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=4, help="dimension for additive_uniform / discrepancy")
    p.add_argument("--noise-var", dest="noise_var", type=float, default=None,
                   help="add Gaussian noise of this variance to a built-in model")


def _estimator_args(p):
    p.add_argument("--R", type=int, default=1000, help="bootstrap replicates (0 disables)")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--first", choices=("saltelli", "jansen"), default="saltelli")
    p.add_argument("--ci", choices=("norm", "percent"), default="norm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsakit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gsakit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", default="gsakit-out", help="output directory")
        p.add_argument("--format", choices=("text", "csv", "json"), default="text",
                       help="what to print on stdout")
        return p

    p = add("design", "write a scaled pick-freeze design")
    p.add_argument("--model")
    p.add_argument("--spec")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampler", choices=("mc", "lhs", "sobol"), default="sobol")

    p = add("evaluate", "evaluate a model on a design file")
    p.add_argument("--design", required=True)
    p.add_argument("--model")
    p.add_argument("--exec", dest="exec_cmd", metavar="CMD")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="noise seed for stochastic models")

    p = add("sobol", "first- and total-order Sobol' indices")
    _model_options(p)
    _estimator_args(p)
    p.add_argument("--design")
    p.add_argument("--responses")

    p = add("shapley", "Shapley effects")
    _model_options(p)
    p.add_argument("--M", type=int, default=2000, help="random permutations")
    p.add_argument("--n-outer", dest="n_outer", type=int, default=1)
    p.add_argument("--n-inner", dest="n_inner", type=int, default=3)
    p.add_argument("--n-var", dest="n_var", type=int, default=10_000)

    p = add("stochsa", "sensitivity analysis of a stochastic simulator")
    _model_options(p, default_n=8192)
    _estimator_args(p)
    p.add_argument("--design-size", dest="design_size", type=int, default=200)
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--kernel", choices=("matern52", "squared_exponential"), default="matern52")
    p.add_argument("--restarts", type=int, default=5)

    p = add("plotdata", "data for histogram, binned scatter and discrepancy plots")
    _model_options(p, default_n=100)
    p.add_argument("--kind", choices=("histogram", "scatterbins", "discrepancy_compare"),
                   required=True)
    p.add_argument("--design")
    p.add_argument("--responses")
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--seeds", type=int, default=50)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="directory for the replayed outputs")
    p.add_argument("--check", action="store_true",
                   help="exit 1 unless every output file is byte-identical to the recording")
    return parser


def _normalize_argv(argv):
    """Absolutize path arguments and drop ``--out`` so the run can be replayed elsewhere."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        key, _, inline = tok.partition("=")
        if key in PATH_OPTIONS + ("--out",):
            value = inline if inline else (argv[i + 1] if i + 1 < len(argv) else "")
            i += 1 if inline else 2
            if key != "--out":
                out += [key, os.path.abspath(value)]
            continue
        out.append(tok)
        i += 1
    return out


def replay(manifest_path, out, check=False) -> int:
    try:
        manifest = json.loads(Path(manifest_path).read_text())
        argv = list(manifest["argv"])
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: unreadable manifest: {exc}", file=sys.stderr)
        return 2
    code = main(argv + ["--out", str(out)])
    if code or not check:
        return code
    mismatched = []
    for name, digest in manifest.get("outputs", {}).items():
        path = Path(out) / name
        if not path.exists() or hashlib.sha256(path.read_bytes()).hexdigest() != digest:
            mismatched.append(name)
    if mismatched:
        print(f"replay differs in: {', '.join(mismatched)}", file=sys.stderr)
        return 1
    print("replay reproduced all outputs byte-for-byte")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        return replay(args.manifest, args.out, args.check)
    run = Run(args, _normalize_argv(argv))
    try:
        COMMANDS[args.command](args, run)
    except GsaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    run.finish()
    return 0


if __name__ == "__main__":
    sys.exit(main())
