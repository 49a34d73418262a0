"""Command-line front end and all on-disk formats.

Subcommands: gen, train, eval, infer, mi, bounds, complexity,
convergence, concentration, gradcheck, plot.  Every command validates
its full parameter set before any side effect, writes outputs
atomically (temp file + rename), and emits a run manifest
``<first output>.manifest.json`` recording the exact command line,
resolved configuration, seed, and artifact checksums; replaying the
manifest's command reproduces the outputs byte for byte.

Exit codes: 0 ok, 2 usage, 3 validation, 4 I/O, 5 internal invariant.

Formats:
  - dataset CSV: header ``x_1,..,x_dx,y_1,..,y_dy``, one row per
    example, shortest round-trip decimal floats;
  - model / marginal JSON documents (strict field sets, schema_version);
  - trace CSV ``t,loss,grad_norm_sq,lr``;
  - bounds CSV ``n,rho,mi_exact,b_paper,b_tight,regime,log_slope``;
  - concentration CSV ``N,mean_dev_sq,p_below``;
  - plots: standalone SVG line charts.

Commands that consume randomness require ``--seed`` or the
``MILR_SEED`` environment variable; there is no wall-clock fallback.
"""

from __future__ import annotations

import argparse
import hashlib
import html
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_math import (
    InvariantError,
    MilrError,
    RngState,
    ValidationError,
    derive_seed,
)
from .data_model import (
    Dataset,
    JointGaussianSpec,
    ScalarRegressionSpec,
    sample_joint_gaussian,
    sample_scalar_regression,
)
from .density_models import (
    ConditionalGaussianHead,
    MarginalGaussian,
    head_forward_batch,
)
from .mil_loss import (
    conditional_ce,
    mi_estimate,
    mixture_marginal,
    parametric_marginal,
)
from .sgd_trainer import (
    DatasetSource,
    LinearGaussianProblem,
    LrSchedule,
    OnlineSource,
    SgdConfig,
    TrainTrace,
    convergence_experiment,
    finite_difference_check,
    gradient_deviation_experiment,
    sgd_train,
    sgd_train_mse,
)
from .info_bounds import (
    asymptotic_regime,
    fano_bound_paper,
    fano_bound_tight,
    mutual_information_exact,
    sample_complexity_lemma42,
    sample_complexity_thm43,
    ComplexityInputs,
)

__all__ = ["main", "parse_and_validate", "execute", "CommandPlan", "RunManifest"]

MANIFEST_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4
EXIT_INTERNAL = 5

# Sub-stream indices derived from the command seed, so that e.g. weight
# initialization and batch sampling never share stream positions.
STREAM_MAIN = 0
STREAM_INIT = 1


@dataclass(frozen=True)
class CommandPlan:
    """A fully validated command: nothing here can fail except I/O."""

    subcommand: str
    params: dict
    argv: list[str]
    seed: int | None
    outputs: list[Path]


@dataclass
class CommandResult:
    files: list[tuple[Path, bytes]] = field(default_factory=list)
    stdout_lines: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class RunManifest:
    schema_version: int
    command: list[str]
    resolved_config: dict
    seed: int | None
    artifacts: dict
    wall_time_s: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": self.schema_version,
                "command": self.command,
                "resolved_config": self.resolved_config,
                "seed": self.seed,
                "artifacts": self.artifacts,
                "wall_time_s": self.wall_time_s,
            },
            indent=2,
            sort_keys=True,
        ) + "\n"

    @staticmethod
    def from_json(text: str) -> "RunManifest":
        doc = json.loads(text)
        return RunManifest(
            schema_version=doc["schema_version"],
            command=list(doc["command"]),
            resolved_config=doc["resolved_config"],
            seed=doc["seed"],
            artifacts=doc["artifacts"],
            wall_time_s=doc["wall_time_s"],
        )


# --------------------------------------------------------------------------
# small format helpers
# --------------------------------------------------------------------------


def _fmt(x) -> str:
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(x))


def _csv_bytes(header: list[str], rows: list[list]) -> bytes:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            cell if isinstance(cell, str) else
            str(cell) if isinstance(cell, (int, np.integer)) else _fmt(cell)
            for cell in row
        ))
    return ("\n".join(lines) + "\n").encode("utf-8")


def dataset_to_csv_bytes(ds: Dataset) -> bytes:
    header = [f"x_{i + 1}" for i in range(ds.input_dim)] + [
        f"y_{i + 1}" for i in range(ds.label_dim)
    ]
    rows = [
        [_fmt(v) for v in ds.inputs[i]] + [_fmt(v) for v in ds.labels[i]]
        for i in range(len(ds))
    ]
    return _csv_bytes(header, rows)


def dataset_from_csv_path(path: Path) -> Dataset:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError:
        raise
    lines = [ln for ln in text.splitlines() if ln]
    if not lines:
        raise ValidationError(f"{path}: empty dataset file")
    header = lines[0].split(",")
    dx = sum(1 for h in header if h.startswith("x_"))
    dy = sum(1 for h in header if h.startswith("y_"))
    expected = [f"x_{i + 1}" for i in range(dx)] + [f"y_{i + 1}" for i in range(dy)]
    if dx < 1 or dy < 1 or header != expected:
        raise ValidationError(f"{path}: malformed dataset header {header!r}")
    data = np.array(
        [[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=np.float64
    )
    if data.ndim != 2 or data.shape[1] != dx + dy:
        raise ValidationError(f"{path}: inconsistent row widths")
    return Dataset(input_dim=dx, label_dim=dy, inputs=data[:, :dx], labels=data[:, dx:])


def _json_bytes(doc: dict) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _load_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, str(path))
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _positive_int(name: str, value: int) -> int:
    if value < 1:
        raise ValidationError(f"--{name} must be a positive integer, got {value}")
    return value


def _open_unit(name: str, value: float) -> float:
    if not (0.0 < value < 1.0):
        raise ValidationError(
            f"--{name} must lie in the open interval (0, 1), got {value}"
        )
    return value


def _positive(name: str, value: float) -> float:
    if not value > 0.0:
        raise ValidationError(f"--{name} must be positive, got {value}")
    return value


def _nonnegative(name: str, value: float) -> float:
    if value < 0.0:
        raise ValidationError(f"--{name} must be >= 0, got {value}")
    return value


def _parse_float_list(name: str, text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise ValidationError(f"--{name} must be a comma-separated float list")


def _parse_int_list(name: str, text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise ValidationError(f"--{name} must be a comma-separated integer list")


def _parse_n_range(text: str) -> list[int]:
    """Accept '7', '1:50' (inclusive), or '1,2,4'."""
    if ":" in text:
        lo_s, hi_s = text.split(":", 1)
        try:
            lo, hi = int(lo_s), int(hi_s)
        except ValueError:
            raise ValidationError(f"--n range must be 'lo:hi', got {text!r}")
        if lo < 1 or hi < lo:
            raise ValidationError(f"--n range must satisfy 1 <= lo <= hi, got {text!r}")
        return list(range(lo, hi + 1))
    values = _parse_int_list("n", text)
    if not values or any(v < 1 for v in values):
        raise ValidationError(f"--n values must be positive integers, got {text!r}")
    return values


def _resolve_seed(args, required: bool) -> int | None:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("MILR_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"MILR_SEED must be an integer, got {env!r}")
    if required:
        raise ValidationError(
            "--seed is required (or set MILR_SEED); wall-clock seeding is not supported"
        )
    return None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="milr",
        description="Mutual-information-learned regression toolkit",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset CSV")
    p.add_argument("--kind", choices=["joint", "scalar"], default="joint",
                   help="data model (default: joint correlated Gaussian)")
    p.add_argument("--n", type=int, help="joint model dimension (labels and inputs)")
    p.add_argument("--rho", type=float, help="joint model correlation, in (0, 1)")
    p.add_argument("--input-dim", type=int, help="scalar model input dimension")
    p.add_argument("--truth", choices=["linear", "quadratic", "sine"],
                   help="scalar model ground-truth function")
    p.add_argument("--beta", type=str, help="linear truth coefficients, comma-separated")
    p.add_argument("--noise-sigma", type=float, help="scalar model noise scale (> 0)")
    p.add_argument("--samples", type=int, required=True, help="number of rows")
    p.add_argument("--seed", type=int, help="RNG seed (or MILR_SEED)")
    p.add_argument("--out", type=Path, required=True, help="output dataset CSV")

    p = sub.add_parser("train", help="train a density head (and marginal) by SGD")
    p.add_argument("--loss", choices=["milr", "mse"], default="milr",
                   help="objective (default milr: conditional + marginal cross-entropy)")
    p.add_argument("--data", type=Path, help="dataset CSV (resampled with replacement)")
    p.add_argument("--n", type=int, help="online joint model dimension")
    p.add_argument("--rho", type=float, help="online joint model correlation")
    p.add_argument("--input-dim", type=int, help="online scalar model input dimension")
    p.add_argument("--truth", choices=["linear", "quadratic", "sine"])
    p.add_argument("--beta", type=str)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--iters", type=int, default=5000, help="SGD iterations (default 5000)")
    p.add_argument("--batch-size", type=int, default=128, help="batch size (default 128)")
    p.add_argument("--lr", type=float, default=0.02, help="learning rate (default 0.02)")
    p.add_argument("--lr-schedule", choices=["constant", "inverse_sqrt"],
                   default="constant", help="constant or eta0/sqrt(t+1)")
    p.add_argument("--lambda-ent", type=float, default=1.0,
                   help="marginal cross-entropy weight, >= 0 (default 1.0)")
    p.add_argument("--hidden", type=str, default="16",
                   help="hidden layer widths, comma-separated (default 16)")
    p.add_argument("--sigma-min", type=float, default=1e-3)
    p.add_argument("--sigma-max", type=float, default=1e3)
    p.add_argument("--pin-sigma", type=float, default=None,
                   help="pin the scale outputs to this constant (unit-variance runs)")
    p.add_argument("--seed", type=int, help="RNG seed (or MILR_SEED)")
    p.add_argument("--out-model", type=Path, required=True, help="output model JSON")
    p.add_argument("--out-marginal", type=Path, help="output marginal JSON (milr loss)")
    p.add_argument("--out-trace", type=Path, help="output per-iteration trace CSV")

    p = sub.add_parser("eval", help="empirical squared-error risk of a model on a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, help="optional CSV: count,risk,std_error")

    p = sub.add_parser("infer", help="write predictions (conditional means and scales)")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("mi", help="plug-in mutual information estimate on a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--marginal", choices=["mixture", "parametric"], required=True)
    p.add_argument("--marginal-file", type=Path,
                   help="marginal JSON (required with --marginal parametric)")
    p.add_argument("--out", type=Path, help="optional CSV output")

    p = sub.add_parser("bounds", help="closed-form MI and risk-bound table")
    p.add_argument("--n", type=str, required=True, help="dimensions: '4', '1:50', or '1,2,4'")
    p.add_argument("--rho", type=str, required=True, help="correlations, comma-separated")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("complexity", help="sample-complexity formulas")
    p.add_argument("--t", type=float, required=True, help="deviation threshold (> 0)")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True, help="failure probability, in (0,1)")
    p.add_argument("--l-tilde", type=float, required=True)
    p.add_argument("--q0-tilde", type=float, required=True)
    p.add_argument("--l-bar", type=float, default=1.0)
    p.add_argument("--q0-bar", type=float, default=1.0)
    p.add_argument("--lambda-ent", type=float, default=1.0)
    p.add_argument("--m", type=int, required=True, help="conditional parameter count")
    p.add_argument("--m-prime", type=int, default=1, help="marginal parameter count")
    p.add_argument("--out", type=Path, help="optional CSV output")

    p = sub.add_parser("convergence", help="iteration-bound check on the linear testbed")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--beta-star", type=str, default="1.5,-1.0")
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--delta0-samples", type=int, default=200_000)
    p.add_argument("--seed", type=int, help="RNG seed (or MILR_SEED)")
    p.add_argument("--out-trace", type=Path, required=True)
    p.add_argument("--out-summary", type=Path, required=True)

    p = sub.add_parser("concentration", help="gradient-deviation experiment table")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--beta-star", type=str, default="1.0")
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--theta", type=str, required=True, help="evaluation point, comma-separated")
    p.add_argument("--batch-sizes", type=str, required=True)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--seed", type=int, help="RNG seed (or MILR_SEED)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the batch gradients")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, help="RNG seed (or MILR_SEED)")
    p.add_argument("--out", type=Path, help="optional CSV: trial,max_rel_error")

    p = sub.add_parser("plot", help="render a CSV produced by other commands to SVG")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--x", type=str, required=True, help="x-axis column name")
    p.add_argument("--y", type=str, required=True, help="y columns, comma-separated")
    p.add_argument("--title", type=str, default="")
    p.add_argument("--log-y", action="store_true", help="log10 scale on the y axis")
    p.add_argument("--out", type=Path, required=True)

    return parser


def parse_and_validate(argv: list[str]) -> CommandPlan:
    """Parse argv into a fully validated plan (no side effects).

    Usage errors terminate with exit code 2 via argparse; semantic
    violations raise :class:`ValidationError`, mapped to exit code 3.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = args.subcommand
    params: dict = {}
    outputs: list[Path] = []
    seed: int | None = None

    if sub == "gen":
        params["kind"] = args.kind
        if args.kind == "joint":
            if args.n is None or args.rho is None:
                raise ValidationError("gen --kind joint requires --n and --rho")
            params["spec"] = JointGaussianSpec(_positive_int("n", args.n),
                                               _open_unit("rho", args.rho))
        else:
            if args.input_dim is None or args.truth is None or args.noise_sigma is None:
                raise ValidationError(
                    "gen --kind scalar requires --input-dim, --truth and --noise-sigma"
                )
            beta = None
            if args.beta is not None:
                beta = tuple(_parse_float_list("beta", args.beta))
            params["spec"] = ScalarRegressionSpec(
                _positive_int("input-dim", args.input_dim),
                args.truth,
                _positive("noise-sigma", args.noise_sigma),
                beta,
            )
        params["samples"] = _positive_int("samples", args.samples)
        seed = _resolve_seed(args, required=True)
        outputs = [args.out]

    elif sub == "train":
        params["loss"] = args.loss
        source_flags = [args.data is not None,
                        args.rho is not None or args.n is not None,
                        args.truth is not None]
        if sum(source_flags) != 1:
            raise ValidationError(
                "train requires exactly one source: --data, or --n/--rho (online joint), "
                "or --truth/--input-dim/--noise-sigma (online scalar)"
            )
        if args.data is not None:
            params["source"] = ("dataset", args.data)
        elif args.rho is not None or args.n is not None:
            if args.n is None or args.rho is None:
                raise ValidationError("online joint training requires both --n and --rho")
            params["source"] = (
                "joint",
                JointGaussianSpec(_positive_int("n", args.n), _open_unit("rho", args.rho)),
            )
        else:
            if args.input_dim is None or args.noise_sigma is None:
                raise ValidationError(
                    "online scalar training requires --input-dim, --truth and --noise-sigma"
                )
            beta = tuple(_parse_float_list("beta", args.beta)) if args.beta else None
            params["source"] = (
                "scalar",
                ScalarRegressionSpec(
                    _positive_int("input-dim", args.input_dim),
                    args.truth,
                    _positive("noise-sigma", args.noise_sigma),
                    beta,
                ),
            )
        params["iters"] = _positive_int("iters", args.iters)
        params["batch_size"] = _positive_int("batch-size", args.batch_size)
        params["lr"] = _positive("lr", args.lr)
        params["lr_schedule"] = args.lr_schedule
        params["lambda_ent"] = _nonnegative("lambda-ent", args.lambda_ent)
        hidden = _parse_int_list("hidden", args.hidden) if args.hidden else []
        if any(h < 1 for h in hidden):
            raise ValidationError("--hidden widths must be positive integers")
        params["hidden"] = hidden
        if args.pin_sigma is not None:
            pin = _positive("pin-sigma", args.pin_sigma)
            params["sigma_min"] = params["sigma_max"] = pin
        else:
            params["sigma_min"] = _positive("sigma-min", args.sigma_min)
            params["sigma_max"] = _positive("sigma-max", args.sigma_max)
            if params["sigma_min"] > params["sigma_max"]:
                raise ValidationError("--sigma-min must not exceed --sigma-max")
        if args.loss == "milr" and args.out_marginal is None:
            raise ValidationError("train --loss milr requires --out-marginal")
        if args.loss == "mse" and args.out_marginal is not None:
            raise ValidationError("train --loss mse does not produce a marginal")
        seed = _resolve_seed(args, required=True)
        outputs = [args.out_model]
        if args.out_marginal is not None:
            outputs.append(args.out_marginal)
        if args.out_trace is not None:
            outputs.append(args.out_trace)
        params["out_trace"] = args.out_trace
        params["out_marginal"] = args.out_marginal
        params["out_model"] = args.out_model

    elif sub == "eval":
        params["data"] = args.data
        params["model"] = args.model
        outputs = [args.out] if args.out is not None else []

    elif sub == "infer":
        params["data"] = args.data
        params["model"] = args.model
        outputs = [args.out]

    elif sub == "mi":
        params["data"] = args.data
        params["model"] = args.model
        params["marginal"] = args.marginal
        if args.marginal == "parametric":
            if args.marginal_file is None:
                raise ValidationError("--marginal parametric requires --marginal-file")
            params["marginal_file"] = args.marginal_file
        elif args.marginal_file is not None:
            raise ValidationError("--marginal-file is only valid with --marginal parametric")
        outputs = [args.out] if args.out is not None else []

    elif sub == "bounds":
        params["n_values"] = _parse_n_range(args.n)
        rhos = _parse_float_list("rho", args.rho)
        if not rhos:
            raise ValidationError("--rho must list at least one value")
        for r in rhos:
            _open_unit("rho", r)
        params["rho_values"] = rhos
        outputs = [args.out]

    elif sub == "complexity":
        params["inputs"] = ComplexityInputs(
            epsilon=_positive("epsilon", args.epsilon),
            delta=_open_unit("delta", args.delta),
            t=_positive("t", args.t),
            L_tilde=_positive("l-tilde", args.l_tilde),
            q0_tilde=_positive("q0-tilde", args.q0_tilde),
            L_bar=_positive("l-bar", args.l_bar),
            q0_bar=_positive("q0-bar", args.q0_bar),
            lambda_ent=_nonnegative("lambda-ent", args.lambda_ent),
            m=_positive_int("m", args.m),
            m_prime=_positive_int("m-prime", args.m_prime),
        )
        outputs = [args.out] if args.out is not None else []

    elif sub == "convergence":
        beta = _parse_float_list("beta-star", args.beta_star)
        if len(beta) != args.dim:
            raise ValidationError("--beta-star length must equal --dim")
        params["problem"] = LinearGaussianProblem(
            _positive_int("dim", args.dim), tuple(beta),
            _positive("noise-sigma", args.noise_sigma),
        )
        params["batch_size"] = _positive_int("batch-size", args.batch_size)
        if not (0.0 < args.eta < 2.0):
            raise ValidationError("--eta must lie in (0, 2) for the unit-smooth testbed")
        params["eta"] = args.eta
        params["epsilon"] = _positive("epsilon", args.epsilon)
        params["delta0_samples"] = _positive_int("delta0-samples", args.delta0_samples)
        seed = _resolve_seed(args, required=True)
        outputs = [args.out_trace, args.out_summary]
        params["out_trace"] = args.out_trace
        params["out_summary"] = args.out_summary

    elif sub == "concentration":
        beta = _parse_float_list("beta-star", args.beta_star)
        if len(beta) != args.dim:
            raise ValidationError("--beta-star length must equal --dim")
        params["problem"] = LinearGaussianProblem(
            _positive_int("dim", args.dim), tuple(beta),
            _positive("noise-sigma", args.noise_sigma),
        )
        theta = _parse_float_list("theta", args.theta)
        if len(theta) != args.dim:
            raise ValidationError("--theta length must equal --dim")
        params["theta"] = theta
        sizes = _parse_int_list("batch-sizes", args.batch_sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ValidationError("--batch-sizes must be positive integers")
        params["batch_sizes"] = sizes
        if args.trials < 30:
            raise ValidationError("--trials must be at least 30")
        params["trials"] = args.trials
        params["epsilon"] = _positive("epsilon", args.epsilon)
        seed = _resolve_seed(args, required=True)
        outputs = [args.out]

    elif sub == "gradcheck":
        params["trials"] = _positive_int("trials", args.trials)
        params["step"] = _positive("step", args.step)
        params["tol"] = _positive("tol", args.tol)
        seed = _resolve_seed(args, required=True)
        outputs = [args.out] if args.out is not None else []

    elif sub == "plot":
        params["data"] = args.data
        params["x"] = args.x
        ys = [c for c in args.y.split(",") if c]
        if not ys:
            raise ValidationError("--y must list at least one column")
        params["y"] = ys
        params["title"] = args.title
        params["log_y"] = args.log_y
        outputs = [args.out]

    else:  # pragma: no cover - argparse enforces the choices
        raise ValidationError(f"unknown subcommand {sub!r}")

    return CommandPlan(
        subcommand=sub, params=params, argv=list(argv), seed=seed, outputs=outputs
    )


# --------------------------------------------------------------------------
# handlers
# --------------------------------------------------------------------------


def _load_head(path: Path) -> ConditionalGaussianHead:
    return ConditionalGaussianHead.from_dict(_load_json(path))


def _load_marginal(path: Path) -> MarginalGaussian:
    return MarginalGaussian.from_dict(_load_json(path))


def _trace_csv(trace: TrainTrace) -> bytes:
    rows = [
        [int(trace.t[i]), trace.loss[i], trace.grad_norm_sq[i], trace.lr[i]]
        for i in range(len(trace.t))
    ]
    return _csv_bytes(["t", "loss", "grad_norm_sq", "lr"], rows)


def _run_gen(plan: CommandPlan) -> CommandResult:
    state = RngState(plan.seed)
    spec = plan.params["spec"]
    if plan.params["kind"] == "joint":
        ds = sample_joint_gaussian(spec, plan.params["samples"], state)
    else:
        ds = sample_scalar_regression(spec, plan.params["samples"], state)
    out = plan.outputs[0]
    return CommandResult(
        files=[(out, dataset_to_csv_bytes(ds))],
        stdout_lines=[f"wrote {len(ds)} rows to {out}"],
    )


def _training_source(params: dict):
    kind, payload = params["source"]
    if kind == "dataset":
        ds = dataset_from_csv_path(payload)
        return DatasetSource(ds), ds.input_dim, ds.label_dim
    if kind == "joint":
        return OnlineSource(payload), payload.n, payload.n
    return OnlineSource(payload), payload.input_dim, 1


def _run_train(plan: CommandPlan) -> CommandResult:
    p = plan.params
    source, dx, dy = _training_source(p)
    init_state = RngState(derive_seed(plan.seed, STREAM_INIT))
    head = ConditionalGaussianHead.create(
        dx, dy, p["hidden"], state=init_state,
        sigma_min=p["sigma_min"], sigma_max=p["sigma_max"],
    )
    config = SgdConfig(
        iterations=p["iters"],
        batch_size=p["batch_size"],
        lr_schedule=LrSchedule(p["lr_schedule"], p["lr"]),
        lambda_ent=p["lambda_ent"],
        seed=derive_seed(plan.seed, STREAM_MAIN),
        sampling=source,
    )
    files: list[tuple[Path, bytes]] = []
    lines: list[str] = []
    if p["loss"] == "milr":
        marginal = MarginalGaussian.standard(
            dy, sigma_min=p["sigma_min"], sigma_max=p["sigma_max"]
        )
        head, marginal, trace = sgd_train(config, head, marginal)
        files.append((p["out_model"], _json_bytes(head.to_dict())))
        files.append((p["out_marginal"], _json_bytes(marginal.to_dict())))
    else:
        head, trace = sgd_train_mse(config, head)
        files.append((p["out_model"], _json_bytes(head.to_dict())))
    if p["out_trace"] is not None:
        files.append((p["out_trace"], _trace_csv(trace)))
    lines.append(
        f"trained {p['loss']} for {p['iters']} iterations; "
        f"final loss {_fmt(trace.loss[-1])}"
    )
    return CommandResult(files=files, stdout_lines=lines)


def _run_eval(plan: CommandPlan) -> CommandResult:
    ds = dataset_from_csv_path(plan.params["data"])
    head = _load_head(plan.params["model"])
    if head.input_dim != ds.input_dim or head.label_dim != ds.label_dim:
        raise ValidationError("model dimensions do not match the dataset")
    mu, _ = head_forward_batch(head, ds.inputs)
    diff = ds.labels - mu
    sq = np.sum(diff * diff, axis=1)
    risk = float(np.mean(sq))
    se = float(np.std(sq, ddof=1) / math.sqrt(len(ds))) if len(ds) > 1 else float("nan")
    lines = [f"risk {_fmt(risk)} std_error {_fmt(se)} count {len(ds)}"]
    files = []
    if plan.outputs:
        files.append(
            (plan.outputs[0], _csv_bytes(["count", "risk", "std_error"],
                                         [[len(ds), risk, se]]))
        )
    return CommandResult(files=files, stdout_lines=lines)


def _run_infer(plan: CommandPlan) -> CommandResult:
    ds = dataset_from_csv_path(plan.params["data"])
    head = _load_head(plan.params["model"])
    if head.input_dim != ds.input_dim:
        raise ValidationError("model input_dim does not match the dataset")
    mu, sigma = head_forward_batch(head, ds.inputs)
    dy = head.label_dim
    header = [f"yhat_{i + 1}" for i in range(dy)] + [f"sigma_{i + 1}" for i in range(dy)]
    rows = [list(mu[i]) + list(sigma[i]) for i in range(len(ds))]
    return CommandResult(
        files=[(plan.outputs[0], _csv_bytes(header, rows))],
        stdout_lines=[f"wrote {len(ds)} predictions"],
    )


def _run_mi(plan: CommandPlan) -> CommandResult:
    ds = dataset_from_csv_path(plan.params["data"])
    head = _load_head(plan.params["model"])
    if head.input_dim != ds.input_dim or head.label_dim != ds.label_dim:
        raise ValidationError("model dimensions do not match the dataset")
    kind = plan.params["marginal"]
    if kind == "mixture":
        choice = mixture_marginal()
        cap = math.log(len(ds))
    else:
        marginal = _load_marginal(plan.params["marginal_file"])
        if marginal.label_dim != ds.label_dim:
            raise ValidationError("marginal label_dim does not match the dataset")
        choice = parametric_marginal(marginal)
        cap = None
    value = mi_estimate(head, choice, ds)
    lines = [f"mi_estimate {_fmt(value)} nats ({kind} marginal, {len(ds)} rows)"]
    if cap is not None:
        lines.append(f"mixture cap ln(N) = {_fmt(cap)}")
    files = []
    if plan.outputs:
        files.append((
            plan.outputs[0],
            _csv_bytes(
                ["marginal", "rows", "mi_estimate", "ln_n_cap"],
                [[kind, len(ds), value, "" if cap is None else _fmt(cap)]],
            ),
        ))
    return CommandResult(files=files, stdout_lines=lines)


def _run_bounds(plan: CommandPlan) -> CommandResult:
    rows = []
    for n in plan.params["n_values"]:
        for rho in plan.params["rho_values"]:
            label, slope = asymptotic_regime(rho)
            rows.append([
                n, rho,
                mutual_information_exact(n, rho),
                fano_bound_paper(n, rho),
                fano_bound_tight(n, rho),
                label.label,
                slope,
            ])
    data = _csv_bytes(
        ["n", "rho", "mi_exact", "b_paper", "b_tight", "regime", "log_slope"], rows
    )
    return CommandResult(
        files=[(plan.outputs[0], data)],
        stdout_lines=[f"wrote {len(rows)} rows"],
    )


def _run_complexity(plan: CommandPlan) -> CommandResult:
    ci = plan.params["inputs"]
    n_lemma = sample_complexity_lemma42(ci.t, ci.delta, ci.L_tilde, ci.q0_tilde, ci.m)
    n1, n2, n_max = sample_complexity_thm43(ci)
    lines = [
        f"single-block bound N = {n_lemma}",
        f"combined bound N1 = {n1}, N2 = {n2}, N = {n_max}",
    ]
    files = []
    if plan.outputs:
        files.append((
            plan.outputs[0],
            _csv_bytes(["n_lemma42", "n1_thm43", "n2_thm43", "n_thm43"],
                       [[n_lemma, n1, n2, n_max]]),
        ))
    return CommandResult(files=files, stdout_lines=lines)


def _run_convergence(plan: CommandPlan) -> CommandResult:
    p = plan.params
    report = convergence_experiment(
        p["problem"], p["batch_size"], p["eta"], p["epsilon"],
        seed=derive_seed(plan.seed, STREAM_MAIN),
        delta0_samples=p["delta0_samples"],
    )
    trace_rows = [
        [t, report.exact_grad_sq[t], report.measured_dev_sq[t]]
        for t in range(report.iterations)
    ]
    summary = {
        "delta0": report.delta0,
        "alpha": report.alpha,
        "deviation_sum": report.deviation_sum,
        "iterations": report.iterations,
        "avg_exact_grad_sq": report.avg_exact_grad_sq,
        "epsilon": report.epsilon,
        "satisfied": report.satisfied,
    }
    return CommandResult(
        files=[
            (p["out_trace"], _csv_bytes(["t", "exact_grad_sq", "measured_dev_sq"],
                                        trace_rows)),
            (p["out_summary"], _json_bytes(summary)),
        ],
        stdout_lines=[
            f"T = {report.iterations}, average exact ||grad||^2 = "
            f"{_fmt(report.avg_exact_grad_sq)} (epsilon {_fmt(report.epsilon)}, "
            f"satisfied: {report.satisfied})"
        ],
    )


def _run_concentration(plan: CommandPlan) -> CommandResult:
    p = plan.params
    rows = gradient_deviation_experiment(
        p["problem"], p["theta"], p["batch_sizes"], p["trials"], p["epsilon"],
        RngState(derive_seed(plan.seed, STREAM_MAIN)),
    )
    data = _csv_bytes(
        ["N", "mean_dev_sq", "p_below"],
        [[r.batch_size, r.mean_dev_sq, r.p_below] for r in rows],
    )
    return CommandResult(
        files=[(plan.outputs[0], data)],
        stdout_lines=[
            f"N={r.batch_size}: mean_dev_sq={_fmt(r.mean_dev_sq)} "
            f"p_below={_fmt(r.p_below)}" for r in rows
        ],
    )


def _random_check_instance(state: RngState):
    """A small random head/marginal/batch triple for gradient audits."""
    dx = 1 + state.randint_below(3)
    dy = 1 + state.randint_below(2)
    hidden = [2 + state.randint_below(3)]
    head = ConditionalGaussianHead.create(dx, dy, hidden, state=state)
    # Perturb every parameter so the final layer is not at its zero init.
    theta = head.get_params()
    head.set_params(theta + 0.3 * state.normal_array(theta.size))
    marginal = MarginalGaussian.standard(dy)
    marginal.set_params(0.3 * state.normal_array(2 * dy))
    n = 2 + state.randint_below(5)
    xb = state.normal_array(n * dx).reshape(n, dx)
    yb = state.normal_array(n * dy).reshape(n, dy)
    lam = 0.25 + state.uniform()
    return head, marginal, (xb, yb), lam


def _run_gradcheck(plan: CommandPlan) -> CommandResult:
    p = plan.params
    state = RngState(derive_seed(plan.seed, STREAM_MAIN))
    worst = 0.0
    rows = []
    for trial in range(p["trials"]):
        head, marginal, batch, lam = _random_check_instance(state)
        err = finite_difference_check(head, marginal, batch, lam, p["step"])
        rows.append([trial, err])
        worst = max(worst, err)
    lines = [f"max relative error over {p['trials']} trials: {_fmt(worst)}"]
    files = []
    if plan.outputs:
        files.append((plan.outputs[0], _csv_bytes(["trial", "max_rel_error"], rows)))
    if worst > p["tol"]:
        raise InvariantError(
            f"gradient check failed: {worst} exceeds tolerance {p['tol']}"
        )
    return CommandResult(files=files, stdout_lines=lines)


# -- SVG rendering -----------------------------------------------------------

_SVG_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _read_csv_columns(path: Path) -> tuple[list[str], dict[str, list[str]]]:
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln]
    if not lines:
        raise ValidationError(f"{path}: empty CSV")
    header = lines[0].split(",")
    cols: dict[str, list[str]] = {h: [] for h in header}
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(header):
            raise ValidationError(f"{path}: inconsistent row widths")
        for h, c in zip(header, cells):
            cols[h].append(c)
    return header, cols


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def _render_line_svg(
    x_name: str,
    x_vals: list[float],
    series: dict[str, list[float]],
    title: str,
    log_y: bool,
) -> str:
    width, height = 800, 500
    ml, mr, mt, mb = 70, 160, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    def ytrans(vals):
        return [math.log10(v) for v in vals] if log_y else list(vals)

    all_y = [v for vals in series.values() for v in ytrans(vals)]
    x_lo, x_hi = min(x_vals), max(x_vals)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    def sx(v: float) -> float:
        return ml + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v: float) -> float:
        return mt + ph - (v - y_lo) / (y_hi - y_lo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="16">{html.escape(title)}</text>'
        )
    # axes
    parts.append(
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" '
        'stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" '
        'stroke="black" stroke-width="1"/>'
    )
    for tx in _ticks(x_lo, x_hi):
        parts.append(
            f'<line x1="{sx(tx):.2f}" y1="{mt + ph}" x2="{sx(tx):.2f}" '
            f'y2="{mt + ph + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{sx(tx):.2f}" y="{mt + ph + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{tx:.6g}</text>'
        )
    for ty in _ticks(y_lo, y_hi):
        label = f"1e{ty:.3g}" if log_y else f"{ty:.6g}"
        parts.append(
            f'<line x1="{ml - 5}" y1="{sy(ty):.2f}" x2="{ml}" y2="{sy(ty):.2f}" '
            'stroke="black"/>'
        )
        parts.append(
            f'<text x="{ml - 9}" y="{sy(ty) + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{label}</text>'
        )
    parts.append(
        f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{html.escape(x_name)}</text>'
    )
    for idx, (name, vals) in enumerate(series.items()):
        color = _SVG_COLORS[idx % len(_SVG_COLORS)]
        pts = " ".join(
            f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(x_vals, ytrans(vals))
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = mt + 16 + 18 * idx
        lx = ml + pw + 12
        parts.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{lx + 28}" y="{ly}" font-family="sans-serif" '
            f'font-size="12">{html.escape(name)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _run_plot(plan: CommandPlan) -> CommandResult:
    p = plan.params
    header, cols = _read_csv_columns(p["data"])
    for name in [p["x"], *p["y"]]:
        if name not in header:
            raise ValidationError(f"column {name!r} not present in {p['data']}")
    try:
        x_vals = [float(v) for v in cols[p["x"]]]
        series = {name: [float(v) for v in cols[name]] for name in p["y"]}
    except ValueError:
        raise ValidationError("plot columns must be numeric")
    if not x_vals:
        raise ValidationError("plot input has no data rows")
    if p["log_y"] and any(v <= 0.0 for vals in series.values() for v in vals):
        raise ValidationError("--log-y requires strictly positive y values")
    svg = _render_line_svg(p["x"], x_vals, series, p["title"], p["log_y"])
    return CommandResult(
        files=[(plan.outputs[0], svg.encode("utf-8"))],
        stdout_lines=[f"wrote {plan.outputs[0]}"],
    )


_HANDLERS = {
    "gen": _run_gen,
    "train": _run_train,
    "eval": _run_eval,
    "infer": _run_infer,
    "mi": _run_mi,
    "bounds": _run_bounds,
    "complexity": _run_complexity,
    "convergence": _run_convergence,
    "concentration": _run_concentration,
    "gradcheck": _run_gradcheck,
    "plot": _run_plot,
}


def _manifest_config(plan: CommandPlan) -> dict:
    """JSON-safe copy of the resolved parameters."""

    def safe(v):
        if isinstance(v, (str, int, float, bool)) or v is None:
            return v
        if isinstance(v, Path):
            return str(v)
        if isinstance(v, (list, tuple)):
            return [safe(u) for u in v]
        if isinstance(v, dict):
            return {k: safe(u) for k, u in v.items()}
        if hasattr(v, "__dataclass_fields__"):
            return {k: safe(getattr(v, k)) for k in v.__dataclass_fields__}
        return repr(v)

    return {k: safe(v) for k, v in plan.params.items()}


def execute(plan: CommandPlan) -> int:
    """Run a validated plan: compute, write outputs atomically, manifest.

    All computation happens before the first byte is written, so a
    failing run leaves no partial outputs behind.
    """
    started = time.perf_counter()
    handler = _HANDLERS[plan.subcommand]
    result = handler(plan)
    artifacts = {}
    for path, data in result.files:
        _write_atomic(path, data)
        artifacts[str(path)] = _sha256(data)
    if result.files:
        manifest = RunManifest(
            schema_version=MANIFEST_SCHEMA_VERSION,
            command=plan.argv,
            resolved_config=_manifest_config(plan),
            seed=plan.seed,
            artifacts=artifacts,
            wall_time_s=time.perf_counter() - started,
        )
        primary = result.files[0][0]
        _write_atomic(
            Path(str(primary) + ".manifest.json"), manifest.to_json().encode("utf-8")
        )
    for line in result.stdout_lines:
        print(line)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        plan = parse_and_validate(argv)
    except SystemExit as exc:
        # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return execute(plan)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantError as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except MilrError as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
