"""Command-line entry point.

    conformal-efficiency certify --class rand-e --predictor E.pred
    conformal-efficiency construct --name thm1G --predictor E.pred --params thm1.env
    conformal-efficiency calibrate --kind power --delta 0.5 --predictor P.pred
    conformal-efficiency operator --chain t,x --predictor E.pred
    conformal-efficiency experiment laplace-gap --n 100
    conformal-efficiency suite samples/acceptance.cfg

Exit status: 0 when every check passes, 1 when a check or certificate fails,
2 on usage or validation errors, 3 when an enumeration cap is exceeded.
"""
import json
import math
import logging
import argparse
from pathlib import Path
from typing import Literal, Optional

from dotenv import dotenv_values
from pydantic import Field, ValidationError

from .calibration import Calibrator, calibrate_predictor, load_density
from .constructions import (E_INV, ExperimentConstants, conformal_p_from_scores, corollary1_G, corollary2_G, corollary3_G,
                            multiclass_G, remark1_scorer, theorem1_G, theorem2_counterexample, theorem3_E,
                            theorem4_E, theorem5_G)
from .core import KERNELS, Predictor
from .errors import ConformalError, EnumerationCapExceeded
from .harness import ExperimentConfig, load_suite, normalize, registry, render_report, run_scenario, run_suite
from .operators import apply_chain
from .predictor_io import FLAGS, read_predictor, write_predictor
from .search import SearchConfig
from .settings import configure_logging, get_settings
from .verification import (Certificate, certify_exchangeability_e, certify_exchangeability_p,
                           certify_invariant_randomness_e, certify_randomness_e, certify_randomness_e_modular,
                           certify_randomness_p, certify_test_conditional)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3

CERTIFY_CLASSES = ("exch-e", "rand-e", "invariant-rand-e", "exch-p", "rand-p", "test-cond")
CONSTRUCTIONS = ("thm1G", "thm2", "cor1", "multiclass", "thm3E", "thm4E", "thm5G", "cor2G", "cor3G", "conformalp")


class ConstructParams(ExperimentConstants):
    n: Optional[int] = Field(None, ge=1, description="Training length for constructions built from scratch")
    m: int = Field(5, ge=2, description="Number of labels of the modular-sum predictor")
    kernel: Literal["flip", "uniform_other", "uniform_all"] = "flip"
    variant: Literal["exclude_true", "crude", "uniform_all"] = "exclude_true"
    train_invariant: bool = Field(True, description="False selects the square-root multi-class form")
    constant: Optional[float] = Field(None, gt=0, description="Constant of the Theorem 1 G")


def read_params(path: Optional[Path]) -> dict:
    """key = value pairs from a parameter file, with empty values dropped."""
    if path is None:
        return {}
    if not path.exists():
        raise FileNotFoundError(f"Parameter file not found: {path}")
    return {k.lower(): v for k, v in dotenv_values(path).items() if v not in (None, "")}


def _out_dir(args: argparse.Namespace) -> Path:
    return Path(args.out or get_settings().out_dir)


def _write_json(data: dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(normalize(data), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def _require_predictor(args: argparse.Namespace) -> Predictor:
    if args.predictor is None:
        raise ValueError(f"'{args.command}' needs --predictor FILE.")
    return read_predictor(args.predictor)


# ------------------ Commands ------------------

def cmd_certify(args: argparse.Namespace) -> int:
    pred = _require_predictor(args)
    search = SearchConfig(**read_params(args.search))
    if args.seed is not None:
        search = search.model_copy(update={"seed": args.seed})
    target = args.target_class
    if target == "exch-e":
        cert = certify_exchangeability_e(pred)
    elif target == "rand-e":
        if pred.params.get("shape") == "modular_sum":
            cert = certify_randomness_e_modular(pred, search)
        else:
            cert = certify_randomness_e(pred, search)
    elif target == "invariant-rand-e":
        cert = certify_invariant_randomness_e(pred, search)
    elif target == "exch-p":
        cert = certify_exchangeability_p(pred)
    elif target == "rand-p":
        cert = certify_randomness_p(pred, search=search)
    else:
        cert = certify_test_conditional(pred)
    _write_json(cert.model_dump(), _out_dir(args) / f"{pred.name}.{target}.json")
    print(json.dumps(normalize(cert.model_dump()), sort_keys=True, indent=2))
    return EXIT_OK if cert.passed else EXIT_FAILED


def build_construction(name: str, params: ConstructParams, pred: Optional[Predictor]) -> tuple[Predictor | None, dict]:
    """The named construction, as (predictor to write, extra JSON payload)."""
    def needs_input(flavor: str) -> Predictor:
        if pred is None:
            raise ValueError(f"Construction '{name}' needs --predictor FILE with a {flavor}-predictor.")
        return pred

    def kernel():
        return KERNELS[params.kernel](pred.space)

    if name == "thm1G":
        return theorem1_G(needs_input("e"), kernel(), params.constant or E_INV), {}
    if name == "thm2":
        if params.n is None:
            raise ValueError("Construction 'thm2' needs n in --params.")
        result = theorem2_counterexample(params.n, params.constant or params.c_refute)
        return None, result.model_dump()
    if name == "cor1":
        P_prime, G = corollary1_G(needs_input("p"), kernel(), params.delta)
        return G, {"p_prime": P_prime}
    if name == "multiclass":
        return multiclass_G(needs_input("e"), params.variant, params.train_invariant), {}
    if name == "thm3E":
        if params.n is None:
            raise ValueError("Construction 'thm3E' needs n in --params.")
        return theorem3_E(params.n, params.k, params.a), {}
    if name == "thm4E":
        if params.n is None:
            raise ValueError("Construction 'thm4E' needs n in --params.")
        return theorem4_E(params.n, params.m, params.c), {}
    if name == "thm5G":
        return theorem5_G(needs_input("e"), kernel()), {}
    if name == "cor2G":
        return corollary2_G(needs_input("e"), kernel()), {}
    if name == "cor3G":
        P_prime, G = corollary3_G(needs_input("p"), kernel(), params.delta)
        return G, {"p_prime": P_prime}
    P0 = needs_input("p")
    return conformal_p_from_scores(P0.space, P0.n, remark1_scorer(P0), name=f"conformal({P0.name})"), {}


def table_size(pred: Predictor) -> int:
    """Number of sequences a predictor file for pred would enumerate."""
    alphabet = pred.space.num_labels if pred.label_only else pred.space.size
    return alphabet ** pred.arity


def certify_construction(pred: Predictor, search: SearchConfig) -> Certificate:
    if pred.params.get("shape") == "modular_sum":
        return certify_randomness_e_modular(pred, search)
    if pred.flavor == "p":
        return certify_randomness_p(pred, search=search)
    return certify_randomness_e(pred, search)


def cmd_construct(args: argparse.Namespace) -> int:
    params = ConstructParams(**read_params(args.params))
    pred = read_predictor(args.predictor) if args.predictor else None
    out = _out_dir(args)
    built, extra = build_construction(args.name, params, pred)
    status = EXIT_OK
    if built is not None:
        if table_size(built) <= get_settings().table_cap:
            write_predictor(built, out / f"{args.name}.pred")
        else:
            # Too many sequences for a table file: record the parameters and a certificate instead.
            digits = int(math.log10(table_size(built)))
            logger.warning(f"{args.name} has about 10^{digits} sequences, above the table cap; "
                           f"writing {args.name}.json instead of a predictor file")
            search = SearchConfig(seed=args.seed or 0)
            cert = certify_construction(built, search)
            summary = {
                "construction": args.name,
                "params": params.model_dump(),
                "predictor": {"name": built.name, "n": built.n, "flavor": built.flavor,
                              "labels": list(built.space.labels), "params": built.params,
                              **{flag: getattr(built, flag) for flag in FLAGS}},
                "certificate": cert.model_dump(),
            }
            _write_json(summary, out / f"{args.name}.json")
            status = EXIT_OK if cert.passed else EXIT_FAILED
    for key, value in extra.items():
        if isinstance(value, Predictor):
            write_predictor(value, out / f"{args.name}.{key}.pred")
    if args.name == "thm2":
        _write_json(extra, out / "thm2.json")
        print(json.dumps(normalize(extra), sort_keys=True, indent=2))
        return EXIT_OK if extra["certificate"]["verdict"] != "indeterminate" else EXIT_FAILED
    return status


def cmd_calibrate(args: argparse.Namespace) -> int:
    pred = _require_predictor(args)
    if args.kind == "power":
        if args.delta is None:
            raise ValueError("--kind power needs --delta.")
        calibrator = Calibrator.power(args.delta)
    elif args.kind == "density":
        if args.density is None:
            raise ValueError("--kind density needs --density FILE.")
        calibrator = load_density(args.density)
    else:
        calibrator = Calibrator.e_to_p()
    write_predictor(calibrate_predictor(calibrator, pred), _out_dir(args) / f"{pred.name}.{args.kind}.pred")
    return EXIT_OK


def cmd_operator(args: argparse.Namespace) -> int:
    pred = _require_predictor(args)
    result = apply_chain(pred, args.chain)
    suffix = args.chain.replace(",", "")
    write_predictor(result.predictor, _out_dir(args) / f"{pred.name}.{suffix}.pred")
    logger.info(f"Applied {args.chain} to {pred.name} via {result.method}, {result.cost} evaluations per value")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    fields = read_params(args.params)
    constants = {k: fields.pop(k) for k in list(fields) if k in ExperimentConstants.model_fields}
    search = {k: fields.pop(k) for k in list(fields) if k in SearchConfig.model_fields and k != "seed"}
    for key in ("n", "trials", "num_labels"):
        if getattr(args, key) is not None:
            fields[key] = getattr(args, key)
    cfg = ExperimentConfig(scenario=args.scenario, seed=args.seed, out_dir=str(_out_dir(args)), format=args.format,
                           timing=args.timing, constants=ExperimentConstants(**constants),
                           search=SearchConfig(**search), **fields)
    report = run_scenario(cfg)
    print(render_report(report, cfg.format, cfg.timing), end="")
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_suite(args: argparse.Namespace) -> int:
    configs, parallel = load_suite(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["out_dir"] = args.out
    configs = [ExperimentConfig(**{**cfg.model_dump(), **overrides}) if overrides else cfg for cfg in configs]
    reports = run_suite(configs, parallel=parallel or args.parallel)
    failed = [cfg.label or cfg.scenario for cfg, report in zip(configs, reports) if not report.passed]
    if failed:
        logger.warning(f"Failed scenarios: {', '.join(failed)}")
    logger.info(f"Suite finished: {len(reports) - len(failed)}/{len(reports)} scenarios passed")
    return EXIT_FAILED if failed else EXIT_OK


COMMANDS = {
    "certify": cmd_certify,
    "construct": cmd_construct,
    "calibrate": cmd_calibrate,
    "operator": cmd_operator,
    "experiment": cmd_experiment,
    "suite": cmd_suite,
}


# ------------------ Parser ------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Master seed for stochastic steps")
    common.add_argument("--out", type=str, default=None, help="Output directory (default: CONFORMAL_OUT_DIR)")
    common.add_argument("--format", choices=("json", "csv"), default=None,
                        help="Report echoed to stdout by experiment (JSON and CSV files are both written)")
    common.add_argument("--log-level", default=None, help="Override CONFORMAL_LOG_LEVEL")

    parser = argparse.ArgumentParser(prog="conformal-efficiency",
                                     description="Conformal and randomness predictors: certification and experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", parents=[common], help="Certify a predictor file against a validity class")
    p.add_argument("--class", dest="target_class", choices=CERTIFY_CLASSES, required=True)
    p.add_argument("--predictor", type=Path, required=True)
    p.add_argument("--search", type=Path, default=None, help="key = value file of search settings")

    p = sub.add_parser("construct", parents=[common], help="Build a named construction")
    p.add_argument("--name", choices=CONSTRUCTIONS, required=True)
    p.add_argument("--params", type=Path, default=None, help="key = value file of construction parameters")
    p.add_argument("--predictor", type=Path, default=None, help="Input predictor file")

    p = sub.add_parser("calibrate", parents=[common], help="Apply a calibrator to a predictor file")
    p.add_argument("--kind", choices=("power", "density", "e2p"), required=True)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--density", type=Path, default=None, help="File of non-increasing density bin values")
    p.add_argument("--predictor", type=Path, required=True)

    p = sub.add_parser("operator", parents=[common], help="Apply an operator chain such as t,x")
    p.add_argument("--chain", required=True)
    p.add_argument("--predictor", type=Path, required=True)

    p = sub.add_parser("experiment", parents=[common], help="Run one scenario")
    p.add_argument("scenario", help="Scenario name; see 'experiment --list'", nargs="?")
    p.add_argument("--list", action="store_true", help="List the registered scenarios and exit")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--num-labels", dest="num_labels", type=int, default=None)
    p.add_argument("--params", type=Path, default=None, help="key = value file of constants and search settings")
    p.add_argument("--timing", action="store_true", help="Include wall-clock time in the report")

    p = sub.add_parser("suite", parents=[common], help="Run every scenario of a suite file")
    p.add_argument("config", type=Path)
    p.add_argument("--parallel", action="store_true", help="Run scenarios in a thread pool")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    if args.command == "experiment":
        if args.list:
            for name, spec in sorted(registry().items()):
                print(f"{name:24s} {'stochastic ' if spec.stochastic else ''}{spec.description}")
            return EXIT_OK
        if args.scenario is None:
            parser.error("experiment needs a scenario name (or --list).")
        args.format = args.format or "json"

    try:
        return COMMANDS[args.command](args)
    except EnumerationCapExceeded as exc:
        logger.error(str(exc))
        return EXIT_CAP
    except (ValidationError, ConformalError, ValueError, FileNotFoundError) as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_USAGE
    except Exception:
        logger.exception(f"Unexpected error in '{args.command}'")
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
