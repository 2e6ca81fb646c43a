"""Command line front end: ``treatid {simulate,audit,estimate,sweep}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import io as tio
from .estimation import (
    DEFAULT_LAMBDA_THRESHOLD,
    DEFAULT_OVERLAP_DELTA,
    NotIdentifiedError,
    QuantileBins,
    audit,
    estimate_asf,
)
from .simulation import PRESETS, DgpSpec, failure_sweep, simulate, spec_metadata, tabular_dgp

log = logging.getLogger("treatid")

EXIT_OK, EXIT_INPUT, EXIT_NOT_IDENTIFIED = 0, 1, 2
SUBCOMMANDS = ("simulate", "audit", "estimate", "sweep")


@dataclass
class RunConfig:
    subcommand: str
    input: str | None = None
    output: str | None = None
    metadata: str | None = None
    mode: str = "exclusive"
    treatments: int | None = None
    bins: int | None = None
    overlap_delta: float = DEFAULT_OVERLAP_DELTA
    lambda_threshold: float = DEFAULT_LAMBDA_THRESHOLD
    min_cell_size: int | None = None
    seed: int | None = None
    strict: bool = False
    preset: str = "heterogeneous"
    dgp: str | None = None
    n: int | None = None
    noise_scale: float | None = None
    sums: str = "0.5,0.9,0.99,1.0"
    schema: str = "x"

    def validate(self) -> None:
        def bad(msg):
            raise tio.InputError("BAD_CONFIG", msg)

        if self.subcommand not in SUBCOMMANDS:
            bad(f"unknown subcommand {self.subcommand!r}")
        if self.subcommand in ("audit", "estimate") and not self.input:
            bad(f"{self.subcommand} needs --input")
        if self.subcommand in ("simulate", "sweep") and not self.output:
            bad(f"{self.subcommand} needs --output")
        if self.mode not in ("exclusive", "general"):
            bad("--mode must be exclusive or general")
        if self.bins is not None and self.bins < 2:
            bad("--bins must be at least 2")
        if not 0 <= self.overlap_delta < 0.5:
            bad("--overlap-delta must lie in [0, 0.5)")
        if not 0 <= self.lambda_threshold < 1:
            bad("--lambda-threshold must lie in [0, 1)")
        if self.min_cell_size is not None and self.min_cell_size < 1:
            bad("--min-cell-size must be positive")
        if self.n is not None and self.n < 1:
            bad("--n must be positive")
        if self.noise_scale is not None and self.noise_scale < 0:
            bad("--noise-scale must be nonnegative")
        if self.preset not in PRESETS:
            bad(f"--preset must be one of {sorted(PRESETS)}")
        if self.schema not in ("x", "t"):
            bad("--schema must be x or t")

    @property
    def scheme(self):
        return QuantileBins(self.bins) if self.bins is not None else "discrete"


def _sums(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise tio.InputError("BAD_CONFIG", f"--sums must be comma separated numbers, got {text!r}") from None


def _load_dgp(cfg: RunConfig) -> DgpSpec:
    overrides = {k: v for k, v in (("n", cfg.n), ("seed", cfg.seed), ("noise_scale", cfg.noise_scale)) if v is not None}
    if cfg.dgp is None:
        return PRESETS[cfg.preset](**overrides)
    try:
        doc = json.loads(Path(cfg.dgp).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise tio.InputError("BAD_DGP", f"cannot read {cfg.dgp}: {exc}") from None
    missing = {"weights", "gps", "coef_mean"} - set(doc)
    if missing:
        raise tio.InputError("BAD_DGP", f"{cfg.dgp} lacks keys {sorted(missing)}")
    params = {"n": doc.get("n", 10_000), "seed": doc.get("seed", 0), "noise_scale": doc.get("noise_scale", 1.0)}
    params.update(overrides)
    try:
        return tabular_dgp(doc["weights"], doc["gps"], doc["coef_mean"], name=doc.get("name", "tabular"), **params)
    except ValueError as exc:
        raise tio.InputError("BAD_DGP", str(exc)) from None


def _fmt(values) -> str:
    return ", ".join(f"{v:.6g}" for v in values)


def _run_simulate(cfg: RunConfig) -> int:
    spec = _load_dgp(cfg)
    try:
        data, ate = simulate(spec)
    except ValueError as exc:
        raise tio.InputError("BAD_DGP", str(exc)) from None
    out = Path(cfg.output)
    meta_path = Path(cfg.metadata) if cfg.metadata else out.with_suffix(".meta.json")
    tio.write_csv(data, out, schema=cfg.schema)
    tio.write_json(spec_metadata(spec, ate), meta_path)
    print(f"simulated {data.n} rows (T={data.T}) -> {out}; true ATE: {_fmt(ate)}")
    return EXIT_OK


def _load(cfg: RunConfig):
    return tio.load_csv(cfg.input, mode=cfg.mode, treatments=cfg.treatments)


def _run_audit(cfg: RunConfig) -> int:
    data = _load(cfg)
    try:
        report = audit(data, cfg.scheme, cfg.overlap_delta, cfg.min_cell_size, cfg.lambda_threshold)
    except ValueError as exc:
        raise tio.InputError("BAD_SCHEME", str(exc)) from None
    if cfg.output:
        tio.write_json(tio.report_to_dict(report), cfg.output)
    label = "IDENTIFIED" if report.identified else "NOT IDENTIFIED"
    print(f"verdict: {label} ({len(report.failing_cells)} of {len(report.cells)} cells failing)")
    return EXIT_OK


def _run_estimate(cfg: RunConfig) -> int:
    data = _load(cfg)
    try:
        est = estimate_asf(
            data, cfg.scheme, cfg.lambda_threshold, cfg.min_cell_size, cfg.overlap_delta, cfg.strict
        )
    except NotIdentifiedError as exc:
        if cfg.strict:
            raise
        if cfg.output:
            tio.write_json(
                {
                    "status": exc.code,
                    "eq_mean": None,
                    "ate": None,
                    "trimmed_mass": 1.0,
                    "trimmed": [{"cell_id": c, "reason": r.value} for c, r in exc.trimmed],
                },
                cfg.output,
            )
        print(f"WARNING {exc.code}: no ATE estimate", file=sys.stderr)
        return EXIT_OK
    except ValueError as exc:
        raise tio.InputError("BAD_SCHEME", str(exc)) from None
    for w in est.warnings:
        log.warning(w)
    if cfg.output:
        tio.write_json(tio.estimate_to_dict(est), cfg.output)
    print(f"ATE: {_fmt(est.ate)} (trimmed mass {est.trimmed_mass:.4g})")
    return EXIT_OK


def _run_sweep(cfg: RunConfig) -> int:
    spec = _load_dgp(cfg)
    try:
        points = failure_sweep(
            spec,
            _sums(cfg.sums),
            cfg.scheme,
            cfg.overlap_delta,
            cfg.lambda_threshold,
            cfg.min_cell_size,
        )
    except ValueError as exc:
        raise tio.InputError("BAD_CONFIG", str(exc)) from None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sum", "verdict", "ate_error"])
    for p in points:
        w.writerow([repr(p.gps_sum), p.verdict, "" if p.ate_error is None else f"{p.ate_error:.12g}"])
        print(f"sum={p.gps_sum:g}: {p.verdict}, ate_error={'-' if p.ate_error is None else f'{p.ate_error:.4g}'}")
    tio.atomic_write(cfg.output, buf.getvalue())
    return EXIT_OK


_HANDLERS = {
    "simulate": _run_simulate,
    "audit": _run_audit,
    "estimate": _run_estimate,
    "sweep": _run_sweep,
}


def run(cfg: RunConfig) -> int:
    """Execute one subcommand; returns the process exit code."""
    try:
        cfg.validate()
        return _HANDLERS[cfg.subcommand](cfg)
    except tio.InputError as exc:
        print(f"treatid: error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NotIdentifiedError as exc:
        print(f"treatid: error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_NOT_IDENTIFIED
    except ValueError as exc:
        code = str(exc).split(":", 1)[0] if str(exc).split(":", 1)[0].isupper() else "BAD_INPUT"
        print(f"treatid: error[{code}]: {exc}", file=sys.stderr)
        return EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treatid",
        description="Identification checks and ATE estimation for multi-treatment "
        "heterogeneous-coefficient models with a control variable.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    # every option defaults to SUPPRESS so that only flags actually given
    # override the config file
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with option values (flags win)")
    common.add_argument("--emit-config", action="store_true", help="print the resolved configuration and exit")
    common.add_argument("--output", "-o")
    common.add_argument("--seed", type=int)
    common.add_argument("--bins", type=int, help="quantile bins per control coordinate (continuous controls)")
    common.add_argument("--overlap-delta", type=float)
    common.add_argument("--lambda-threshold", type=float)
    common.add_argument("--min-cell-size", type=int)

    data_opts = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    data_opts.add_argument("--input", "-i")
    data_opts.add_argument("--mode", choices=("exclusive", "general"))
    data_opts.add_argument("--treatments", type=int, help="T for the 't' CSV schema (default: max t)")

    dgp_opts = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    dgp_opts.add_argument("--preset", choices=sorted(PRESETS))
    dgp_opts.add_argument("--dgp", help="JSON file with weights, gps and coef_mean tables")
    dgp_opts.add_argument("--n", type=int)
    dgp_opts.add_argument("--noise-scale", type=float)

    p = sub.add_parser("simulate", parents=[common, dgp_opts], help="write a synthetic dataset")
    p.add_argument("--metadata", default=argparse.SUPPRESS, help="metadata JSON path")
    p.add_argument("--schema", choices=("x", "t"), default=argparse.SUPPRESS)
    sub.add_parser("audit", parents=[common, data_opts], help="per-cell identification report")
    p = sub.add_parser("estimate", parents=[common, data_opts], help="estimate ATEs")
    p.add_argument("--strict", action="store_true", default=argparse.SUPPRESS)
    p = sub.add_parser("sweep", parents=[common, dgp_opts], help="push propensity sums toward one")
    p.add_argument("--sums", default=argparse.SUPPRESS, help="comma separated, ascending")
    return parser


def resolve_config(argv=None) -> tuple[RunConfig, bool]:
    args = vars(build_parser().parse_args(argv))
    subcommand = args.pop("subcommand")
    emit = args.pop("emit_config", False)
    values: dict = {}
    config_path = args.pop("config", None)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise tio.InputError("BAD_CONFIG", f"cannot read {config_path}: {exc}") from None
        known = {f.name for f in fields(RunConfig)} - {"subcommand"}
        unknown = set(doc) - known
        if unknown:
            raise tio.InputError("BAD_CONFIG", f"unknown config keys {sorted(unknown)}")
        values.update(doc)
    values.update(args)
    return RunConfig(subcommand=subcommand, **values), emit


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="treatid: %(levelname)s: %(message)s")
    try:
        cfg, emit = resolve_config(argv)
    except tio.InputError as exc:
        print(f"treatid: error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if emit:
        print(json.dumps(asdict(cfg), indent=2))
        return EXIT_OK
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
