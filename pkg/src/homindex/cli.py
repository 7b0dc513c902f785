"""Command line: scenario ingestion, dispatch, deterministic artifacts.

Every run reads one scenario (a file path or a builtin name), executes
one subcommand and writes a single structured ``report.json`` into the
output directory; ``--format csv`` additionally emits CSV artifacts.
Reports embed the fully materialized scenario, so a report is enough
to rerun the analysis, and their bytes depend only on the scenario and
the seed - not on ``--threads`` or the output location.

Subcommands: spectrum, projectors, index, class, certify, solve,
realize.  Exit codes: 0 success, 2 certification/hypothesis failure,
3 input error, 4 numeric indeterminacy.

CSV layouts (column order is a bit-exact contract for plotting):

- ``spectrum_lamNNN.csv``: gamma, verdict
- ``projectors_lamNNN.csv``: n, p_0_0 ... p_{d-1}_{d-1} (row-major)
- ``index.csv``: lambda, index, dim_ker, dim_coker, rank_plus,
  rank_minus, consistent
- ``bundle_plus.csv`` / ``bundle_minus.csv``: sample, param_*,
  frame_<row>_<column> (row-major)
- ``solution_NNN.csv``: param_* (omitted without a loop), n,
  phi_0 ... phi_{d-1}
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from . import __version__
from .bifurcation import CertifyOptions, certify_bifurcation, localize_bifurcations
from .bundle import KOClassDesk, bundle_csv_rows, index_bundle_pair
from .dichotomy import build_projector_family, dichotomy_spectrum, verify_ed
from .errors import (
    CertificationError,
    HomindexError,
    InputError,
    NumericError,
    SamplingError,
)
from .fredholm import FiniteWindowSequence, green_solve, kernel_cokernel
from .scenario import Scenario, builtin_names

__all__ = ["run", "main"]

REPORT_NAME = "report.json"


def _num(x) -> float | None:
    """Floats for the report; non-finite values become null."""
    x = float(x)
    return x if math.isfinite(x) else None


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _render_report(report: dict) -> bytes:
    return (json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n").encode()


def _render_scenario(data: dict) -> bytes:
    return (json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n").encode()


@dataclass
class CommandOutcome:
    """What one subcommand produced, before any file is written."""

    results: dict
    warnings: list = dataclass_field(default_factory=list)
    exit_code: int = 0
    csv_files: list = dataclass_field(default_factory=list)  # (name, header, rows)
    extra_files: list = dataclass_field(default_factory=list)  # (name, bytes)


def _sequence_dump(phi: FiniteWindowSequence) -> dict:
    return {
        "window": [int(phi.window[0]), int(phi.window[1])],
        "sup": _num(phi.norm_inf),
        "decays_left": bool(phi.decays_left),
        "decays_right": bool(phi.decays_right),
        "values": [[_num(x) for x in row] for row in np.asarray(phi.values)],
    }


def _solution_csv(name: str, loop, lam: int, phi: FiniteWindowSequence):
    coords = [float(x) for x in loop.samples[lam]] if loop is not None else []
    header = [f"param_{c}" for c in range(len(coords))] + ["n"] + [
        f"phi_{j}" for j in range(phi.dim)
    ]
    rows = []
    lo = phi.window[0]
    for i, row in enumerate(np.asarray(phi.values)):
        rows.append(coords + [lo + i] + [float(x) for x in row])
    return (name, header, rows)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_spectrum(scenario: Scenario, threads: int) -> CommandOutcome:
    field = scenario.build_field()
    opts, tol = scenario.options, scenario.tolerances
    per, warnings, csvs = [], [], []
    for lam in opts["lambdas"]:
        res = dichotomy_spectrum(
            field,
            lam,
            gamma_min=opts["gamma_min"],
            gamma_max=opts["gamma_max"],
            grid=opts["grid"],
            horizon=scenario.horizon,
            zero_margin=tol["zero_margin"],
            gap_ratio=tol["gap_ratio"],
        )
        per.append(
            {
                "lambda": lam,
                "intervals": [[_num(a), _num(b)] for a, b in res.intervals],
                "admits_ed": bool(res.admits_ed),
                "n_probes": int(res.n_probes),
                "grid": [_num(g) for g in res.grid],
                "verdicts": list(res.verdicts),
            }
        )
        if "indeterminate" in res.verdicts:
            warnings.append(
                f"lambda {lam}: some spectrum gridpoints were numerically indeterminate"
            )
        csvs.append(
            (
                f"spectrum_lam{lam:03d}.csv",
                ["gamma", "verdict"],
                [[float(g), v] for g, v in zip(res.grid, res.verdicts)],
            )
        )
    return CommandOutcome(results={"per_lambda": per}, warnings=warnings, csv_files=csvs)


def _family_kwargs(scenario: Scenario) -> dict:
    tol = scenario.tolerances
    return {
        "horizon": scenario.horizon,
        "tau_proj": tol["tau_proj"],
        "tau_inv": tol["tau_inv"],
        "sigma_reg": tol["sigma_reg"],
        "zero_margin": tol["zero_margin"],
        "gap_ratio": tol["gap_ratio"],
    }


def _cmd_projectors(scenario: Scenario, threads: int) -> CommandOutcome:
    field = scenario.build_field()
    opts = scenario.options
    per, csvs = [], []
    for lam in opts["lambdas"]:
        fam = build_projector_family(
            field,
            lam,
            opts["side"],
            opts["anchor"],
            length=opts["length"],
            **_family_kwargs(scenario),
        )
        wit = verify_ed(field, lam, fam)
        d = field.dim
        per.append(
            {
                "lambda": lam,
                "side": fam.side,
                "anchor": int(fam.anchor),
                "rank": int(fam.rank),
                "k_const": _num(wit.k_const),
                "alpha": _num(wit.alpha),
                "checked_pairs": int(wit.checked_pairs),
                "green_bound": _num(wit.green_bound()),
                "times": [int(t) for t in fam.times],
                "projectors": [[_num(x) for x in p.ravel()] for p in fam.projectors],
            }
        )
        header = ["n"] + [f"p_{a}_{b}" for a in range(d) for b in range(d)]
        rows = [
            [int(t)] + [float(x) for x in p.ravel()]
            for t, p in zip(fam.times, fam.projectors)
        ]
        csvs.append((f"projectors_lam{lam:03d}.csv", header, rows))
    return CommandOutcome(results={"per_lambda": per}, csv_files=csvs)


def _cmd_index(scenario: Scenario, threads: int) -> CommandOutcome:
    field = scenario.build_field()
    opts, tol = scenario.options, scenario.tolerances
    lo, hi = opts["index_window"]
    if not (lo < 0 < hi):
        raise InputError("options.index_window must straddle time zero")
    per, csvs = [], []
    rows = []
    for lam in opts["lambdas"]:
        fam_plus = build_projector_family(
            field, lam, "plus", 0, length=hi, **_family_kwargs(scenario)
        )
        fam_minus = build_projector_family(
            field, lam, "minus", 0, length=-lo, **_family_kwargs(scenario)
        )
        wit_plus = verify_ed(field, lam, fam_plus)
        wit_minus = verify_ed(field, lam, fam_minus)
        rep = kernel_cokernel(
            field,
            lam,
            (lo, hi),
            (wit_plus, wit_minus),
            gap_ratio=tol["gap_ratio"],
            decay_tol=tol["decay_tol"],
        )
        per.append(
            {
                "lambda": lam,
                "index": int(rep.index),
                "dim_ker": int(rep.dim_ker),
                "dim_coker": int(rep.dim_coker),
                "rank_plus": int(rep.rank_plus),
                "rank_minus": int(rep.rank_minus),
                "consistent": bool(rep.consistent),
                "dim_ker_truncated": int(rep.dim_ker_truncated),
            }
        )
        rows.append(
            [
                lam,
                int(rep.index),
                int(rep.dim_ker),
                int(rep.dim_coker),
                int(rep.rank_plus),
                int(rep.rank_minus),
                bool(rep.consistent),
            ]
        )
    csvs.append(
        (
            "index.csv",
            ["lambda", "index", "dim_ker", "dim_coker", "rank_plus", "rank_minus", "consistent"],
            rows,
        )
    )
    warnings = [
        f"lambda {p['lambda']}: geometric and truncated kernel counts disagree"
        for p in per
        if not p["consistent"]
    ]
    return CommandOutcome(results={"per_lambda": per}, warnings=warnings, csv_files=csvs)


def _class_dump(cls: KOClassDesk) -> dict:
    return {
        "virtual_rank": int(cls.virtual_rank),
        "delta_w1": int(cls.delta_w1),
        "provenance": list(cls.provenance),
    }


def _cmd_class(scenario: Scenario, threads: int) -> CommandOutcome:
    field = scenario.build_field()
    opts = scenario.options
    top, bottom = index_bundle_pair(
        field,
        opts["anchor_plus"],
        opts["anchor_minus"],
        horizon=scenario.horizon,
        threads=threads,
    )
    cls = KOClassDesk.of_pair(top, bottom)
    results = {
        "index_class": _class_dump(cls),
        "rank_plus": int(top.rank),
        "rank_minus": int(bottom.rank),
        "anchor_plus": opts["anchor_plus"],
        "anchor_minus": opts["anchor_minus"],
    }
    csvs = []
    for name, bundle in (("bundle_plus.csv", top), ("bundle_minus.csv", bottom)):
        header, rows = bundle_csv_rows(bundle)
        csvs.append((name, header, rows))
    return CommandOutcome(results=results, csv_files=csvs)


def _cmd_certify(scenario: Scenario, threads: int) -> CommandOutcome:
    f = scenario.build_nonlinear()
    opts = scenario.options
    cert = certify_bifurcation(
        f,
        CertifyOptions(
            anchor_plus=opts["anchor_plus"],
            anchor_minus=opts["anchor_minus"],
            horizon=scenario.horizon,
            f3_window=tuple(opts["f3_window"]),
            threads=threads,
            manifold_dim=opts["manifold_dim"],
        ),
    )
    results = {
        "verdict": cert.verdict,
        "f0_ok": cert.f0_ok,
        "f1_ok": cert.f1_ok,
        "f2_ok": cert.f2_ok,
        "f3_ok": cert.f3_ok,
        "lambda0": cert.lambda0,
        "anchor_plus": cert.anchor_plus,
        "anchor_minus": cert.anchor_minus,
        "rank_plus": cert.rank_plus,
        "rank_minus": cert.rank_minus,
        "index_class": _class_dump(cert.index_class) if cert.index_class else None,
        "f3_verdicts": list(cert.f3_verdicts),
        "evidence": [[k, v] for k, v in cert.evidence],
    }
    warnings = list(cert.warnings)
    csvs = []
    if opts["localize"]:
        if cert.verdict == "bifurcation_certified":
            found = localize_bifurcations(
                f,
                cert,
                grid_refinement=opts["grid_refinement"],
                window=tuple(opts["localize_window"]),
                horizon=scenario.horizon,
                decay_tol=scenario.tolerances["decay_tol"],
                threads=threads,
            )
            loop = f.refiner(opts["grid_refinement"]).loop if opts[
                "grid_refinement"
            ] > 1 else f.loop
            results["candidates"] = [
                {"lambda": lam, **_sequence_dump(phi)} for lam, phi in found
            ]
            for i, (lam, phi) in enumerate(found):
                csvs.append(_solution_csv(f"solution_{i:03d}.csv", loop, lam, phi))
        else:
            results["candidates"] = []
            warnings.append(f"localization skipped: verdict is {cert.verdict}")
    exit_code = 0 if cert.verdict in ("bifurcation_certified", "obstruction_vanishes") else 2
    return CommandOutcome(
        results=results, warnings=warnings, exit_code=exit_code, csv_files=csvs
    )


def _solve_forcings(scenario: Scenario, window: tuple[int, int], dim: int):
    """Forcing sequences named in the scenario: explicit rows or seeded noise."""
    spec = scenario.options["solve"]["rhs"]
    lo, hi = window
    width = hi - lo + 1
    out = []
    if isinstance(spec, list):
        for k, entry in enumerate(spec):
            if not isinstance(entry, dict) or "at" not in entry or "value" not in entry:
                raise InputError(
                    f"scenario field 'options.solve.rhs[{k}]': expected "
                    "{'at': time, 'value': vector}"
                )
            at = int(entry["at"])
            if not (lo <= at <= hi):
                raise InputError(
                    f"scenario field 'options.solve.rhs[{k}].at': time {at} outside "
                    f"the forcing window [{lo}, {hi}]"
                )
            value = np.asarray(entry["value"], dtype=float).reshape(-1)
            if value.shape != (dim,):
                raise InputError(
                    f"scenario field 'options.solve.rhs[{k}].value': expected a "
                    f"vector of length {dim}"
                )
            vals = np.zeros((width, dim))
            vals[at - lo] = value
            out.append((f"impulse_at_{at}", FiniteWindowSequence.tabulate(window, vals)))
    elif isinstance(spec, dict) and spec.get("kind") == "seeded_random":
        count = int(spec.get("count", 3))
        if count < 1:
            raise InputError("scenario field 'options.solve.rhs.count': needs at least 1")
        rng = np.random.default_rng(scenario.seed)
        for k in range(count):
            vals = rng.standard_normal((width, dim))
            out.append((f"seeded_{k:03d}", FiniteWindowSequence.tabulate(window, vals)))
    else:
        raise InputError(
            "scenario field 'options.solve.rhs': expected a list of impulses or "
            "{'kind': 'seeded_random', 'count': k}"
        )
    return out


def _cmd_solve(scenario: Scenario, threads: int) -> CommandOutcome:
    field = scenario.build_field()
    tol = scenario.tolerances
    sopts = scenario.options["solve"]
    side, anchor, length = sopts["side"], sopts["anchor"], sopts["length"]
    lam = sopts["lambda"]
    fam = build_projector_family(
        field, lam, side, anchor, length=length, **_family_kwargs(scenario)
    )
    if side == "plus":
        forcing_window = (anchor, anchor + length - 1)
    else:
        forcing_window = (anchor - length, anchor - 1)
    solutions, csvs = [], []
    for i, (label, psi) in enumerate(_solve_forcings(scenario, forcing_window, field.dim)):
        phi = green_solve(
            field,
            lam,
            side,
            anchor,
            psi,
            fam,
            solve_tol=tol["solve_tol"],
            decay_tol=tol["decay_tol"],
        )
        lo, hi = phi.window
        defect = 0.0
        for j, n in enumerate(range(lo, hi)):
            step = phi.values[j + 1] - field.matrix(lam, n) @ phi.values[j]
            defect = max(defect, float(np.abs(step - psi.value_at(n)).max()))
        solutions.append({"label": label, "defect_sup": _num(defect), **_sequence_dump(phi)})
        csvs.append(_solution_csv(f"solution_{i:03d}.csv", field.loop, lam, phi))
    results = {
        "lambda": lam,
        "side": side,
        "anchor": anchor,
        "rank": int(fam.rank),
        "solutions": solutions,
    }
    return CommandOutcome(results=results, csv_files=csvs)


def _cmd_realize(scenario: Scenario, threads: int) -> CommandOutcome:
    if scenario.field_kind != "realization":
        raise InputError(
            f"realize materializes 'realization' fields; this scenario has "
            f"'{scenario.field_kind}'"
        )
    field = scenario.build_field()
    lo, hi = scenario.window
    n_params = field.n_params
    width = hi - lo + 1
    d = field.dim
    table = np.empty((n_params, width, d, d))
    for lam in range(n_params):
        for i, n in enumerate(range(lo, hi + 1)):
            table[lam, i] = field.matrix(lam, n)
    doc = scenario.echo()
    doc["name"] = f"{scenario.name}-realized"
    doc["field"] = {
        "kind": "tabulated",
        "window": [lo, hi],
        "shape": [n_params, width, d],
        "values": [float(x) for x in table.ravel()],
    }
    Scenario.from_dict(doc)  # validates the round trip before writing
    results = {
        "artifact": "realized.json",
        "shape": [n_params, width, d],
        "window": [lo, hi],
        "bound": _num(np.abs(table).max()),
    }
    return CommandOutcome(
        results=results, extra_files=[("realized.json", _render_scenario(doc))]
    )


_COMMANDS = {
    "spectrum": (_cmd_spectrum, "dichotomy spectrum scan per parameter sample"),
    "projectors": (_cmd_projectors, "certified projector family dumps per parameter sample"),
    "index": (_cmd_index, "Fredholm index, kernel and cokernel per parameter sample"),
    "class": (_cmd_class, "index-bundle class (virtual rank, delta_w1) over the loop"),
    "certify": (_cmd_certify, "four-stage bifurcation certification (optional localization)"),
    "solve": (_cmd_solve, "half-line Green solves for the scenario's forcings"),
    "realize": (_cmd_realize, "materialize a realization field to a tabulated scenario"),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homindex",
        description=(
            "Dichotomies, dichotomy spectra, Fredholm indices, index-bundle "
            "classes and homoclinic-bifurcation certification for discrete "
            "systems on the integer lattice."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument(
            "--scenario",
            required=True,
            help=f"scenario file path or builtin name ({', '.join(builtin_names())})",
        )
        cmd.add_argument("--out", default=".", help="output directory (default: .)")
        cmd.add_argument("--format", choices=("json", "csv"), default="json")
        cmd.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        cmd.add_argument("--threads", type=int, default=1)
    return parser


def _load_scenario(ref: str) -> Scenario:
    path = Path(ref)
    if path.exists():
        return Scenario.load(path)
    if ref in builtin_names():
        return Scenario.builtin(ref)
    raise InputError(
        f"scenario '{ref}' is neither a readable file nor a builtin name; "
        f"builtins: {', '.join(builtin_names())}"
    )


def _exit_code_for(exc: HomindexError) -> int:
    if isinstance(exc, NumericError):
        return 4
    if isinstance(exc, (CertificationError, SamplingError)):
        return 2
    return 3


def run(argv=None) -> int:
    """Parse arguments, dispatch one subcommand, write artifacts.

    Returns the exit code instead of raising: 0 success, 2 on
    certification or hypothesis failure, 3 on input errors (including
    malformed scenarios and unknown builtins), 4 on numeric
    indeterminacy.
    """
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 3

    try:
        if args.threads < 1:
            raise InputError(f"--threads must be at least 1, got {args.threads}")
        scenario = _load_scenario(args.scenario)
        if args.seed is not None:
            if args.seed < 0:
                raise InputError(f"--seed must be nonnegative, got {args.seed}")
            scenario = scenario.with_seed(args.seed)
        handler = _COMMANDS[args.command][0]
        outcome = handler(scenario, args.threads)
        report = {
            "homindex_version": __version__,
            "schema_version": scenario.data["schema_version"],
            "command": args.command,
            "seed": scenario.seed,
            "scenario": scenario.echo(),
            "results": outcome.results,
            "warnings": list(outcome.warnings),
        }
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / REPORT_NAME).write_bytes(_render_report(report))
        for name, payload in outcome.extra_files:
            (out_dir / name).write_bytes(payload)
        if args.format == "csv":
            for name, header, rows in outcome.csv_files:
                with open(out_dir / name, "w", encoding="utf-8", newline="") as fh:
                    writer = csv.writer(fh, lineterminator="\n")
                    writer.writerow(header)
                    for row in rows:
                        writer.writerow([_cell(v) for v in row])
        for line in outcome.warnings:
            print(f"warning: {line}", file=sys.stderr)
        return outcome.exit_code
    except HomindexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))
