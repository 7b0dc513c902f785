"""Scenario documents: self-contained descriptions of an analysis run.

A scenario is a JSON object with an explicit ``schema_version`` that
declares the field (a builtin construction, a dense matrix table or a
nonlinear system with a residual choice), the parameter loop, the
analysis windows, horizons and tolerances, and per-command options.
Loading materializes every default, so the scenario echoed into a
report is complete and reruns byte-identically.  A small catalog of
builtin scenarios is addressable by name.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bifurcation import NonlinearField, PerturbedSystemSpec, linearize_at_zero
from .errors import InputError
from .field import (
    DiscreteVectorField,
    ParameterLoop,
    SampledBundle,
    autonomous_field,
    direct_sum,
    mobius_bundle,
    realization_field,
    tabulated_field,
    trivial_bundle,
)

__all__ = [
    "SCHEMA_VERSION",
    "Scenario",
    "builtin_names",
    "builtin_document",
]

SCHEMA_VERSION = 1

_TOP_DEFAULTS = {
    "name": "unnamed",
    "seed": 0,
    "loop": None,
    "window": [-100, 100],
    "horizon": 40,
}

_TOLERANCE_DEFAULTS = {
    "tau_proj": 1e-8,
    "tau_inv": 1e-7,
    "sigma_reg": 1e-6,
    "zero_margin": 2e-3,
    "gap_ratio": 1e3,
    "decay_tol": 1e-6,
    "solve_tol": 1e-8,
}

_OPTION_DEFAULTS = {
    "lambdas": None,
    "gamma_min": 0.05,
    "gamma_max": 20.0,
    "grid": 64,
    "side": "plus",
    "anchor": 0,
    "length": 20,
    "index_window": [-30, 30],
    "anchor_plus": 8,
    "anchor_minus": -8,
    "f3_window": [-30, 30],
    "manifold_dim": None,
    "localize": False,
    "localize_window": [-30, 30],
    "grid_refinement": 1,
    "solve": {
        "lambda": 0,
        "side": "plus",
        "anchor": 0,
        "length": 30,
        "rhs": {"kind": "seeded_random", "count": 3},
    },
}

_FIELD_KINDS = ("autonomous", "tabulated", "realization", "system2")
_BUNDLE_KINDS = ("mobius", "trivial", "mobius_sum")
_RESIDUAL_KINDS = ("none", "quadratic_decaying")


def _fail(path: str, message: str):
    raise InputError(f"scenario field '{path}': {message}")


def _expect_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"expected an integer, got {value!r}")
    return int(value)


def _expect_window(value, path: str) -> list:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or any(isinstance(v, bool) or not isinstance(v, int) for v in value)
    ):
        _fail(path, f"expected a pair of integers [lo, hi], got {value!r}")
    if value[0] >= value[1]:
        _fail(path, f"window [{value[0]}, {value[1]}] is empty")
    return [int(value[0]), int(value[1])]


def _merge_defaults(given: dict, defaults: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            _fail(f"{path}.{key}" if path else key, "unknown field")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge_defaults(value, defaults[key], f"{path}.{key}" if path else key)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _validate_bundle_spec(spec, dimension: int, path: str) -> dict:
    if not isinstance(spec, dict) or "kind" not in spec:
        _fail(path, "expected an object with a 'kind'")
    kind = spec["kind"]
    if kind not in _BUNDLE_KINDS:
        _fail(f"{path}.kind", f"unknown bundle kind {kind!r}; expected one of {_BUNDLE_KINDS}")
    out = {"kind": kind}
    if kind == "mobius":
        if dimension != 2:
            _fail(path, "the Moebius bundle lives in dimension 2")
    elif kind == "trivial":
        rank = _expect_int(spec.get("rank", 1), f"{path}.rank")
        if not (1 <= rank <= dimension):
            _fail(f"{path}.rank", f"rank {rank} must lie in 1..{dimension}")
        out["rank"] = rank
    else:  # mobius_sum
        copies = _expect_int(spec.get("copies", 2), f"{path}.copies")
        if copies < 1:
            _fail(f"{path}.copies", "needs at least one copy")
        if dimension != 2 * copies:
            _fail(path, f"{copies} Moebius copies live in dimension {2 * copies}, not {dimension}")
        out["copies"] = copies
    extra = set(spec) - set(out)
    if extra:
        _fail(f"{path}.{sorted(extra)[0]}", "unknown field")
    return out


def _validate_field_spec(spec, dimension: int, loop_spec, path: str = "field") -> dict:
    if not isinstance(spec, dict) or "kind" not in spec:
        _fail(path, "expected an object with a 'kind'")
    kind = spec["kind"]
    if kind not in _FIELD_KINDS:
        _fail(f"{path}.kind", f"unknown builtin {kind!r}; expected one of {_FIELD_KINDS}")
    out = {"kind": kind}
    if kind == "autonomous":
        matrix = spec.get("matrix")
        arr = np.asarray(matrix, dtype=float) if matrix is not None else None
        if arr is None or arr.shape != (dimension, dimension) or not np.all(np.isfinite(arr)):
            _fail(f"{path}.matrix", f"expected a finite {dimension}x{dimension} matrix")
        out["matrix"] = [[float(x) for x in row] for row in arr]
    elif kind == "tabulated":
        window = _expect_window(spec.get("window"), f"{path}.window")
        shape = spec.get("shape")
        if not isinstance(shape, (list, tuple)) or len(shape) != 3:
            _fail(f"{path}.shape", "expected [n_params, n_times, dim]")
        n_params, n_times, d = (_expect_int(s, f"{path}.shape") for s in shape)
        if d != dimension:
            _fail(f"{path}.shape", f"declared dim {d} != scenario dimension {dimension}")
        if n_times != window[1] - window[0] + 1:
            _fail(f"{path}.shape", f"{n_times} times do not tile the window {window}")
        loop_n = loop_spec["n"] if loop_spec is not None else 1
        if n_params != loop_n:
            _fail(f"{path}.shape", f"{n_params} parameter slices but the loop has {loop_n} samples")
        values = spec.get("values")
        if not isinstance(values, list) or len(values) != n_params * n_times * d * d:
            _fail(
                f"{path}.values",
                f"expected a flat row-major list of {n_params * n_times * d * d} numbers",
            )
        arr = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(arr)):
            _fail(f"{path}.values", "entries must be finite numbers")
        out.update(window=window, shape=[n_params, n_times, d], values=[float(x) for x in values])
    else:  # realization or system2
        if loop_spec is None:
            _fail(path, f"a {kind!r} field needs a parameter loop")
        out["stable_ahead"] = _validate_bundle_spec(
            spec.get("stable_ahead"), dimension, f"{path}.stable_ahead"
        )
        out["stable_behind"] = _validate_bundle_spec(
            spec.get("stable_behind"), dimension, f"{path}.stable_behind"
        )
        q = spec.get("q", 0.5)
        if not isinstance(q, (int, float)) or not (0.0 < float(q) < 1.0):
            _fail(f"{path}.q", f"contraction factor must lie in (0, 1), got {q!r}")
        out["q"] = float(q)
        out["kappa_plus"] = _expect_int(spec.get("kappa_plus", 8), f"{path}.kappa_plus")
        out["kappa_minus"] = _expect_int(spec.get("kappa_minus", -8), f"{path}.kappa_minus")
        if not (out["kappa_minus"] < 0 < out["kappa_plus"]):
            _fail(path, "need kappa_minus < 0 < kappa_plus")
        if kind == "system2":
            residual = spec.get("residual", {"kind": "none"})
            if not isinstance(residual, dict) or residual.get("kind") not in _RESIDUAL_KINDS:
                _fail(
                    f"{path}.residual.kind",
                    f"unknown residual; expected one of {_RESIDUAL_KINDS}",
                )
            res_out = {"kind": residual["kind"]}
            if residual["kind"] == "quadratic_decaying":
                if dimension != 2:
                    _fail(f"{path}.residual", "the quadratic decaying residual needs dimension 2")
                amplitude = residual.get("amplitude", 1.0)
                if not isinstance(amplitude, (int, float)):
                    _fail(f"{path}.residual.amplitude", f"expected a number, got {amplitude!r}")
                res_out["amplitude"] = float(amplitude)
            out["residual"] = res_out
            r0 = spec.get("r0", 1.0)
            if not isinstance(r0, (int, float)) or not (float(r0) > 0.0):
                _fail(f"{path}.r0", f"trust radius must be positive, got {r0!r}")
            out["r0"] = float(r0)
    extra = set(spec) - set(out)
    if extra:
        _fail(f"{path}.{sorted(extra)[0]}", "unknown field")
    return out


def _materialize(raw) -> dict:
    if not isinstance(raw, dict):
        raise InputError("a scenario must be a JSON object")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        _fail("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    known = {"schema_version", "dimension", "field", "tolerances", "options", *_TOP_DEFAULTS}
    for key in raw:
        if key not in known:
            _fail(key, "unknown field")
    out = {"schema_version": SCHEMA_VERSION}
    for key, default in _TOP_DEFAULTS.items():
        out[key] = copy.deepcopy(raw.get(key, default))
    if not isinstance(out["name"], str):
        _fail("name", f"expected a string, got {out['name']!r}")
    out["seed"] = _expect_int(out["seed"], "seed")
    if out["seed"] < 0:
        _fail("seed", "must be nonnegative")
    out["window"] = _expect_window(out["window"], "window")
    out["horizon"] = _expect_int(out["horizon"], "horizon")
    if out["horizon"] < 8:
        _fail("horizon", "rate estimation needs a horizon of at least 8 steps")

    loop_spec = out["loop"]
    if loop_spec is not None:
        if not isinstance(loop_spec, dict) or loop_spec.get("kind") != "circle":
            _fail("loop.kind", "the only supported loop kind is 'circle'")
        n = _expect_int(loop_spec.get("n", 16), "loop.n")
        if n < 8:
            _fail("loop.n", "the angular loop needs at least 8 samples")
        out["loop"] = {"kind": "circle", "n": n}

    if "dimension" not in raw:
        _fail("dimension", "required")
    dimension = _expect_int(raw["dimension"], "dimension")
    if dimension < 1:
        _fail("dimension", "must be at least 1")
    out["dimension"] = dimension

    out["field"] = _validate_field_spec(raw.get("field"), dimension, out["loop"])
    tolerances = raw.get("tolerances", {})
    if not isinstance(tolerances, dict):
        _fail("tolerances", "expected an object")
    out["tolerances"] = _merge_defaults(tolerances, _TOLERANCE_DEFAULTS, "tolerances")
    for key, value in out["tolerances"].items():
        if not isinstance(value, (int, float)) or not (float(value) > 0.0):
            _fail(f"tolerances.{key}", f"expected a positive number, got {value!r}")
        out["tolerances"][key] = float(value)
    options = raw.get("options", {})
    if not isinstance(options, dict):
        _fail("options", "expected an object")
    out["options"] = _merge_defaults(options, _OPTION_DEFAULTS, "options")

    n_params = out["loop"]["n"] if out["loop"] is not None else 1
    opts = out["options"]
    lambdas = opts["lambdas"]
    if lambdas is None:
        lambdas = list(range(n_params))
    if not isinstance(lambdas, list) or any(
        isinstance(v, bool) or not isinstance(v, int) for v in lambdas
    ):
        _fail("options.lambdas", "expected a list of parameter indices")
    for v in lambdas:
        if not (0 <= v < n_params):
            _fail("options.lambdas", f"index {v} outside range({n_params})")
    opts["lambdas"] = [int(v) for v in lambdas]
    for key in ("index_window", "f3_window", "localize_window"):
        opts[key] = _expect_window(opts[key], f"options.{key}")
    for key in ("grid", "anchor", "length", "anchor_plus", "anchor_minus", "grid_refinement"):
        opts[key] = _expect_int(opts[key], f"options.{key}")
    for key in ("gamma_min", "gamma_max"):
        if isinstance(opts[key], bool) or not isinstance(opts[key], (int, float)):
            _fail(f"options.{key}", f"expected a number, got {opts[key]!r}")
        opts[key] = float(opts[key])
    if not (0.0 < opts["gamma_min"] < opts["gamma_max"]):
        _fail("options.gamma_min", "need 0 < gamma_min < gamma_max")
    if opts["grid"] < 16:
        _fail("options.grid", "the spectrum scan needs at least 16 gridpoints")
    if opts["side"] not in ("plus", "minus"):
        _fail("options.side", f"expected 'plus' or 'minus', got {opts['side']!r}")
    if opts["length"] < 2:
        _fail("options.length", "a projector family needs at least 2 steps")
    if opts["grid_refinement"] < 1:
        _fail("options.grid_refinement", "must be at least 1")
    if not isinstance(opts["localize"], bool):
        _fail("options.localize", f"expected true or false, got {opts['localize']!r}")
    if opts["manifold_dim"] is not None:
        opts["manifold_dim"] = _expect_int(opts["manifold_dim"], "options.manifold_dim")
    solve = opts["solve"]
    solve["lambda"] = _expect_int(solve["lambda"], "options.solve.lambda")
    if not (0 <= solve["lambda"] < n_params):
        _fail("options.solve.lambda", f"index {solve['lambda']} outside range({n_params})")
    solve["anchor"] = _expect_int(solve["anchor"], "options.solve.anchor")
    solve["length"] = _expect_int(solve["length"], "options.solve.length")
    if solve["length"] < 2:
        _fail("options.solve.length", "needs at least 2 steps")
    if solve["side"] not in ("plus", "minus"):
        _fail("options.solve.side", f"expected 'plus' or 'minus', got {solve['side']!r}")
    return out


def _build_bundle(spec: dict, loop: ParameterLoop, dimension: int) -> SampledBundle:
    if spec["kind"] == "mobius":
        return mobius_bundle(loop)
    if spec["kind"] == "trivial":
        return trivial_bundle(loop, dimension, spec["rank"])
    out = mobius_bundle(loop)
    for _ in range(spec["copies"] - 1):
        out = direct_sum(out, mobius_bundle(loop))
    return out


def _quadratic_decaying(amplitude: float):
    def residual(lam, n, x):
        w = amplitude * float(np.exp(-abs(n)))
        return w * np.array([x[0] ** 2, x[0] * x[1]])

    def derivative(lam, n, x):
        w = amplitude * float(np.exp(-abs(n)))
        return w * np.array([[2.0 * x[0], 0.0], [x[1], x[0]]])

    return residual, derivative


@dataclass(frozen=True)
class Scenario:
    """A materialized scenario document with typed builders.

    `data` is the fully defaulted dict; `echo()` returns a deep copy
    for embedding into reports.  `build_field()` yields the linear
    field every linear command works on (for nonlinear systems this is
    the linearization along the trivial branch), `build_nonlinear()`
    the nonlinear system required by certification commands.
    """

    data: dict

    @classmethod
    def from_dict(cls, raw) -> "Scenario":
        return cls(data=_materialize(raw))

    @classmethod
    def load(cls, path) -> "Scenario":
        text = Path(path).read_text(encoding="utf-8")
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(
                f"malformed scenario {path}: {exc.msg} (line {exc.lineno}, column {exc.colno})"
            ) from exc
        return cls.from_dict(raw)

    @classmethod
    def builtin(cls, name: str) -> "Scenario":
        return cls.from_dict(builtin_document(name))

    def echo(self) -> dict:
        return copy.deepcopy(self.data)

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def dimension(self) -> int:
        return self.data["dimension"]

    @property
    def window(self) -> tuple[int, int]:
        return tuple(self.data["window"])

    @property
    def horizon(self) -> int:
        return self.data["horizon"]

    @property
    def options(self) -> dict:
        return self.data["options"]

    @property
    def tolerances(self) -> dict:
        return self.data["tolerances"]

    @property
    def field_kind(self) -> str:
        return self.data["field"]["kind"]

    def with_seed(self, seed: int) -> "Scenario":
        data = self.echo()
        data["seed"] = _expect_int(seed, "seed")
        return Scenario(data=data)

    def build_loop(self) -> ParameterLoop | None:
        spec = self.data["loop"]
        if spec is None:
            return None
        return ParameterLoop.circle(spec["n"])

    def build_field(self) -> DiscreteVectorField:
        """The linear field the linear commands analyse."""
        spec = self.data["field"]
        loop = self.build_loop()
        if spec["kind"] == "autonomous":
            field = autonomous_field(np.asarray(spec["matrix"], dtype=float))
        elif spec["kind"] == "tabulated":
            n_params, n_times, d = spec["shape"]
            values = np.asarray(spec["values"], dtype=float).reshape(n_params, n_times, d, d)
            field = tabulated_field(values, tuple(spec["window"]), loop=loop)
        elif spec["kind"] == "realization":
            field = self._build_realization(spec, loop)
        else:  # system2: analyse the linearization along the trivial branch
            field = linearize_at_zero(self.build_nonlinear())
        if field.dim != self.dimension:
            raise InputError(
                f"scenario field 'dimension': declared {self.dimension} but the field "
                f"lives in dimension {field.dim}"
            )
        return field

    def _build_realization(self, spec: dict, loop: ParameterLoop) -> DiscreteVectorField:
        ahead = _build_bundle(spec["stable_ahead"], loop, self.dimension)
        behind = _build_bundle(spec["stable_behind"], loop, self.dimension)
        return realization_field(
            ahead,
            behind,
            q=spec["q"],
            kappa_minus=spec["kappa_minus"],
            kappa_plus=spec["kappa_plus"],
        )

    def build_nonlinear(self) -> NonlinearField:
        """The nonlinear system for certify/localize commands."""
        spec = self.data["field"]
        if spec["kind"] != "system2":
            raise InputError(
                f"the '{spec['kind']}' field is linear; certification commands need "
                "a 'system2' field"
            )

        def make(n_samples: int) -> NonlinearField:
            loop = ParameterLoop.circle(n_samples)
            a_field = self._build_realization(spec, loop)
            residual_spec = spec["residual"]
            if residual_spec["kind"] == "none":
                dim = self.dimension
                res = lambda lam, n, x: np.zeros(dim)  # noqa: E731
                dres = lambda lam, n, x: np.zeros((dim, dim))  # noqa: E731
            else:
                res, dres = _quadratic_decaying(residual_spec["amplitude"])
            system = PerturbedSystemSpec(
                a_field=a_field,
                residual=res,
                residual_derivative=dres,
                r0=spec["r0"],
            )
            f = system.to_nonlinear()
            return replace(f, refiner=lambda k: make(n_samples * k))

        return make(self.data["loop"]["n"])


_BUILTIN_DOCUMENTS = {
    "autonomous-saddle": {
        "schema_version": 1,
        "name": "autonomous-saddle",
        "dimension": 2,
        "loop": None,
        "field": {"kind": "autonomous", "matrix": [[0.5, 0.0], [0.0, 2.0]]},
        "horizon": 40,
    },
    "realization-mobius": {
        "schema_version": 1,
        "name": "realization-mobius",
        "dimension": 2,
        "loop": {"kind": "circle", "n": 16},
        "field": {
            "kind": "realization",
            "stable_ahead": {"kind": "mobius"},
            "stable_behind": {"kind": "trivial", "rank": 1},
            "q": 0.5,
        },
        "horizon": 40,
    },
    "realization-trivial": {
        "schema_version": 1,
        "name": "realization-trivial",
        "dimension": 2,
        "loop": {"kind": "circle", "n": 16},
        "field": {
            "kind": "realization",
            "stable_ahead": {"kind": "trivial", "rank": 1},
            "stable_behind": {"kind": "trivial", "rank": 1},
            "q": 0.5,
        },
        "horizon": 40,
    },
    "mobius-double": {
        "schema_version": 1,
        "name": "mobius-double",
        "dimension": 4,
        "loop": {"kind": "circle", "n": 16},
        "field": {
            "kind": "realization",
            "stable_ahead": {"kind": "mobius_sum", "copies": 2},
            "stable_behind": {"kind": "trivial", "rank": 2},
            "q": 0.5,
        },
        "horizon": 40,
    },
    "system2-mobius": {
        "schema_version": 1,
        "name": "system2-mobius",
        "dimension": 2,
        "loop": {"kind": "circle", "n": 16},
        "field": {
            "kind": "system2",
            "stable_ahead": {"kind": "mobius"},
            "stable_behind": {"kind": "trivial", "rank": 1},
            "q": 0.5,
            "residual": {"kind": "quadratic_decaying", "amplitude": 1.0},
            "r0": 1.0,
        },
        "horizon": 40,
        "options": {"localize": True},
    },
}


def builtin_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILTIN_DOCUMENTS))


def builtin_document(name: str) -> dict:
    if name not in _BUILTIN_DOCUMENTS:
        raise InputError(
            f"unknown builtin scenario {name!r}; available: {', '.join(builtin_names())}"
        )
    return copy.deepcopy(_BUILTIN_DOCUMENTS[name])
