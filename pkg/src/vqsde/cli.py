"""Command-line front end.

Every command reads one JSON config (validated before any computation),
writes its artifacts atomically into the output directory and exits with
0 (success), 2 (invalid config), 3 (numerical failure) or 4 (I/O error).
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
import tempfile
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from . import expectation as ex
from .generator import InitialDistribution, ProcessSpec, build_L_dense, gbm, ornstein_uhlenbeck
from .multivar import MultiProcessSpec
from .oracle import OracleError, analytic_moments, distribution_stats, moments_params, runge_kutta
from .vqs import AnsatzSpec, Shots, VQSError, simulate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POLY = {"type": "array", "items": _NUM, "minItems": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


CONFIG_SCHEMA = _obj({
    "process": {"oneOf": [
        _obj({"kind": {"const": "gbm"}, "r": _NUM, "sigma": {"type": "number", "minimum": 0}},
             ("kind", "r", "sigma")),
        _obj({"kind": {"const": "ou"}, "r": _NUM, "sigma": {"type": "number", "minimum": 0},
              "eta": {"type": "number", "minimum": 0}}, ("kind", "r", "sigma", "eta")),
        _obj({"kind": {"const": "polynomial"}, "mu": _POLY, "sigma2": _POLY}, ("kind", "mu", "sigma2")),
        _obj({"kind": {"const": "multi"},
              "mu": {"type": "array", "items": _POLY, "minItems": 1},
              "sigma": {"type": "array", "items": _POLY, "minItems": 1},
              "rho": {"type": "array", "items": {"type": "array", "items": _NUM}},
              "n_qubits": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
              "x_max": {"type": "array", "items": _POS},
              "initial_index": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
             ("kind", "mu", "sigma", "rho", "n_qubits")),
    ]},
    "grid": _obj({"n_qubits": {"type": "integer", "minimum": 1, "maximum": 10}, "x_max": _POS}, ("n_qubits",)),
    "initial": {"oneOf": [
        _obj({"kind": {"const": "delta"}, "x0": _NUM}, ("kind", "x0")),
        _obj({"kind": {"const": "gaussian"}, "mean": _NUM, "std": _POS}, ("kind", "mean", "std")),
        _obj({"kind": {"const": "explicit"}, "p": _POLY}, ("kind", "p")),
    ]},
    "ansatz": _obj({"depth": {"type": "integer", "minimum": 0}, "restarts": {"type": "integer", "minimum": 1}},
                   ("depth",)),
    "time": _obj({"T": _POS, "dt": _POS}, ("T", "dt")),
    "integrator": {"enum": ["euler", "rk4"]},
    "mode": {"oneOf": [{"const": "exact"},
                       _obj({"shots": {"type": "integer", "minimum": 1},
                             "seed": {"type": "integer", "minimum": 0}}, ("shots",))]},
    "payoff": {"oneOf": [
        _obj({"kind": {"const": "call"}, "K": _POS}, ("kind", "K")),
        _obj({"kind": {"const": "piecewise"}, "breakpoints": _POLY,
              "coeffs": {"type": "array", "items": _POLY, "minItems": 1},
              "derivative_bound": {"type": "number", "minimum": 0}}, ("kind", "breakpoints", "coeffs")),
    ]},
    "state": {"oneOf": [
        _obj({"distribution": _POLY}, ("distribution",)),
        _obj({"trajectory": {"type": "string"}, "t": _NUM}, ("trajectory",)),
    ]},
    "budget": _obj({"epsilon": _POS}, ("epsilon",)),
    "oracle": _obj({"dt": _POS}),
    "seed": {"type": "integer", "minimum": 0},
    "outputs": _obj({"directory": {"type": "string"}}),
})


class ConfigError(ValueError):
    pass


def validate_config(config: dict) -> dict:
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    return config


def _require(config: dict, *keys: str) -> None:
    missing = [k for k in keys if k not in config]
    if missing:
        raise ConfigError(f"missing config section(s): {', '.join(missing)}")


def build_process(config: dict) -> ProcessSpec | MultiProcessSpec:
    _require(config, "process")
    proc = config["process"]
    try:
        if proc["kind"] == "multi":
            return MultiProcessSpec(proc["mu"], proc["sigma"], proc["rho"], tuple(proc["n_qubits"]),
                                    tuple(proc["x_max"]) if "x_max" in proc else None,
                                    tuple(proc["initial_index"]) if "initial_index" in proc else None)
        _require(config, "grid")
        n = config["grid"]["n_qubits"]
        x_max = config["grid"].get("x_max")
        initial = _initial(config.get("initial"))
        if proc["kind"] == "gbm":
            return gbm(proc["r"], proc["sigma"], n, x_max, initial)
        if proc["kind"] == "ou":
            return ornstein_uhlenbeck(proc["r"], proc["sigma"], proc["eta"], n, x_max, initial)
        spec = ProcessSpec(proc["mu"], proc["sigma2"], n, x_max)
        if initial is None:
            return spec
        return ProcessSpec(spec.mu_coeffs, spec.sigma2_coeffs, n, spec.x_max, initial)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"process: {exc}") from None


def _initial(cfg: dict | None) -> InitialDistribution | None:
    if cfg is None:
        return None
    if cfg["kind"] == "delta":
        return InitialDistribution.delta(cfg["x0"])
    if cfg["kind"] == "gaussian":
        return InitialDistribution.gaussian(cfg["mean"], cfg["std"])
    return InitialDistribution.explicit(cfg["p"])


def _width(process) -> int:
    return process.total_qubits if isinstance(process, MultiProcessSpec) else process.n_qubits


def _mode(config: dict, seed: int):
    mode = config.get("mode", "exact")
    if mode == "exact":
        return "exact"
    return Shots(mode["shots"], mode.get("seed", seed))


def build_payoff(config: dict, n: int, dx: float) -> ex.PiecewisePoly:
    _require(config, "payoff")
    pay = config["payoff"]
    x_max = dx * (2**n - 1)
    try:
        if pay["kind"] == "call":
            return ex.call_payoff(pay["K"], x_max)
        return ex.PiecewisePoly(tuple(pay["breakpoints"]), tuple(tuple(r) for r in pay["coeffs"]))
    except ValueError as exc:
        raise ConfigError(f"payoff: {exc}") from None


# output helpers ------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".17g")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _echo(config: dict) -> dict:
    """Config as recorded in artifacts; the output location is left out so reruns elsewhere match."""
    return {k: v for k, v in config.items() if k != "outputs"}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


# pipelines -----------------------------------------------------------------

def _run_vqs(config: dict, seed: int):
    _require(config, "ansatz", "time")
    process = build_process(config)
    ansatz = AnsatzSpec(_width(process), config["ansatz"]["depth"])
    result = simulate(process, ansatz, config["time"]["T"], config["time"]["dt"], _mode(config, seed),
                      restarts=config["ansatz"].get("restarts", 20), seed=seed,
                      integrator=config.get("integrator", "euler"))
    return process, ansatz, result


def _stats_columns(process, p: np.ndarray) -> list[float]:
    if isinstance(process, MultiProcessSpec):
        grid = p.reshape(process.shape)
        cols = [float(p.sum())]
        for d in range(process.dim):
            marginal = grid.sum(axis=tuple(a for a in range(process.dim) if a != d))
            _, mean, var = distribution_stats(marginal, process.dx(d))
            cols += [mean, var]
        return cols
    return list(distribution_stats(p, process.dx))


def _stats_header(process) -> list[str]:
    if isinstance(process, MultiProcessSpec):
        return ["mass"] + [f"{s}_{d}" for d in range(process.dim) for s in ("mean", "var")]
    return ["mass", "mean", "var"]


def cmd_simulate(config: dict, out: Path, seed: int) -> dict:
    process, ansatz, result = _run_vqs(config, seed)
    size = result.distributions.shape[1]
    header = ["t"] + _stats_header(process) + [f"p{i}" for i in range(size)]
    rows = [[r.t] + _stats_columns(process, r.distribution.p) + list(r.distribution.p) for r in result.records]
    _atomic_write(out / "trajectory.csv", _csv_text(header, rows))
    pheader = ["t", "alpha"] + [f"theta_{k}" for k in range(ansatz.n_params)]
    prows = [[r.t, r.state.alpha] + list(r.state.theta) for r in result.records]
    _atomic_write(out / "params.csv", _csv_text(pheader, prows))
    meta = {
        "command": "simulate",
        "config": _echo(config),
        "seed": seed,
        "fit_residual": result.fit_residual,
        "steps": len(result.records) - 1,
        "min_amplitude": min(r.min_amplitude for r in result.records),
        "final_rank": result.records[-1].rank,
        "warnings": result.warnings,
    }
    _atomic_write(out / "run_meta.json", _json_text(_jsonable(meta)))
    return meta


def _load_trajectory_row(path: str, t: float | None) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    if not body or "t" not in header:
        raise ConfigError(f"{path} is not a trajectory file")
    cols = [i for i, h in enumerate(header) if h.startswith("p") and h[1:].isdigit()]
    times = np.array([float(r[0]) for r in body])
    i = len(body) - 1 if t is None else int(np.argmin(np.abs(times - t)))
    return np.array([float(body[i][c]) for c in cols])


def _state_for_expectation(config: dict, seed: int):
    """Distribution plus (prep circuit, alpha) for sampling; runs a simulation if no state is given."""
    if "state" in config:
        st = config["state"]
        if "distribution" in st:
            p = np.array(st["distribution"], dtype=float)
        else:
            p = _load_trajectory_row(st["trajectory"], st.get("t"))
        n = int(round(math.log2(p.size)))
        if 2**n != p.size:
            raise ConfigError("state length must be a power of two")
        x_max = config.get("grid", {}).get("x_max", float(2**n - 1))
        return p, n, x_max / (2**n - 1), None, {}
    process, ansatz, result = _run_vqs(config, seed)
    if isinstance(process, MultiProcessSpec):
        raise ConfigError("expectations are one-dimensional; multi payoffs go through the library")
    final = result.records[-1]
    prep = (ansatz.circuit(final.state.theta), final.state.alpha)
    return final.distribution.p, process.n_qubits, process.dx, prep, {"fit_residual": result.fit_residual,
                                                                       "warnings": result.warnings}


def _expectation_report(config: dict, seed: int) -> dict:
    p, n, dx, prep, extra = _state_for_expectation(config, seed)
    f = build_payoff(config, n, dx)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        Sf = ex.build_Sf(f, n, dx)
    exact = ex.expectation_exact(p, Sf)
    report = {
        "n_qubits": n,
        "dx": dx,
        "mass": float(p.sum()),
        "exact": exact,
        "shift": Sf.shift,
        "terms": len(Sf.op),
        "coefficients": [[c.real, c.imag] for c in Sf.op.coefficients],
        "warnings": [str(w.message) for w in caught] + extra.get("warnings", []),
    }
    if "fit_residual" in extra:
        report["fit_residual"] = extra["fit_residual"]
    pay = config["payoff"]
    degree = f.degree
    if pay.get("derivative_bound") is not None:
        report["poly_error_bound"] = ex.poly_error_bound(None, f.n_intervals, degree, dx * (2**n - 1),
                                                         pay["derivative_bound"])
    else:
        # the payoff is itself piecewise polynomial, so the approximation error is zero
        report["poly_error_bound"] = 0.0
    mode = _mode(config, seed)
    if isinstance(mode, Shots):
        circuit, alpha = prep if prep is not None else ex.prepare_real_state(p)
        est, se = ex.expectation_sampled(circuit, alpha, Sf, mode.count, mode.seed)
        report["sampled"] = {"estimate": est, "stderr": se, "shots_per_term": mode.count, "seed": mode.seed}
    epsilon = config.get("budget", {}).get("epsilon", 0.01)
    shifted = exact + Sf.shift * float(p.sum())
    if shifted > 0:
        b = ex.measurement_budget(shifted, p, epsilon, xi=Sf.op.coefficients)
        report["budget"] = {"epsilon": epsilon, **b.__dict__}
    else:
        report["budget"] = None
    return report


def cmd_expect(config: dict, out: Path, seed: int) -> dict:
    report = _expectation_report(config, seed)
    report = {"command": "expect", "config": _echo(config), "seed": seed, **report}
    _atomic_write(out / "expectation.json", _json_text(_jsonable(report)))
    return report


def cmd_price_call(config: dict, out: Path, seed: int) -> dict:
    _require(config, "payoff")
    if config["payoff"]["kind"] != "call":
        raise ConfigError("price-call needs a call payoff")
    report = _expectation_report(config, seed)
    proc = config.get("process", {})
    T = config.get("time", {}).get("T")
    if proc.get("kind") == "gbm" and T is not None and "state" not in config:
        report["discount_factor"] = math.exp(-proc["r"] * T)
        report["price"] = report["discount_factor"] * report["exact"]
    report = {"command": "price-call", "config": _echo(config), "seed": seed, **report}
    _atomic_write(out / "price.json", _json_text(_jsonable(report)))
    return report


def cmd_budget(config: dict, out: Path, seed: int) -> dict:
    report = _expectation_report(config, seed)
    keep = {k: report[k] for k in ("exact", "shift", "terms", "coefficients", "budget", "poly_error_bound", "warnings")}
    keep = {"command": "budget", "config": _echo(config), "seed": seed, **keep}
    _atomic_write(out / "budget.json", _json_text(_jsonable(keep)))
    return keep


def _analytic_params(config: dict, process: ProcessSpec):
    proc = config["process"]
    if proc["kind"] == "gbm" and process.initial.kind == "delta":
        return moments_params(process, "gbm", r=proc["r"], sigma=proc["sigma"])
    if proc["kind"] == "ou" and process.initial.kind == "delta":
        return moments_params(process, "ou", r=proc["r"], sigma=proc["sigma"], eta=proc["eta"])
    return None


def cmd_oracle_compare(config: dict, out: Path, seed: int) -> dict:
    process, _, result = _run_vqs(config, seed)
    if isinstance(process, MultiProcessSpec):
        raise ConfigError("oracle-compare needs a one-dimensional process")
    dt = config["time"]["dt"]
    sub = max(1, int(round(dt / config.get("oracle", {}).get("dt", 0.001))))
    rk = runge_kutta(lambda t: build_L_dense(process, t), process.initial_lattice(), config["time"]["T"],
                     dt / sub, record_every=sub)
    params = _analytic_params(config, process)
    rows = []
    bias = []
    for rec, p_rk in zip(result.records, rk.distributions):
        _, m_v, v_v = distribution_stats(rec.distribution, process.dx)
        _, m_r, v_r = distribution_stats(p_rk, process.dx)
        m_a, v_a = analytic_moments(params, rec.t) if params is not None else (math.nan, math.nan)
        rows.append([rec.t, m_v, m_r, m_a, v_v, v_r, v_a, np.linalg.norm(rec.distribution.p - p_rk.p)])
        if params is not None:
            bias.append((m_r - m_a, v_r - v_a))
    header = ["t", "mean_vqs", "mean_rk", "mean_analytic", "var_vqs", "var_rk", "var_analytic", "l2_dist_vqs_rk"]
    _atomic_write(out / "comparison.csv", _csv_text(header, rows))
    meta = {
        "command": "oracle-compare",
        "config": _echo(config),
        "seed": seed,
        "fit_residual": result.fit_residual,
        "oracle_dt": dt / sub,
        "final_l2_dist_vqs_rk": rows[-1][-1],
        "rk_mass_final": float(rk.final.p.sum()),
        "warnings": result.warnings,
    }
    if bias:
        b = np.array(bias)
        meta["rk_vs_analytic_bias"] = {
            "max_abs_mean": float(np.abs(b[:, 0]).max()),
            "max_abs_var": float(np.abs(b[:, 1]).max()),
            "final_mean": float(b[-1, 0]),
            "final_var": float(b[-1, 1]),
        }
    _atomic_write(out / "run_meta.json", _json_text(_jsonable(meta)))
    return meta


COMMANDS = {
    "simulate": cmd_simulate,
    "expect": cmd_expect,
    "price-call": cmd_price_call,
    "oracle-compare": cmd_oracle_compare,
    "budget": cmd_budget,
}


def _parse_mode(text: str):
    if text == "exact":
        return "exact"
    if text.startswith("shots:"):
        try:
            count = int(text.split(":", 1)[1])
        except ValueError:
            count = 0
        if count >= 1:
            return {"shots": count}
    raise argparse.ArgumentTypeError("mode must be 'exact' or 'shots:<n>' with n >= 1")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqsde", description="Lattice SDE evolution by variational simulation.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config outputs.directory)")
    parser.add_argument("--mode", type=_parse_mode, help="exact or shots:<n> (overrides config)")
    return parser


def load_config(path: str, args: argparse.Namespace | None = None) -> dict:
    with open(path) as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    config = copy.deepcopy(config)
    if args is not None:
        if args.seed is not None:
            config["seed"] = args.seed
        if args.mode is not None:
            mode = args.mode
            if isinstance(mode, dict) and isinstance(config.get("mode"), dict) and "seed" in config["mode"]:
                mode = {**mode, "seed": config["mode"]["seed"]}
            config["mode"] = mode
        if args.out is not None:
            config.setdefault("outputs", {})["directory"] = args.out
    return validate_config(config)


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        config = load_config(args.config, args)
        seed = config.get("seed", 0)
        if seed >= 2**64:
            raise ConfigError("seed must fit in 64 bits")
        out = Path(config.get("outputs", {}).get("directory", "out"))
        COMMANDS[args.command](config, out, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (VQSError, OracleError, ex.ExpectationError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # module preconditions rejected a value the schema could not check
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
