"""Experiment configuration files (TOML).

Every table and key is checked against :data:`SCHEMA`; unknown keys and
type mismatches are errors that carry the offending line number.
Top level: ``epsilon`` and the tables ``problem``, ``solver``, ``flow``,
``noise``, ``stochastic``, ``bridge``, ``output``. Paths inside the file
are resolved relative to the file's directory.
"""
from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import io
from .bridge import BridgeProblem, gaussian_problem
from .flow import IntegratorConfig
from .measures import CostMatrix, DiscreteMeasure, ReferenceCoupling, build_reference
from .sinkhorn import SolverConfig, StepSchedule
from .stochastic import NoiseModel

NUM = (int, float)
LIST = (list,)

SCHEDULE_KEYS = {"schedule": str, "gamma": NUM, "a": NUM, "b": NUM, "power": NUM, "values": LIST}

SCHEMA = {
    "": {"epsilon": NUM},
    "problem": {
        "kind": str, "mu": LIST, "nu": LIST, "cost": LIST, "path": str, "mu_path": str, "nu_path": str,
        "cost_path": str, "m": int, "mean0": NUM, "var0": NUM, "meanT": NUM, "varT": NUM, "extent": NUM,
        "sigma_diff": NUM,
    },
    "solver": {**SCHEDULE_KEYS, "max_iter": int, "tol": NUM, "record_every": int},
    "flow": {
        "method": str, "dt": NUM, "t_end": NUM, "record_dt": NUM, "start": str,
        "compare_method": str, "compare_dt": NUM,
    },
    "noise": {"sigma_noise": NUM, "bias_scale": NUM, "bias_decay": NUM},
    "stochastic": {
        **SCHEDULE_KEYS, "experiment": str, "n_iters": int, "n_seeds": int, "tol": NUM, "record_every": int,
        "negative_control": bool, "negative_bias_scale": NUM, "optimized_step": bool,
    },
    "bridge": {
        "t_min": NUM, "t_max": NUM, "nt": int, "n_particles": int, "n_steps": int, "reversal": bool,
        "snapshots": LIST, "value_gammas": LIST, "value_t": NUM, "value_x": NUM, "value_score": NUM,
        "value_samples": int, "value_steps": int, "gamma_ipf": NUM, "ipf_t_nodes": int, "ipf_z_nodes": int,
        "ipf_samples": int,
    },
    "output": {"csv_path": str, "svg_path": str, "seed": int},
}

PROBLEM_KINDS = {
    "inline": {"mu", "nu", "cost"},
    "file": {"path"},
    "files": {"mu_path", "nu_path", "cost_path"},
    "gaussian-1d": {"m", "mean0", "var0", "meanT", "varT", "extent", "sigma_diff"},
}


class ConfigError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = f"{path}:{line}: " if path is not None and line else (f"{path}: " if path is not None else "")
        super().__init__(where + message)
        self.line = line


def _locate(text: str, table: str, key: str | None = None) -> int | None:
    current = ""
    for n, raw in enumerate(text.splitlines(), 1):
        ln = raw.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]", ln)
        if m:
            current = m.group(1).strip()
            if key is None and current == table:
                return n
            continue
        if key is not None and current == table and re.match(rf"^\"?{re.escape(key)}\"?\s*=", ln):
            return n
    return None


@dataclass
class ExperimentConfig:
    data: dict
    path: Path | None = None
    text: str = field(default="", repr=False)

    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    def error(self, message: str, table: str = "", key: str | None = None) -> ConfigError:
        line = _locate(self.text, table, key) if self.text else None
        return ConfigError(message, self.path, line)

    def _resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() or self.path is None else self.path.parent / q

    @property
    def seed(self) -> int | None:
        return self.section("output").get("seed")

    @property
    def epsilon(self) -> float | None:
        return self.data.get("epsilon")

    def require_seed(self) -> int:
        if self.seed is None:
            raise self.error("a seed is required (output.seed or --seed)", "output")
        return int(self.seed)

    def problem_kind(self) -> str:
        p = self.section("problem")
        if not p:
            raise self.error("missing [problem] table")
        kind = p.get("kind")
        if kind not in PROBLEM_KINDS:
            raise self.error(f"problem.kind must be one of {sorted(PROBLEM_KINDS)}", "problem", "kind")
        extra = set(p) - PROBLEM_KINDS[kind] - {"kind"}
        if extra:
            k = sorted(extra)[0]
            raise self.error(f"key {k!r} does not belong to problem kind {kind!r}", "problem", k)
        return kind

    def reference(self) -> ReferenceCoupling:
        kind = self.problem_kind()
        p = self.section("problem")
        if kind == "gaussian-1d":
            return self.bridge_problem().reference()
        eps = self.epsilon
        if eps is None:
            raise self.error("epsilon is required for this problem kind")
        try:
            if kind == "inline":
                missing = PROBLEM_KINDS[kind] - set(p)
                if missing:
                    raise self.error(f"inline problem needs {sorted(missing)}", "problem")
                mu = DiscreteMeasure(np.array(p["mu"], dtype=np.float64))
                nu = DiscreteMeasure(np.array(p["nu"], dtype=np.float64))
                cost = CostMatrix(np.array(p["cost"], dtype=np.float64))
            elif kind == "file":
                mu, nu, cost = io.read_problem(self._resolve(p["path"]))
            else:
                missing = PROBLEM_KINDS[kind] - set(p)
                if missing:
                    raise self.error(f"file problem needs {sorted(missing)}", "problem")
                mu = io.read_measure(self._resolve(p["mu_path"]))
                nu = io.read_measure(self._resolve(p["nu_path"]))
                cost = io.read_cost(self._resolve(p["cost_path"]))
            return build_reference(mu, nu, cost, float(eps))
        except ConfigError:
            raise
        except (ValueError, OSError) as exc:
            raise self.error(str(exc), "problem") from None

    def bridge_problem(self) -> BridgeProblem:
        if self.problem_kind() != "gaussian-1d":
            raise self.error("this command needs a gaussian-1d problem", "problem", "kind")
        p = dict(self.section("problem"))
        p.pop("kind")
        try:
            return gaussian_problem(**p)
        except ValueError as exc:
            raise self.error(str(exc), "problem") from None

    def schedule(self, table: str, default: StepSchedule) -> StepSchedule:
        s = self.section(table)
        kind = s.get("schedule", default.kind)
        try:
            if kind == "constant":
                return StepSchedule.constant(float(s.get("gamma", default.a if default.kind == "constant" else 1.0)))
            if kind == "custom":
                return StepSchedule.custom(s.get("values", ()))
            return StepSchedule(kind, a=float(s.get("a", 1.0)), b=float(s.get("b", 1.0)), power=float(s.get("power", 1.0)))
        except ValueError as exc:
            raise self.error(str(exc), table, "schedule") from None

    def solver_config(self) -> SolverConfig:
        s = self.section("solver")
        try:
            return SolverConfig(
                self.schedule("solver", StepSchedule.constant(1.0)),
                max_iter=int(s.get("max_iter", 1000)),
                tol=float(s.get("tol", 1e-12)),
                record_every=int(s.get("record_every", 1)),
            )
        except ValueError as exc:
            raise self.error(str(exc), "solver") from None

    def integrator_config(self, method=None, dt=None) -> IntegratorConfig:
        f = self.section("flow")
        try:
            return IntegratorConfig(
                method or f.get("method", "euler"),
                float(dt or f.get("dt", 0.01)),
                float(f.get("t_end", 10.0)),
                float(f.get("record_dt", max(float(dt or f.get("dt", 0.01)), 0.1))),
            )
        except ValueError as exc:
            raise self.error(str(exc), "flow") from None

    def noise_model(self, seed: int) -> NoiseModel:
        n = self.section("noise")
        try:
            return NoiseModel(
                float(n.get("sigma_noise", 0.0)), float(n.get("bias_scale", 0.0)), float(n.get("bias_decay", 0.0)), seed
            )
        except ValueError as exc:
            raise self.error(str(exc), "noise") from None


def _check_schema(data: dict, text: str, path) -> None:
    for key, value in data.items():
        if isinstance(value, dict):
            if key not in SCHEMA or key == "":
                raise ConfigError(f"unknown table [{key}]", path, _locate(text, key))
            allowed = SCHEMA[key]
            for k, v in value.items():
                if k not in allowed:
                    raise ConfigError(f"unknown key {k!r} in [{key}]", path, _locate(text, key, k))
                _check_type(v, allowed[k], f"{key}.{k}", path, _locate(text, key, k))
        else:
            if key not in SCHEMA[""]:
                raise ConfigError(f"unknown top-level key {key!r}", path, _locate(text, "", key))
            _check_type(value, SCHEMA[""][key], key, path, _locate(text, "", key))


def _check_type(value, expected, name, path, line) -> None:
    types = expected if isinstance(expected, tuple) else (expected,)
    if isinstance(value, bool) and bool not in types:
        ok = False
    else:
        ok = isinstance(value, types)
    if not ok:
        want = "/".join(t.__name__ for t in types)
        raise ConfigError(f"{name} must be {want}, got {type(value).__name__}", path, line)


def parse_config(text: str, path=None) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed file: {exc}", path, int(m.group(1)) if m else None) from None
    _check_schema(data, text, path)
    return ExperimentConfig(data, Path(path) if path is not None else None, text)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    return parse_config(text, path)
