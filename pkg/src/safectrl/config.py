"""Run configuration: INI-style `key = value` sections with a strict schema.

Unknown sections or keys are errors (silent misconfiguration would poison
labeled datasets). Every key is optional; defaults reproduce the standard
simulation parameters. See README for the documented schema.
"""

import configparser
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .constraints import ClassKParams
from .controller import ControllerConfig
from .scenario import Scenario, SensorSpec, load_scenario, training_scenario
from .svm import KernelParams
from .tuner import TunerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SvmSettings:
    kernel: KernelParams = KernelParams()
    C: float = 100.0
    kkt_tol: float = 1e-3
    max_passes: int = 10_000


@dataclass(frozen=True)
class ExploreSettings:
    episodes: int = 20
    n_obstacles: int = 3
    radius_min: float = 3.0
    radius_max: float = 9.0
    motion_step: float = 0.05
    sensor: SensorSpec = SensorSpec()


@dataclass(frozen=True)
class BenchSettings:
    m_list: tuple = (500, 1000, 2000)
    pool: int = 20
    timing_steps: int = 2000


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    scenario_path: Optional[str] = None
    goal_offset: float = 2.0
    params: Optional[ClassKParams] = None
    controller: ControllerConfig = ControllerConfig()
    tuner: TunerConfig = TunerConfig()
    svm: SvmSettings = SvmSettings()
    explore: ExploreSettings = ExploreSettings()
    bench: BenchSettings = BenchSettings()
    sample_count: int = 1000

    def scenario(self) -> Scenario:
        if self.scenario_path is not None:
            return load_scenario(self.scenario_path)
        return training_scenario(goal_offset=self.goal_offset)


_CONTROLLER_KEYS = {f.name for f in fields(ControllerConfig)} - {"goal"}
_TUNER_KEYS = {f.name for f in fields(TunerConfig)} - {"nu_min", "nu_max"} | {"nu_abs"}

_SCHEMA = {
    "run": {"seed": int, "workers": int},
    "scenario": {"path": str, "goal_offset": float},
    "params": {"p1": float, "p2": float, "q1": float, "q2": float},
    "controller": {k: (str if k in ("integrator",) else float) for k in _CONTROLLER_KEYS},
    "tuner": {
        k: (str if k == "mode" else (int if k in ("max_iters", "rng_seed", "retry_cap") else float))
        for k in _TUNER_KEYS
    },
    "svm": {
        "c1": float,
        "c2": float,
        "degree": int,
        "C": float,
        "kkt_tol": float,
        "max_passes": int,
    },
    "sample": {"count": int},
    "explore": {
        "episodes": int,
        "n_obstacles": int,
        "radius_min": float,
        "radius_max": float,
        "motion_step": float,
        "fov": float,
        "range": float,
        "noise": float,
    },
    "bench": {"m_list": str, "pool": int, "timing_steps": int},
}


def _coerce(section, key, raw, typ):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """Parse an INI file into a RunConfig; None gives pure defaults."""
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str  # keys are case-sensitive, e.g. [svm] C
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        unknown_sections = set(parser.sections()) - set(_SCHEMA)
        if unknown_sections:
            raise ConfigError(f"unknown config sections: {sorted(unknown_sections)}")
        for section in parser.sections():
            schema = _SCHEMA[section]
            seen = dict(parser.items(section))
            unknown = set(seen) - set(schema)
            if unknown:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
            values[section] = {
                k: _coerce(section, k, v, schema[k]) for k, v in seen.items()
            }

    run = values.get("run", {})
    scen = values.get("scenario", {})
    ctrl = dict(values.get("controller", {}))
    tun = dict(values.get("tuner", {}))
    if "integrator" in ctrl and ctrl["integrator"] not in ("rk4", "euler"):
        raise ConfigError(f"[controller] integrator must be rk4|euler, got {ctrl['integrator']!r}")
    if "nu_abs" in tun:
        a = float(tun.pop("nu_abs"))
        if a <= 0:
            raise ConfigError("[tuner] nu_abs must be positive")
        tun["nu_max"] = (a,) * 4
        tun["nu_min"] = (-a,) * 4

    params = None
    if "params" in values:
        p = values["params"]
        missing = {"p1", "p2", "q1", "q2"} - set(p)
        if missing:
            raise ConfigError(f"[params] missing keys: {sorted(missing)}")
        params = ClassKParams((p["p1"], p["p2"]), (p["q1"], p["q2"]))

    svm_v = values.get("svm", {})
    kernel = KernelParams(
        c1=svm_v.get("c1", 0.8), c2=svm_v.get("c2", 0.5), degree=svm_v.get("degree", 7)
    )
    exp_v = values.get("explore", {})
    sensor = SensorSpec(
        fov=exp_v.get("fov", SensorSpec().fov),
        range=exp_v.get("range", SensorSpec().range),
        noise=exp_v.get("noise", SensorSpec().noise),
    )
    bench_v = dict(values.get("bench", {}))
    if "m_list" in bench_v:
        try:
            bench_v["m_list"] = tuple(int(t) for t in bench_v["m_list"].split(",") if t.strip())
        except ValueError:
            raise ConfigError(f"[bench] m_list must be comma-separated integers") from None

    try:
        return RunConfig(
            seed=run.get("seed", 0),
            workers=run.get("workers", 1),
            scenario_path=scen.get("path"),
            goal_offset=scen.get("goal_offset", 2.0),
            params=params,
            controller=ControllerConfig(**ctrl),
            tuner=TunerConfig(**tun),
            svm=SvmSettings(
                kernel=kernel,
                C=svm_v.get("c", svm_v.get("C", 100.0)),
                kkt_tol=svm_v.get("kkt_tol", 1e-3),
                max_passes=svm_v.get("max_passes", 10_000),
            ),
            explore=ExploreSettings(
                episodes=exp_v.get("episodes", 20),
                n_obstacles=exp_v.get("n_obstacles", 3),
                radius_min=exp_v.get("radius_min", 3.0),
                radius_max=exp_v.get("radius_max", 9.0),
                motion_step=exp_v.get("motion_step", 0.05),
                sensor=sensor,
            ),
            bench=BenchSettings(
                m_list=bench_v.get("m_list", (500, 1000, 2000)),
                pool=bench_v.get("pool", 20),
                timing_steps=bench_v.get("timing_steps", 2000),
            ),
            sample_count=values.get("sample", {}).get("count", 1000),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
