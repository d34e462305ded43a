"""Experiment configuration: defaults, file format and overrides.

Config files are plain text with one dotted key per line::

    # comment
    seed = 7
    sim.current_noise_std = 0.005
    train.scenario.count = 40
    estimators = ["parametric", "semiparametric", "gated"]

Values are parsed as JSON when possible and kept as strings otherwise.
Dotted keys nest; later assignments win. The same ``key=value`` syntax is
accepted on the command line through repeated ``--set`` flags.
"""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path

from .dynamics import DynamicParams, FrictionParams, MotorParams
from .gp import OptimizerConfig
from .simulate import ControllerParams, Plant, SimConfig


def default_config(paper_scale: bool = False) -> dict:
    """Desk-scale experiment defaults; ``paper_scale`` multiplies the data
    volumes up to the reference protocol sizes (slow)."""
    cfg = {
        "seed": 0,
        "plant": {
            "masses": [2.0, 1.0],
            "lengths": [0.5, 0.5],
            "com_offsets": [0.25, 0.25],
            "inertias": [2.0 * 0.25 / 12.0, 1.0 * 0.25 / 12.0],
            "gravity": 9.81,
            "rotor_inertia": [1e-4, 1e-4],
            "motor_damping": [1e-4, 1e-4],
            "torque_constant": [0.1, 0.1],
            "gear_ratio": [100.0, 100.0],
            "friction_static": [0.6, 0.6],
            "friction_kinetic": [0.4, 0.4],
            "friction_viscous": [0.3, 0.3],
            "kp": [20.0, 20.0],
            "kd": [3.0, 3.0],
            "ki": [0.5, 0.5],
            "saturation": [10.0, 10.0],
            "windup_limit": [3.0, 3.0],
        },
        "sim": {
            "dt": 8e-3,
            "current_noise_std": 0.005,
            "disturbance_std": 0.01,
            "velocity_band": 1e-2,
            "differenced_acceleration": False,
        },
        "train": {
            "scenario": {"kind": "random-waypoints", "count": 40, "moves": 2,
                         "move_time": 1.2, "dwell_time": [0.5, 6.0],
                         "angle_range": [0.2, 2.9]},
            "subset_size": 2000,
        },
        "generalization": {
            "waypoints": {"kind": "random-waypoints", "count": 8, "moves": 2,
                          "move_time": 1.2, "dwell_time": [0.5, 6.0],
                          "angle_range": [0.2, 2.9]},
            "circle": {"kind": "circle-track", "radius": 0.3, "speed": 0.03,
                       "duration": 16.0},
        },
        "optimizer": {
            "learning_rate": 0.05,
            "iterations": 200,
            "batch_size": 256,
            "eval_interval": 10,
            "tolerance": 1e-3,
            "patience": 10,
        },
        "estimators": ["parametric", "semiparametric", "gated"],
        "detector": {
            "quantile": 0.9999,
            "margin": 1.2,
            "filter_tau": 0.05,
            "min_duration": 0.024,
            "merge_gap": 0.08,
            # Collision-free runs varying the hold pose (different arc
            # lengths) with holds at least as long as anything monitored.
            "calibration": [
                {"kind": "circle-track", "radius": 0.3, "speed": 0.03,
                 "duration": 18.0, "hold_time": 25.0},
                {"kind": "circle-track", "radius": 0.3, "speed": 0.03,
                 "duration": 30.0, "hold_time": 25.0},
                {"kind": "circle-track", "radius": 0.3, "speed": 0.03,
                 "duration": 42.0, "hold_time": 25.0},
            ],
            "validation_duration": 60.0,
        },
        "detect": {
            "scenario": {
                "kind": "collision-episodes",
                "base": {"kind": "circle-track", "radius": 0.3, "speed": 0.03,
                         "duration": 20.0, "hold_time": 20.0},
                "schedule": [
                    {"joint": 0, "start": 6.0, "duration": 1.0,
                     "amplitude": 3.5},
                    {"joint": 0, "start": 13.0, "duration": 1.0,
                     "amplitude": -3.5},
                    {"joint": 0, "start": 27.0, "duration": 1.0,
                     "amplitude": 3.5},
                    {"joint": 0, "start": 34.0, "duration": 1.0,
                     "amplitude": -3.5},
                ],
            },
        },
    }
    if paper_scale:
        # Reference protocol sizes: ~190 waypoints / ~90k training samples,
        # 5000-point exact-inference subset, ~23k generalization samples.
        cfg["train"]["scenario"]["count"] = 64
        cfg["train"]["subset_size"] = 5000
        cfg["generalization"]["waypoints"]["count"] = 12
        cfg["generalization"]["circle"]["duration"] = 40.0
        cfg["optimizer"]["iterations"] = 400
    return cfg


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(config: dict, dotted_key: str, value) -> None:
    """Assign ``value`` at a dotted path, creating nested tables as needed."""
    parts = dotted_key.strip().split(".")
    node = config
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValueError(f"config key {dotted_key!r} descends into a "
                             "non-table value")
    node[parts[-1]] = value


def parse_config_file(path) -> dict:
    """Parse a key/value config file into a nested dict (no defaults)."""
    out: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        set_dotted(out, key.strip(), parse_value(value))
    return out


def deep_update(base: dict, overrides: dict) -> dict:
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            deep_update(base[key], value)
        else:
            base[key] = value
    return base


def load_config(path=None, overrides=None, seed=None,
                paper_scale: bool = False) -> dict:
    """Defaults, optionally overlaid with a config file, --set pairs and a
    seed. Returns a plain nested dict."""
    config = default_config(paper_scale=paper_scale)
    if path is not None:
        deep_update(config, parse_config_file(path))
    for dotted_key, raw in (overrides or []):
        set_dotted(config, dotted_key, parse_value(raw))
    if seed is not None:
        config["seed"] = int(seed)
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    if not isinstance(config.get("seed"), int):
        raise ValueError("seed must be an integer (wall-clock seeding is "
                         "not supported)")
    for variant in config.get("estimators", []):
        if variant not in ("parametric", "semiparametric", "gated"):
            raise ValueError(f"unknown estimator variant {variant!r}")
    dt = config["sim"]["dt"]
    if not (isinstance(dt, (int, float)) and math.isfinite(dt) and dt > 0):
        raise ValueError("sim.dt must be a positive number")


def build_plant(config: dict) -> Plant:
    p = config["plant"]
    return Plant(
        dynamic=DynamicParams(masses=p["masses"], lengths=p["lengths"],
                              com_offsets=p["com_offsets"],
                              inertias=p["inertias"], gravity=p["gravity"]),
        motor=MotorParams(rotor_inertia=p["rotor_inertia"],
                          damping=p["motor_damping"],
                          torque_constant=p["torque_constant"],
                          gear_ratio=p["gear_ratio"]),
        friction=FrictionParams(static=p["friction_static"],
                                kinetic=p["friction_kinetic"],
                                viscous=p["friction_viscous"]),
        controller=ControllerParams(kp=p["kp"], kd=p["kd"], ki=p["ki"],
                                    saturation=p["saturation"],
                                    windup_limit=p["windup_limit"]),
    )


def build_sim_config(config: dict, seed: int, description: str = "") -> SimConfig:
    s = config["sim"]
    return SimConfig(dt=s["dt"], current_noise_std=s["current_noise_std"],
                     disturbance_std=s["disturbance_std"], seed=seed,
                     description=description,
                     velocity_band=s["velocity_band"],
                     differenced_acceleration=s["differenced_acceleration"])


def build_optimizer_config(config: dict, seed: int) -> OptimizerConfig:
    o = config["optimizer"]
    return OptimizerConfig(learning_rate=o["learning_rate"],
                           iterations=o["iterations"],
                           batch_size=o["batch_size"],
                           eval_interval=o["eval_interval"],
                           tolerance=o["tolerance"], patience=o["patience"],
                           seed=seed)


def config_to_text(config: dict) -> str:
    """Flatten a nested config back to the dotted key/value format."""
    lines = []

    def walk(node, prefix):
        for key in sorted(node):
            value = node[key]
            dotted = f"{prefix}{key}"
            if isinstance(value, dict):
                walk(value, dotted + ".")
            else:
                lines.append(f"{dotted} = {json.dumps(value)}")

    walk(copy.deepcopy(config), "")
    return "\n".join(lines) + "\n"
