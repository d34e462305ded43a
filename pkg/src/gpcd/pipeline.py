"""Experiment pipeline: simulate, train, evaluate, detect, report.

The in-memory entry points (:func:`run_experiment`,
:func:`run_detection_experiment`) power both the CLI commands and the
acceptance suite; the ``cmd_*`` functions add the on-disk layout and the
hash manifest. Every stage derives its random seed from the master seed and
a fixed label, so a full rerun from one config reproduces every artifact
byte for byte.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import build_optimizer_config, build_plant, build_sim_config, \
    config_to_text
from .detector import ThresholdConfig, calibrate_threshold, exceedances, \
    monitoring_signal, predicted_currents, segment_events, write_events_jsonl
from .estimators import build_estimator, load_estimator, nmse, save_estimator
from .features import augmented_features, measured_currents, velocity_index
from .gp import subset_downsample
from .simulate import generate_dataset
from .trajectory import Trajectory
from .io import update_manifest, write_json

N_JOINTS = 2
REGIMES = ("quasistatic", "dynamic")
DATASETS = ("near", "generalization")
_MIN_REGIME_SAMPLES = 10


def derive_seed(master: int, label: str) -> int:
    """Stable per-purpose child seed of the master seed."""
    seq = np.random.SeedSequence((int(master), zlib.crc32(label.encode())))
    return int(seq.generate_state(1)[0])


@dataclass
class ExperimentResult:
    plant: object
    datasets: dict
    models: dict
    rows: list
    friction_shares: np.ndarray
    subset_indices: dict = field(default_factory=dict)


def simulate_datasets(config: dict) -> dict:
    """All trajectory sets the experiment consumes, keyed by purpose."""
    plant = build_plant(config)
    seed = config["seed"]

    def run(label, scenario):
        sim = build_sim_config(config, derive_seed(seed, label),
                               description=label)
        return generate_dataset(scenario, plant=plant, config=sim)

    detector = config["detector"]
    base = dict(config["detect"]["scenario"]["base"])
    total = detector["validation_duration"]
    validation = dict(base)
    validation["duration"] = total - base.get("hold_time", 0.0)
    calibration = []
    for index, scenario in enumerate(detector["calibration"]):
        calibration.extend(run(f"calibration-{index}", scenario))
    datasets = {
        "train": run("train", config["train"]["scenario"]),
        "generalization": (run("gen-waypoints",
                               config["generalization"]["waypoints"])
                           + run("gen-circle",
                                 config["generalization"]["circle"])),
        "calibration": calibration,
        "collision": run("collision", config["detect"]["scenario"]),
        "validation": run("validation", validation),
    }
    return datasets


def train_models(config: dict, train_trajectories) -> dict:
    """Fit every configured estimator variant for every joint."""
    plant = build_plant(config)
    x = augmented_features(train_trajectories)
    currents = measured_currents(train_trajectories)
    seed = config["seed"]
    subset_size = config["train"]["subset_size"]
    band = config["sim"]["velocity_band"]
    models = {}
    for variant in config["estimators"]:
        per_joint = []
        for joint in range(N_JOINTS):
            options = {"band": band}
            if variant != "parametric":
                options.update(
                    optimizer=build_optimizer_config(
                        config, derive_seed(seed, f"opt-{variant}-{joint}")),
                    subset_size=subset_size,
                    subset_seed=derive_seed(seed, f"subset-{joint}"),
                )
            estimator = build_estimator(variant, plant.motor, joint, **options)
            per_joint.append(estimator.fit(x, currents[:, joint]))
        models[variant] = per_joint
    return models


def _regime_mask(x, joint, band):
    return np.abs(x[:, velocity_index(joint)]) < band


def training_subset_indices(config: dict, train_trajectories) -> dict:
    """The per-joint exact-inference subset, recomputed from its seed."""
    x = augmented_features(train_trajectories)
    band = config["sim"]["velocity_band"]
    size = min(config["train"]["subset_size"], len(x))
    return {
        joint: subset_downsample(_regime_mask(x, joint, band), size,
                                 derive_seed(config["seed"], f"subset-{joint}"))
        for joint in range(N_JOINTS)
    }


def evaluate_models(config: dict, models: dict, datasets: dict) -> list:
    """nMSE rows per (estimator, joint, regime, dataset split)."""
    band = config["sim"]["velocity_band"]
    x_train = augmented_features(datasets["train"])
    i_train = measured_currents(datasets["train"])
    x_gen = augmented_features(datasets["generalization"])
    i_gen = measured_currents(datasets["generalization"])
    subsets = training_subset_indices(config, datasets["train"])

    rows = []
    for joint in range(N_JOINTS):
        held_out = np.setdiff1d(np.arange(len(x_train)), subsets[joint])
        splits = {
            "near": (x_train[held_out], i_train[held_out, joint]),
            "generalization": (x_gen, i_gen[:, joint]),
        }
        for dataset_name in DATASETS:
            x_eval, y_eval = splits[dataset_name]
            static = _regime_mask(x_eval, joint, band)
            masks = {"quasistatic": static, "dynamic": ~static}
            predictions = {variant: models[variant][joint].predict(x_eval)
                           for variant in models}
            for regime in REGIMES:
                mask = masks[regime]
                targets = y_eval[mask]
                if targets.size < _MIN_REGIME_SAMPLES or targets.var() <= 0:
                    continue
                for variant in models:
                    rows.append({
                        "estimator": variant,
                        "joint": joint,
                        "regime": regime,
                        "dataset": dataset_name,
                        "n_samples": int(targets.size),
                        "nmse": nmse(targets, predictions[variant][mask]),
                    })
    return rows


def friction_torque_share(trajectories, plant) -> np.ndarray:
    """Per-joint RMS friction torque as a fraction of RMS drive torque.

    Reconstructed from logged states and commands with the simulator's
    ground-truth parameters: held joints carry the holding torque, moving
    joints the kinetic plus viscous torque.
    """
    arm = plant.arm
    friction = plant.friction
    total_f = np.zeros(N_JOINTS)
    total_drive = np.zeros(N_JOINTS)
    count = 0
    for traj in trajectories:
        drive = traj.i_cmd * arm.motor.current_gain
        kinetic = (friction.kinetic * np.sign(traj.dq)
                   + friction.viscous * traj.dq)
        gravity = np.stack([arm.gravity_torque(q) for q in traj.q])
        coriolis = np.stack([arm.coriolis_torque(q, dq)
                             for q, dq in zip(traj.q, traj.dq)])
        holding = (drive + traj.tau_ext - gravity - coriolis
                   - arm.motor.damping_eq * traj.dq)
        tau_f = np.where(traj.stuck, holding, kinetic)
        total_f += np.sum(tau_f**2, axis=0)
        total_drive += np.sum(drive**2, axis=0)
        count += len(traj)
    return np.sqrt(total_f / count) / np.sqrt(total_drive / count)


def run_experiment(config: dict) -> ExperimentResult:
    """Simulate, train and evaluate in memory."""
    datasets = simulate_datasets(config)
    models = train_models(config, datasets["train"])
    rows = evaluate_models(config, models, datasets)
    plant = build_plant(config)
    shares = friction_torque_share(datasets["generalization"], plant)
    return ExperimentResult(
        plant=plant, datasets=datasets, models=models, rows=rows,
        friction_shares=shares,
        subset_indices=training_subset_indices(config, datasets["train"]),
    )


@dataclass
class DetectionOutcome:
    thresholds: ThresholdConfig
    events: list
    validation_events: list
    ground_truth: list
    collision_signal: object
    validation_signal: object


def run_detection_experiment(config: dict, models, datasets) -> DetectionOutcome:
    """Calibrate thresholds on collision-free runs, then detect."""
    detector = config["detector"]
    tau = detector["filter_tau"]
    calibration_signals = [monitoring_signal(models, traj, filter_tau=tau)
                           for traj in datasets["calibration"]]
    thresholds = calibrate_threshold(calibration_signals,
                                     quantile=detector["quantile"],
                                     margin=detector["margin"])
    collision = datasets["collision"][0]
    validation = datasets["validation"][0]
    collision_signal = monitoring_signal(models, collision, filter_tau=tau)
    validation_signal = monitoring_signal(models, validation, filter_tau=tau)
    truth = collision.metadata.get("collision_intervals", [])
    events = segment_events(collision_signal, thresholds,
                            min_duration=detector["min_duration"],
                            merge_gap=detector["merge_gap"],
                            ground_truth=truth)
    validation_events = segment_events(validation_signal, thresholds,
                                       min_duration=detector["min_duration"],
                                       merge_gap=detector["merge_gap"])
    return DetectionOutcome(thresholds=thresholds, events=events,
                            validation_events=validation_events,
                            ground_truth=truth,
                            collision_signal=collision_signal,
                            validation_signal=validation_signal)


# -- on-disk command layer --------------------------------------------------


_DATA_SETS = ("train", "generalization", "calibration", "collision",
              "validation")


def _data_dir(out_dir) -> Path:
    return Path(out_dir) / "data"


def cmd_simulate(config: dict, out_dir) -> dict:
    """Write every trajectory set plus metadata and the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    datasets = simulate_datasets(config)
    entries = {}
    config_path = out_dir / "config.txt"
    config_path.write_text(config_to_text(config))
    entries["config.txt"] = config_path
    for name in _DATA_SETS:
        directory = _data_dir(out_dir) / name
        directory.mkdir(parents=True, exist_ok=True)
        for index, traj in enumerate(datasets[name]):
            path = directory / f"traj_{index:03d}.csv"
            traj.write_csv(path)
            rel = path.relative_to(out_dir)
            entries[str(rel)] = path
            meta = path.with_name(path.stem + ".meta.json")
            entries[str(meta.relative_to(out_dir))] = meta
    update_manifest(out_dir, entries)
    return {"files": sorted(entries)}


def _load_dataset(out_dir, name) -> list:
    directory = _data_dir(out_dir) / name
    paths = sorted(directory.glob("traj_*.csv"))
    if not paths:
        raise FileNotFoundError(
            f"no simulated data under {directory}; run `gpcd simulate` first"
        )
    return [Trajectory.read_csv(path) for path in paths]


def _model_path(out_dir, variant, joint) -> Path:
    return Path(out_dir) / "models" / f"{variant}_joint{joint + 1}.model"


def cmd_train(config: dict, out_dir) -> dict:
    """Fit and persist every (variant, joint) model plus loss traces."""
    out_dir = Path(out_dir)
    train = _load_dataset(out_dir, "train")
    models = train_models(config, train)
    (out_dir / "models").mkdir(exist_ok=True)
    entries = {}
    for variant, per_joint in models.items():
        for joint, model in enumerate(per_joint):
            path = _model_path(out_dir, variant, joint)
            save_estimator(model, path)
            entries[str(path.relative_to(out_dir))] = path
            if hasattr(model, "loss_trace_"):
                trace_path = path.with_name(path.stem + "_trace.csv")
                with trace_path.open("w", newline="") as fh:
                    writer = csv.writer(fh)
                    writer.writerow(["iteration", "batch_loss", "eval_loss"])
                    for iteration, batch_loss, eval_loss in model.loss_trace_:
                        writer.writerow([iteration, f"{batch_loss:.17g}",
                                         f"{eval_loss:.17g}"])
                entries[str(trace_path.relative_to(out_dir))] = trace_path
    update_manifest(out_dir, entries)
    return {"files": sorted(entries)}


def _load_models(config: dict, out_dir) -> dict:
    models = {}
    for variant in config["estimators"]:
        per_joint = []
        for joint in range(N_JOINTS):
            path = _model_path(out_dir, variant, joint)
            if not path.exists():
                raise FileNotFoundError(
                    f"missing model file {path}; run `gpcd train` first"
                )
            per_joint.append(load_estimator(path))
        models[variant] = per_joint
    return models


def cmd_eval(config: dict, out_dir) -> Path:
    """Evaluate persisted models and write the nMSE report table."""
    out_dir = Path(out_dir)
    models = _load_models(config, out_dir)
    datasets = {name: _load_dataset(out_dir, name)
                for name in ("train", "generalization")}
    rows = evaluate_models(config, models, datasets)
    eval_dir = out_dir / "eval"
    eval_dir.mkdir(exist_ok=True)
    report_path = eval_dir / "report.csv"
    with report_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "joint", "regime", "dataset",
                         "n_samples", "nmse"])
        for row in rows:
            writer.writerow([row["estimator"], row["joint"] + 1,
                             row["regime"], row["dataset"], row["n_samples"],
                             f"{row['nmse']:.17g}"])
    update_manifest(out_dir, {"eval/report.csv": report_path})
    return report_path


def cmd_detect(config: dict, out_dir, trajectory_path=None) -> dict:
    """Detect collisions on a trajectory using the gated models.

    Calibrates thresholds from the stored calibration runs on first use and
    caches them under ``detect/thresholds.json``.
    """
    out_dir = Path(out_dir)
    models = _load_models({**config, "estimators": ["gated"]}, out_dir)["gated"]
    detector = config["detector"]
    detect_dir = out_dir / "detect"
    detect_dir.mkdir(exist_ok=True)
    thresholds_path = detect_dir / "thresholds.json"
    if thresholds_path.exists():
        from .io import read_json
        thresholds = ThresholdConfig.from_dict(read_json(thresholds_path))
    else:
        calibration = _load_dataset(out_dir, "calibration")
        signals = [monitoring_signal(models, traj,
                                     filter_tau=detector["filter_tau"])
                   for traj in calibration]
        thresholds = calibrate_threshold(signals,
                                         quantile=detector["quantile"],
                                         margin=detector["margin"])
        write_json(thresholds_path, thresholds.to_dict())

    if trajectory_path is None:
        trajectory = _load_dataset(out_dir, "collision")[0]
    else:
        trajectory = Trajectory.read_csv(trajectory_path)
    signal = monitoring_signal(models, trajectory,
                               filter_tau=detector["filter_tau"])
    truth = trajectory.metadata.get("collision_intervals", [])
    events = segment_events(signal, thresholds,
                            min_duration=detector["min_duration"],
                            merge_gap=detector["merge_gap"],
                            ground_truth=truth or None)
    events_path = write_events_jsonl(events, detect_dir / "events.jsonl")
    trace_path = _write_detect_trace(detect_dir / "trace.csv", trajectory,
                                     models, signal, thresholds)
    update_manifest(out_dir, {
        "detect/thresholds.json": thresholds_path,
        "detect/events.jsonl": events_path,
        "detect/trace.csv": trace_path,
    })
    return {"events": events, "thresholds": thresholds,
            "events_path": events_path, "trace_path": trace_path}


def _write_detect_trace(path, trajectory, models, signal, thresholds) -> Path:
    i_hat = predicted_currents(models, trajectory)
    flags = exceedances(signal, thresholds)
    header = ["t"]
    for joint in range(N_JOINTS):
        suffix = str(joint + 1)
        header += [f"i{suffix}", f"ihat{suffix}", f"dq{suffix}", f"s{suffix}",
                   f"flag{suffix}"]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(len(trajectory)):
            row = [f"{trajectory.t[k]:.17g}"]
            for joint in range(N_JOINTS):
                row += [f"{trajectory.i_meas[k, joint]:.17g}",
                        f"{i_hat[k, joint]:.17g}",
                        f"{trajectory.dq[k, joint]:.17g}",
                        f"{signal.values[k, joint]:.17g}",
                        str(int(flags[k, joint]))]
            writer.writerow(row)
    return Path(path)


def cmd_report(config: dict, out_dir) -> str:
    """Summarize the evaluation table and any detection events as text."""
    out_dir = Path(out_dir)
    report_path = out_dir / "eval" / "report.csv"
    lines = []
    if report_path.exists():
        with report_path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        lines.append("nMSE by estimator / joint / regime / dataset")
        for row in rows:
            lines.append(
                f"  {row['estimator']:>15s}  joint {row['joint']}  "
                f"{row['regime']:>11s}  {row['dataset']:>14s}  "
                f"n={row['n_samples']:>6s}  nmse={float(row['nmse']):.6g}"
            )
    else:
        lines.append("no evaluation report found (run `gpcd eval`)")
    events_path = out_dir / "detect" / "events.jsonl"
    if events_path.exists():
        import json
        events = [json.loads(line)
                  for line in events_path.read_text().splitlines() if line]
        lines.append(f"detection events: {len(events)}")
        for event in events:
            joints = ",".join(str(j + 1) for j in event["joints"])
            latency = event.get("latency")
            extra = f"  latency={latency:.3f}s" if latency is not None else ""
            lines.append(f"  [{event['start']:.3f}, {event['end']:.3f}]s "
                         f"joints {joints}{extra}")
    text = "\n".join(lines) + "\n"
    report_txt = out_dir / "report.txt"
    report_txt.write_text(text)
    update_manifest(out_dir, {"report.txt": report_txt})
    return text
