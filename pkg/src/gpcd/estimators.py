"""Per-joint motor-current estimators.

Three variants are built from the same augmented feature matrix:

* ``parametric``      - physics-only least squares model with kinetic
                        friction columns.
* ``semiparametric``  - the parametric model as GP mean plus an RBF kernel
                        on the standard inputs (q, dq, ddq).
* ``gated``           - the parametric mean with friction columns nulled in
                        the quasi-static band, plus a two-part kernel: a
                        velocity-gated RBF over the full augmented inputs
                        (active only between quasi-static samples) summed
                        with an RBF over the standard inputs.

Motor and gearbox constants are nameplate data, so the least squares target
is the torque-equivalent load ``gain * i - reflected_inertia * ddq -
drive_damping * dq``; the recovered weights are therefore in link-side torque
units and the drive terms are added back as a known feedforward when
predicting currents.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dynamics import DEFAULT_VELOCITY_BAND, MotorParams
from .errors import DataCoverageError, ModelFormatError, \
    RankDeficientRegressorError
from .features import N_JOINTS, FeatureScaler, regressor_matrix, velocity_index
from .gp import ExactGPRegressor, OptimizerConfig, optimize_hyperparameters, \
    subset_downsample
from .io import load_arrays, save_arrays
from .kernels import GatedKernel, RBFKernel, SumKernel, VelocityGate, \
    kernel_from_dict

VARIANTS = ("parametric", "semiparametric", "gated")

MODEL_SCHEMA_VERSION = 1


def nmse(targets, predictions, reference=None) -> float:
    """Mean squared error normalized by the target variance of a reference set.

    ``reference`` defaults to ``targets`` itself; its variance must be
    positive.
    """
    targets = np.asarray(targets, dtype=float).ravel()
    predictions = np.asarray(predictions, dtype=float).ravel()
    if targets.size != predictions.size:
        raise ValueError("targets and predictions must have equal length")
    if targets.size == 0:
        raise ValueError("cannot evaluate an empty set")
    ref = targets if reference is None else np.asarray(reference, float).ravel()
    variance = float(np.var(ref))
    if variance <= 0:
        raise ValueError("reference variance must be positive")
    return float(np.mean((targets - predictions) ** 2)) / variance


def _split_motion(x, joint):
    x = np.asarray(x, dtype=float)
    dq = x[:, velocity_index(joint)]
    ddq = x[:, 2 * N_JOINTS + joint]
    return dq, ddq


class ParametricCurrentModel(BaseEstimator, RegressorMixin):
    """Least squares physics model of one joint's motor current.

    Regresses the torque-equivalent load on the rigid-body regressor and the
    friction columns ``[sign(dq), dq]``. Columns that are identically zero on
    the dataset (parameters this joint's row never touches, or gated-out
    friction columns) are excluded from the fit and get zero weight. On the
    remaining columns a single collinear direction is rescued with a tiny
    ridge term (1e-8 times the Gram trace); anything worse raises
    :class:`RankDeficientRegressorError`.
    """

    def __init__(self, motor: MotorParams, joint: int = 0, gated: bool = False,
                 band: float = DEFAULT_VELOCITY_BAND, rcond: float = 1e-10):
        self.motor = motor
        self.joint = joint
        self.gated = gated
        self.band = band
        self.rcond = rcond

    def _design(self, x):
        return regressor_matrix(x, self.joint, gated=self.gated, band=self.band)

    def _feedforward(self, x):
        dq, ddq = _split_motion(x, self.joint)
        return (self.motor.inertia_offset[self.joint] * ddq
                + self.motor.damping_eq[self.joint] * dq)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        gain = self.motor.current_gain[self.joint]
        design = self._design(X)
        target = gain * y - self._feedforward(X)
        active = ~np.all(design == 0.0, axis=0)
        reduced = design[:, active]
        p = reduced.shape[1]
        solution, _, rank, singular = np.linalg.lstsq(reduced, target,
                                                      rcond=self.rcond)
        if rank < p - 1:
            raise RankDeficientRegressorError(
                f"regressor rank {rank} of {p} identifiable columns; the "
                "dataset does not excite the model"
            )
        if rank < p:
            gram_matrix = reduced.T @ reduced
            ridge = 1e-8 * np.trace(gram_matrix)
            solution = np.linalg.solve(gram_matrix + ridge * np.eye(p),
                                       reduced.T @ target)
        weights = np.zeros(design.shape[1])
        weights[active] = solution
        self.weights_ = weights
        self.identifiable_ = active
        self.rank_ = int(rank)
        self.condition_number_ = float(
            singular[0] / singular[-1] if singular[-1] > 0 else np.inf
        )
        return self

    def predict(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X)
        gain = self.motor.current_gain[self.joint]
        return (self._design(X) @ self.weights_ + self._feedforward(X)) / gain


class SemiParametricCurrentModel(BaseEstimator, RegressorMixin):
    """GP current model with a physics-based mean for one joint.

    With ``augmented=False`` the kernel is an RBF over the standard inputs
    and the mean uses the ungated regressor. With ``augmented=True`` the mean
    regressor is gated and the kernel adds a velocity-gated RBF over all
    augmented inputs, so the extra term only acts between quasi-static
    samples of this joint.

    The parametric weights are fitted first and then held fixed; the GP
    explains the residual. Hyperparameters are tuned by minibatch ADAM over
    the full training set, after which exact inference runs on a stratified
    subset of ``subset_size`` points (all points when ``None``).
    """

    def __init__(self, motor: MotorParams, joint: int = 0,
                 augmented: bool = False, band: float = DEFAULT_VELOCITY_BAND,
                 noise_variance: float | None = None,
                 optimizer: OptimizerConfig | None = None,
                 subset_size: int | None = None, subset_seed: int = 0,
                 standardize: bool = True):
        self.motor = motor
        self.joint = joint
        self.augmented = augmented
        self.band = band
        self.noise_variance = noise_variance
        self.optimizer = optimizer
        self.subset_size = subset_size
        self.subset_seed = subset_seed
        self.standardize = standardize

    def _build_kernel(self, target_variance, length_scales, scaler):
        standard_dims = np.arange(3 * N_JOINTS)
        kinetic = RBFKernel(variance=target_variance,
                            length_scales=length_scales[standard_dims],
                            active_dims=standard_dims)
        if not self.augmented:
            return kinetic
        col = velocity_index(self.joint)
        if scaler is None:
            gate = VelocityGate(index=col, threshold=self.band)
        else:
            gate = VelocityGate(index=col, threshold=self.band,
                                scale=float(scaler.scale_[col]),
                                offset=float(scaler.mean_[col]))
        static = GatedKernel(
            RBFKernel(variance=target_variance, length_scales=length_scales),
            gate,
        )
        return SumKernel([static, kinetic])

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[1] != 6 * N_JOINTS:
            raise ValueError(
                f"expected the augmented feature matrix with {6 * N_JOINTS} "
                f"columns, got {X.shape[1]}"
            )
        static = np.abs(X[:, velocity_index(self.joint)]) < self.band
        if self.augmented and (not static.any() or static.all()):
            missing = "quasi-static" if not static.any() else "dynamical"
            raise DataCoverageError(
                f"training data contains no {missing} samples for joint "
                f"{self.joint}; the gated model needs both regimes"
            )
        self.parametric_ = ParametricCurrentModel(
            self.motor, joint=self.joint, gated=self.augmented, band=self.band
        ).fit(X, y)
        residual = y - self.parametric_.predict(X)

        self.scaler_ = FeatureScaler().fit(X) if self.standardize else None
        xs = X if self.scaler_ is None else self.scaler_.transform(X)
        length_scales = np.std(xs, axis=0)
        length_scales[length_scales == 0] = 1.0
        target_variance = max(float(np.var(residual)), 1e-12)
        kernel = self._build_kernel(target_variance, length_scales, self.scaler_)
        noise0 = (self.noise_variance if self.noise_variance is not None
                  else max(0.01 * target_variance, 1e-12))
        result = optimize_hyperparameters(kernel, xs, residual, noise0,
                                          self.optimizer)
        self.kernel_ = result.kernel
        self.noise_variance_ = result.noise_variance
        self.loss_trace_ = result.trace
        self.initial_loss_ = result.initial_loss
        self.best_loss_ = result.best_loss

        if self.subset_size is not None and self.subset_size < len(X):
            idx = subset_downsample(static, self.subset_size, self.subset_seed)
        else:
            idx = np.arange(len(X))
        self.subset_indices_ = idx
        self.gp_ = ExactGPRegressor(self.kernel_, self.noise_variance_).fit(
            xs[idx], residual[idx]
        )
        return self

    def _transform(self, X):
        return X if self.scaler_ is None else self.scaler_.transform(X)

    def predict(self, X, return_std=False):
        check_is_fitted(self, "gp_")
        X = check_array(X)
        mean = self.parametric_.predict(X)
        if return_std:
            gp_mean, std = self.gp_.predict(self._transform(X), return_std=True)
            return mean + gp_mean, std
        return mean + self.gp_.predict(self._transform(X))


def build_estimator(variant: str, motor: MotorParams, joint: int, **options):
    """Construct one of the named estimator variants for a joint."""
    if variant == "parametric":
        allowed = {"band", "rcond"}
        extras = {k: v for k, v in options.items() if k in allowed}
        return ParametricCurrentModel(motor, joint=joint, gated=False, **extras)
    if variant == "semiparametric":
        return SemiParametricCurrentModel(motor, joint=joint, augmented=False,
                                          **options)
    if variant == "gated":
        return SemiParametricCurrentModel(motor, joint=joint, augmented=True,
                                          **options)
    raise ValueError(f"unknown estimator variant {variant!r}; expected one of "
                     f"{VARIANTS}")


# -- persistence -------------------------------------------------------------


def _motor_to_dict(motor: MotorParams) -> dict:
    return {
        "rotor_inertia": motor.rotor_inertia.tolist(),
        "damping": motor.damping.tolist(),
        "torque_constant": motor.torque_constant.tolist(),
        "gear_ratio": motor.gear_ratio.tolist(),
    }


def save_estimator(estimator, path):
    """Persist a fitted estimator to a versioned container file."""
    meta = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "joint": int(estimator.joint),
        "band": float(estimator.band),
        "motor": _motor_to_dict(estimator.motor),
    }
    if isinstance(estimator, ParametricCurrentModel):
        check_is_fitted(estimator, "weights_")
        meta.update({"class": "parametric", "gated": bool(estimator.gated),
                     "rank": estimator.rank_,
                     "condition_number": estimator.condition_number_})
        arrays = {"weights": estimator.weights_,
                  "identifiable": estimator.identifiable_}
        return save_arrays(path, meta, arrays)
    if isinstance(estimator, SemiParametricCurrentModel):
        check_is_fitted(estimator, "gp_")
        meta.update({
            "class": "semiparametric",
            "augmented": bool(estimator.augmented),
            "kernel": estimator.kernel_.to_dict(),
            "noise_variance": float(estimator.noise_variance_),
            "scaler": (None if estimator.scaler_ is None
                       else estimator.scaler_.to_dict()),
            "parametric": {"rank": estimator.parametric_.rank_,
                           "condition_number":
                               estimator.parametric_.condition_number_},
            "jitter": float(estimator.gp_.jitter_),
        })
        arrays = {
            "weights": estimator.parametric_.weights_,
            "identifiable": estimator.parametric_.identifiable_,
            "gp_x": estimator.gp_.X_train_,
            "gp_y": estimator.gp_.y_train_,
            "gp_alpha": estimator.gp_.alpha_,
            "gp_factor": estimator.gp_.L_,
            "subset_indices": estimator.subset_indices_,
        }
        return save_arrays(path, meta, arrays)
    raise TypeError(f"cannot persist {type(estimator).__name__}")


def load_estimator(path):
    """Rebuild a fitted estimator saved by :func:`save_estimator`.

    Predictions of the loaded model are bit-identical to the saved one: the
    Cholesky factor and weight vector are restored rather than refitted.
    """
    meta, arrays = load_arrays(path)
    if meta.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ModelFormatError(
            f"model schema version {meta.get('schema_version')} is not "
            f"supported (expected {MODEL_SCHEMA_VERSION})"
        )
    motor = MotorParams(**{k: np.asarray(v) for k, v in meta["motor"].items()})
    if meta["class"] == "parametric":
        model = ParametricCurrentModel(motor, joint=meta["joint"],
                                       gated=meta["gated"], band=meta["band"])
        model.weights_ = arrays["weights"]
        model.identifiable_ = arrays["identifiable"].astype(bool)
        model.rank_ = int(meta["rank"])
        model.condition_number_ = float(meta["condition_number"])
        return model
    if meta["class"] != "semiparametric":
        raise ModelFormatError(f"unknown model class {meta['class']!r}")
    model = SemiParametricCurrentModel(
        motor, joint=meta["joint"], augmented=meta["augmented"],
        band=meta["band"], noise_variance=meta["noise_variance"],
    )
    parametric = ParametricCurrentModel(motor, joint=meta["joint"],
                                        gated=meta["augmented"],
                                        band=meta["band"])
    parametric.weights_ = arrays["weights"]
    parametric.identifiable_ = arrays["identifiable"].astype(bool)
    parametric.rank_ = int(meta["parametric"]["rank"])
    parametric.condition_number_ = float(meta["parametric"]["condition_number"])
    model.parametric_ = parametric
    model.scaler_ = (None if meta["scaler"] is None
                     else FeatureScaler.from_dict(meta["scaler"]))
    model.kernel_ = kernel_from_dict(meta["kernel"])
    model.noise_variance_ = float(meta["noise_variance"])
    gp = ExactGPRegressor(model.kernel_, model.noise_variance_)
    gp.X_train_ = arrays["gp_x"]
    gp.y_train_ = arrays["gp_y"]
    gp.alpha_ = arrays["gp_alpha"]
    gp.L_ = arrays["gp_factor"]
    gp.jitter_ = float(meta["jitter"])
    gp.clamped_variance_count_ = 0
    model.gp_ = gp
    model.subset_indices_ = arrays["subset_indices"]
    return model
