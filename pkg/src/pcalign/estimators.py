"""Estimator-style front end: constructor hyperparameters, fit/predict.

Both aligners consume pairs of point clouds and predict the ground
transform mapping the first onto the second.  get_params/set_params
follow the usual introspection convention so the objects clone and
grid-search cleanly without any third-party dependency.
"""

from __future__ import annotations

import inspect
from typing import Optional

import numpy as np

from .alignnet import AlignNetParams, LossConfig, ModelConfig, align
from .geom import GroundTransform, as_cloud
from .harness.sampling import sample_points
from .harness.train import TrainConfig, train
from .icp import IcpConfig, icp_p2p


class BaseEstimator:
    """Parameter handling shared by the aligners."""

    @classmethod
    def _param_names(cls) -> list:
        sig = inspect.signature(cls.__init__)
        return [n for n, p in sig.parameters.items()
                if n != "self" and p.kind == p.POSITIONAL_OR_KEYWORD]

    def get_params(self, deep: bool = True) -> dict:
        return {n: getattr(self, n) for n in self._param_names()}

    def set_params(self, **params) -> "BaseEstimator":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"unknown parameter {name!r} for {type(self).__name__}; "
                    f"valid: {sorted(valid)}")
            setattr(self, name, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


def _check_pairs(pairs) -> list:
    out = []
    for i, pair in enumerate(pairs):
        if len(pair) != 2:
            raise ValueError(f"pair {i}: expected (cloud1, cloud2)")
        out.append((as_cloud(pair[0], min_points=1),
                    as_cloud(pair[1], min_points=1)))
    if not out:
        raise ValueError("no pairs given")
    return out


class IcpAligner(BaseEstimator):
    """Point-to-point ICP on the ground plane."""

    def __init__(self, radius: float = 0.1, max_iterations: int = 30,
                 eps_translation: float = 1e-6, eps_yaw: float = 1e-6):
        self.radius = radius
        self.max_iterations = max_iterations
        self.eps_translation = eps_translation
        self.eps_yaw = eps_yaw

    def fit(self, pairs=None, y=None) -> "IcpAligner":
        # nothing to learn; present for interface parity
        self._config()
        return self

    def _config(self) -> IcpConfig:
        return IcpConfig(radius=self.radius, max_iterations=self.max_iterations,
                         eps_translation=self.eps_translation,
                         eps_yaw=self.eps_yaw)

    def predict(self, pairs) -> list:
        cfg = self._config()
        return [icp_p2p(c1, c2, cfg).transform
                for c1, c2 in _check_pairs(pairs)]


class AlignNetAligner(BaseEstimator):
    """Learned siamese aligner wrapped as an estimator.

    fit() expects the dataset's scene samples (they carry the amodal
    centers and headings the staged loss needs); predict() takes bare
    cloud pairs.
    """

    def __init__(self, epochs: int = 200, lr: float = 0.005, batch: int = 128,
                 n_points: int = 512, aug_sigma: float = 0.01,
                 lambda1: float = 0.5, lambda2: float = 1.0,
                 axis_symmetric: bool = False, seed: int = 0):
        self.epochs = epochs
        self.lr = lr
        self.batch = batch
        self.n_points = n_points
        self.aug_sigma = aug_sigma
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.axis_symmetric = axis_symmetric
        self.seed = seed
        self.params_: Optional[AlignNetParams] = None

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, lr=self.lr, batch=self.batch,
            n_points=self.n_points, aug_sigma=self.aug_sigma, seed=self.seed,
            loss=LossConfig(lambda1=self.lambda1, lambda2=self.lambda2,
                            axis_symmetric=self.axis_symmetric))

    def fit(self, samples, y=None, out_dir=None,
            model_config: Optional[ModelConfig] = None) -> "AlignNetAligner":
        result = train(list(samples), self._train_config(), out_dir=out_dir,
                       model_config=model_config)
        self.params_ = result.params
        return self

    def predict(self, pairs) -> list:
        if self.params_ is None:
            raise RuntimeError("not fitted: call fit() or load a checkpoint")
        rng = np.random.default_rng(self.seed)
        out = []
        for c1, c2 in _check_pairs(pairs):
            s1 = sample_points(c1, self.n_points, rng)
            s2 = sample_points(c2, self.n_points, rng)
            out.extend(align(self.params_, s1, s2))
        return out

    def save(self, path) -> None:
        if self.params_ is None:
            raise RuntimeError("not fitted: nothing to save")
        self.params_.save(path, extra_config={"estimator": self.get_params()})

    @classmethod
    def load(cls, path) -> "AlignNetAligner":
        params, config = AlignNetParams.load(path)
        est = cls()
        stored = config.get("estimator")
        if stored:
            est.set_params(**stored)
        else:
            train_cfg = config.get("train", {})
            if "n_points" in train_cfg:
                est.n_points = int(train_cfg["n_points"])
        est.params_ = params
        return est
