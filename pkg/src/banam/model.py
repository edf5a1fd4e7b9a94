"""The additive model: likelihoods, MAP objective, and the training loop.

A model is a sum of per-feature shape networks (plus optional two-input
joint networks) and a global intercept.  Each network has its own Gaussian
prior precision; the intercept is unregularized and excluded from the
Laplace blocks.  Training alternates Adam steps on the regularized
log-likelihood with batches of ascent steps on the marginal-likelihood
lower bound over the log prior precisions (and log observation noise for
regression).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import laplace
from .errors import (
    ConfigInvalid,
    Diverged,
    DuplicatePair,
    IndexOutOfRange,
    InvalidTarget,
    ShapeMismatch,
)
from .networks import FeatureNetwork, JointFeatureNetwork, init_network

LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1e6


class GaussianRegression:
    """Gaussian likelihood with identity link and observation noise ``sigma2``."""

    kind = "gaussian_regression"

    def __init__(self, sigma2=1.0):
        if not (np.isfinite(sigma2) and sigma2 > 0):
            raise InvalidTarget(f"sigma2 must be finite and positive, got {sigma2}")
        self.sigma2 = float(sigma2)

    def validate_targets(self, y):
        if not np.all(np.isfinite(y)):
            raise InvalidTarget("regression targets must be finite")

    def log_prob(self, f, y):
        r = y - f
        n = f.shape[0]
        return -0.5 * n * np.log(2.0 * np.pi * self.sigma2) - float(r @ r) / (2.0 * self.sigma2)

    def dlogp_df(self, f, y):
        return (y - f) / self.sigma2

    def gamma(self, f):
        return np.full(f.shape[0], 1.0 / self.sigma2)


class BernoulliLogit:
    """Bernoulli likelihood with logit link for binary targets."""

    kind = "bernoulli_logit"
    sigma2 = None

    def validate_targets(self, y):
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise InvalidTarget("classification targets must be 0 or 1")

    def log_prob(self, f, y):
        # y*f - log(1 + exp(f)), computed stably.
        return float(np.sum(y * f - np.logaddexp(0.0, f)))

    def dlogp_df(self, f, y):
        return y - _sigmoid(f)

    def gamma(self, f):
        p = _sigmoid(f)
        return p * (1.0 - p)


def _sigmoid(f):
    return 0.5 * (1.0 + np.tanh(0.5 * f))


def likelihood_from_dict(d):
    if d["kind"] == GaussianRegression.kind:
        return GaussianRegression(sigma2=d["sigma2"])
    if d["kind"] == BernoulliLogit.kind:
        return BernoulliLogit()
    raise ValueError(f"unknown likelihood kind {d['kind']!r}")


class AdditiveModel:
    """Additive model over feature networks with per-network prior precisions.

    Parameters
    ----------
    feature_nets : list of FeatureNetwork
        One per input dimension, in column order.
    likelihood : GaussianRegression or BernoulliLogit
    intercept : float
        Global intercept; unregularized, not part of any Laplace block.
    joint_nets : list of JointFeatureNetwork, optional
        Second-order interaction networks (stage two).
    lambdas : ndarray, optional
        Prior precision per network, feature networks first then joint
        networks in append order.  Defaults to 1 everywhere.
    standardization : Standardization, optional
        Carried along so serialized models can map back to original units.
    """

    def __init__(self, feature_nets, likelihood, intercept=0.0, joint_nets=None,
                 lambdas=None, standardization=None):
        feature_nets = list(feature_nets)
        for d, net in enumerate(feature_nets):
            if net.feature_index != d:
                raise ValueError(
                    f"feature net at position {d} has feature_index {net.feature_index}"
                )
        self.feature_nets = feature_nets
        self.joint_nets = list(joint_nets) if joint_nets else []
        pairs = [n.pair for n in self.joint_nets]
        if len(set(pairs)) != len(pairs):
            raise DuplicatePair(f"duplicate joint pairs in {pairs}")
        self.likelihood = likelihood
        self.intercept = float(intercept)
        k = len(self.feature_nets) + len(self.joint_nets)
        if lambdas is None:
            lambdas = np.ones(k)
        self._lambdas = np.asarray(lambdas, dtype=np.float64).copy()
        if self._lambdas.shape != (k,) or not np.all(self._lambdas > 0):
            raise ValueError("need one positive lambda per network")
        self.standardization = standardization
        self._params_version = 0
        self._hypers_version = 0

    # -- bookkeeping ------------------------------------------------------

    @property
    def n_features(self):
        return len(self.feature_nets)

    def networks(self):
        """All networks, feature networks first then joint networks."""
        return self.feature_nets + self.joint_nets

    @property
    def params_version(self):
        return self._params_version

    @property
    def hypers_version(self):
        return self._hypers_version

    @property
    def lambdas(self):
        return self._lambdas.copy()

    def set_lambdas(self, lambdas):
        lambdas = np.asarray(lambdas, dtype=np.float64)
        if lambdas.shape != self._lambdas.shape or not np.all(lambdas > 0):
            raise ValueError("need one positive lambda per network")
        self._lambdas = lambdas.copy()
        self._hypers_version += 1

    @property
    def sigma2(self):
        return self.likelihood.sigma2

    def set_sigma2(self, sigma2):
        if self.likelihood.kind != GaussianRegression.kind:
            raise InvalidTarget("sigma2 only applies to regression")
        self.likelihood = GaussianRegression(sigma2=sigma2)
        self._hypers_version += 1

    def net_input(self, X, net):
        cols = net.columns
        if len(cols) == 1:
            return X[:, cols[0]]
        return X[:, list(cols)]

    def _check_design(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeMismatch(
                f"expected design with {self.n_features} columns, got {X.shape}"
            )
        return X

    # -- parameters -------------------------------------------------------

    def get_flat_params(self):
        """Concatenated network parameters with the intercept last."""
        parts = [net.params for net in self.networks()]
        parts.append(np.array([self.intercept]))
        return np.concatenate(parts)

    def set_flat_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        sizes = [net.n_params for net in self.networks()]
        if flat.shape != (sum(sizes) + 1,):
            raise ShapeMismatch(f"expected {sum(sizes) + 1} parameters, got {flat.shape}")
        o = 0
        for net, size in zip(self.networks(), sizes):
            net.params = flat[o:o + size].copy()
            o += size
        self.intercept = float(flat[-1])
        self._params_version += 1

    def add_joint_network(self, net, lam=None):
        """Append a joint network (stage two); its lambda defaults to the
        mean of its parents' lambdas."""
        if any(net.pair == j.pair for j in self.joint_nets):
            raise DuplicatePair(f"pair {net.pair} already present")
        d, dp = net.pair
        if not (0 <= d < self.n_features and 0 <= dp < self.n_features):
            raise IndexOutOfRange(f"pair {net.pair} outside feature range")
        if lam is None:
            lam = 0.5 * (self._lambdas[d] + self._lambdas[dp])
        self.joint_nets.append(net)
        self._lambdas = np.append(self._lambdas, float(lam))
        self._params_version += 1
        self._hypers_version += 1

    # -- probabilistic pieces ---------------------------------------------

    def predict_latent(self, X):
        """Latent function ``intercept + sum of network outputs``."""
        X = self._check_design(X)
        f = np.full(X.shape[0], self.intercept)
        for net in self.networks():
            f = f + net.forward(self.net_input(X, net))
        return f

    def log_likelihood(self, X, y):
        y = np.asarray(y, dtype=np.float64)
        self.likelihood.validate_targets(y)
        f = self.predict_latent(X)
        if f.shape != y.shape:
            raise ShapeMismatch(f"targets {y.shape} do not match design rows {f.shape}")
        return self.likelihood.log_prob(f, y)

    def gamma_weights(self, X):
        """Negative second derivatives of the log-likelihood at the latent."""
        f = self.predict_latent(X)
        return self.likelihood.gamma(f)

    def log_prior(self):
        total = 0.0
        for net, lam in zip(self.networks(), self._lambdas):
            p = net.n_params
            sq = float(net.params @ net.params)
            total += 0.5 * p * np.log(lam / (2.0 * np.pi)) - 0.5 * lam * sq
        return total

    def log_joint(self, X, y):
        """Log-likelihood plus Gaussian log-prior over all network parameters."""
        return self.log_likelihood(X, y) + self.log_prior()

    def neg_log_joint_grad(self, X, y, like_scale=1.0):
        """Gradient of ``-(like_scale * log_likelihood + log_prior)`` in the
        flat parameter layout.  ``like_scale`` reweights a mini-batch to the
        full dataset size."""
        X = self._check_design(X)
        y = np.asarray(y, dtype=np.float64)
        f = self.predict_latent(X)
        dlp = self.likelihood.dlogp_df(f, y)
        parts = []
        for net, lam in zip(self.networks(), self._lambdas):
            jac = net.param_jacobian(self.net_input(X, net))
            parts.append(-like_scale * (jac.T @ dlp) + lam * net.params)
        parts.append(np.array([-like_scale * float(np.sum(dlp))]))
        return np.concatenate(parts)

    # -- explanation ------------------------------------------------------

    def centered_curve(self, posterior, d, grid, X):
        """Shape-function curve centered by its mean contribution on ``X``.

        Returns the centered mean and the predictive variance on the grid;
        centering does not change the variance.
        """
        nets = self.networks()
        if not (0 <= d < len(nets)):
            raise IndexOutOfRange(f"network index {d} out of range")
        posterior.check_fresh(self)
        X = self._check_design(X)
        net = nets[d]
        grid_in = np.asarray(grid, dtype=np.float64)
        mean = net.forward(grid_in) - float(np.mean(net.forward(self.net_input(X, net))))
        var = posterior.blocks[d].quad_form(net.param_jacobian(grid_in))
        return mean, var

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        like = {"kind": self.likelihood.kind}
        if self.likelihood.kind == GaussianRegression.kind:
            like["sigma2"] = self.likelihood.sigma2
        return {
            "schema_version": 1,
            "D": self.n_features,
            "likelihood": like,
            "intercept": self.intercept,
            "sigma2": self.likelihood.sigma2,
            "standardization": (
                self.standardization.to_dict() if self.standardization else None
            ),
            "feature_nets": [
                {
                    "d": net.feature_index,
                    "hidden": net.hidden,
                    "params": net.params.tolist(),
                    "lambda": float(self._lambdas[i]),
                }
                for i, net in enumerate(self.feature_nets)
            ],
            "joint_nets": [
                {
                    "pair": list(net.pair),
                    "hidden": net.hidden,
                    "params": net.params.tolist(),
                    "lambda": float(self._lambdas[self.n_features + j]),
                }
                for j, net in enumerate(self.joint_nets)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        from .data import Standardization

        feature_nets = [
            FeatureNetwork(
                feature_index=nd["d"], hidden=nd["hidden"],
                params=np.asarray(nd["params"], dtype=np.float64),
            )
            for nd in d["feature_nets"]
        ]
        joint_nets = [
            JointFeatureNetwork(
                pair=tuple(nd["pair"]), hidden=nd["hidden"],
                params=np.asarray(nd["params"], dtype=np.float64),
            )
            for nd in d["joint_nets"]
        ]
        lambdas = [nd["lambda"] for nd in d["feature_nets"]]
        lambdas += [nd["lambda"] for nd in d["joint_nets"]]
        std = d.get("standardization")
        return cls(
            feature_nets=feature_nets,
            likelihood=likelihood_from_dict(d["likelihood"]),
            intercept=d["intercept"],
            joint_nets=joint_nets,
            lambdas=np.asarray(lambdas, dtype=np.float64),
            standardization=Standardization.from_dict(std) if std else None,
        )

    def save(self, path):
        """Write the model as JSON; floats use shortest round-trip decimals,
        which are lossless for float64."""
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def predict_distribution(model, posterior, X, observation=True, plugin=False):
    """Predictive distribution of the linearized model at new inputs.

    Regression returns a :class:`~banam.metrics.GaussianPredictive` whose
    variance is the linearized function variance, plus the observation
    noise when ``observation`` is set.  Classification returns a
    :class:`~banam.metrics.BernoulliPredictive`; by default the logistic-
    Gaussian integral is resolved with the probit approximation, or with
    the plug-in sigmoid mean when ``plugin`` is set.
    """
    from . import metrics

    f = model.predict_latent(X)
    var, _ = laplace.predictive_variance(model, posterior, X)
    if model.likelihood.kind == GaussianRegression.kind:
        if observation:
            var = var + model.likelihood.sigma2
        return metrics.GaussianPredictive(mean=f, var=var)
    if plugin:
        return metrics.BernoulliPredictive(prob=_sigmoid(f))
    return metrics.BernoulliPredictive(prob=metrics.probit_adjusted_probability(f, var))


def initialize_model(X, y, task, hidden=64, seed=0, standardization=None):
    """Fresh model for a (standardized) training set.

    The intercept starts at the target mean (regression) or the log-odds of
    the base rate (classification); sigma2 starts at the empirical target
    variance; every prior precision starts at 1.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nets = [init_network(d, hidden=hidden, seed=seed) for d in range(X.shape[1])]
    if task == "regression":
        var = float(np.var(y))
        likelihood = GaussianRegression(sigma2=var if var > 0 else 1.0)
        intercept = float(np.mean(y))
    elif task == "classification":
        likelihood = BernoulliLogit()
        likelihood.validate_targets(y)
        n = y.shape[0]
        rate = np.clip(np.mean(y), 1.0 / (n + 1.0), n / (n + 1.0))
        intercept = float(np.log(rate / (1.0 - rate)))
    else:
        raise InvalidTarget(f"unknown task {task!r}")
    return AdditiveModel(
        feature_nets=nets, likelihood=likelihood, intercept=intercept,
        standardization=standardization,
    )


class Adam:
    """Minimal Adam on a flat float64 vector."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    """Hyperparameters of the alternating MAP / marginal-likelihood schedule."""

    lr_params: float = 0.01
    lr_hyper: float = 0.1
    hyper_every: int = 100
    hyper_steps: int = 30
    batch_size: int = 512
    max_epochs: int = 1000
    early_stop_patience: int = 10   # hyper refreshes without improvement
    seed: int = 0
    hyper_method: str = "grad"      # "grad" (Adam ascent) or "mackay" (closed form)
    kfac: bool = False

    def validate(self):
        positive = {
            "lr_params": self.lr_params,
            "lr_hyper": self.lr_hyper,
            "hyper_every": self.hyper_every,
            "hyper_steps": self.hyper_steps,
            "batch_size": self.batch_size,
            "early_stop_patience": self.early_stop_patience,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigInvalid(f"{name} must be positive, got {value}")
        if self.max_epochs < 0:
            raise ConfigInvalid(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.hyper_method not in ("grad", "mackay"):
            raise ConfigInvalid(f"unknown hyper_method {self.hyper_method!r}")


@dataclass
class TrainHistory:
    """Per-epoch loss plus the hyperparameter trajectory at refresh points."""

    epoch: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    refresh_epoch: list = field(default_factory=list)
    marglik: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    sigma2: list = field(default_factory=list)


@dataclass
class TrainResult:
    model: "AdditiveModel"
    posterior: "laplace.Posterior"
    history: TrainHistory


def _hyper_refresh(model, X, y, cfg, hyper_adam):
    """One batch of hyperparameter updates against the marglik bound.

    Curvature (Jacobians and, for classification, the gamma weights) is
    fixed at the current parameters for the whole batch of steps.
    """
    curv = laplace.fit_curvature(model, X, kfac=cfg.kfac)
    is_reg = model.likelihood.kind == GaussianRegression.kind
    if cfg.hyper_method == "mackay":
        for _ in range(cfg.hyper_steps):
            posterior = curv.posterior(model)
            new_lambdas = laplace.mackay_update_clipped(model, posterior)
            new_sigma2 = (laplace.mackay_sigma2_update(model, X, y, posterior)
                          if is_reg else None)
            model.set_lambdas(new_lambdas)
            if is_reg:
                model.set_sigma2(new_sigma2)
    else:
        for _ in range(cfg.hyper_steps):
            posterior = curv.posterior(model)
            grad = laplace.marglik_grad(model, X, y, posterior)
            log_hyp = np.log(model.lambdas)
            if is_reg:
                log_hyp = np.append(log_hyp, np.log(model.sigma2))
                g = np.append(grad.dlog_lambda, grad.dlog_sigma2)
            else:
                g = grad.dlog_lambda
            log_hyp = hyper_adam.step(log_hyp, -g)  # ascent on the bound
            k = model.lambdas.shape[0]
            model.set_lambdas(np.clip(np.exp(log_hyp[:k]), LAMBDA_MIN, LAMBDA_MAX))
            if is_reg:
                model.set_sigma2(float(np.exp(log_hyp[k])))
    posterior = curv.posterior(model)
    return posterior, laplace.log_marglik_bound(model, X, y, posterior)


def train_map(model, X, y, cfg):
    """Train by mini-batch Adam on the negative regularized log-likelihood,
    refreshing the Laplace blocks and optimizing hyperparameters at regular
    intervals.

    Every ``cfg.hyper_every`` epochs the marginal-likelihood bound is
    refreshed and ``cfg.hyper_steps`` ascent steps are taken on the log
    prior precisions (and log sigma2 for regression).  Early stopping
    monitors the bound and restores the best parameters and
    hyperparameters.  Deterministic for a fixed seed.

    Returns
    -------
    TrainResult
        The trained model (modified in place), a fresh posterior, and the
        training history.
    """
    cfg.validate()
    X = model._check_design(X)
    y = np.asarray(y, dtype=np.float64)
    model.likelihood.validate_targets(y)
    history = TrainHistory()
    if cfg.max_epochs == 0:
        return TrainResult(model, laplace.fit_posterior(model, X, kfac=cfg.kfac), history)

    n = X.shape[0]
    rng = np.random.Generator(np.random.Philox(key=int(cfg.seed)))
    adam = Adam(lr=cfg.lr_params)
    hyper_adam = Adam(lr=cfg.lr_hyper)
    best = None  # (bound, flat params, lambdas, sigma2)
    stale_refreshes = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            scale = n / idx.shape[0]
            grad = model.neg_log_joint_grad(X[idx], y[idx], like_scale=scale)
            loss = -(scale * model.log_likelihood(X[idx], y[idx]) + model.log_prior())
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise Diverged(f"non-finite loss/gradient at epoch {epoch}")
            model.set_flat_params(adam.step(model.get_flat_params(), grad))
            epoch_loss += loss
            n_batches += 1
        history.epoch.append(epoch)
        history.loss.append(epoch_loss / n_batches)

        if epoch % cfg.hyper_every == 0:
            _, bound = _hyper_refresh(model, X, y, cfg, hyper_adam)
            history.refresh_epoch.append(epoch)
            history.marglik.append(bound)
            history.lambdas.append(model.lambdas)
            history.sigma2.append(model.sigma2)
            if best is None or bound > best[0]:
                best = (bound, model.get_flat_params(), model.lambdas, model.sigma2)
                stale_refreshes = 0
            else:
                stale_refreshes += 1
                if stale_refreshes >= cfg.early_stop_patience:
                    break

    if best is not None:
        model.set_flat_params(best[1])
        model.set_lambdas(best[2])
        if model.likelihood.kind == GaussianRegression.kind:
            model.set_sigma2(best[3])
    posterior = laplace.fit_posterior(model, X, kfac=cfg.kfac)
    return TrainResult(model, posterior, history)
