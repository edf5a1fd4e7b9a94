"""Second-order interaction scoring and stage-two fine-tuning.

Candidate feature pairs are ranked without training any additional model:

* ``mi_scores`` uses a last-layer posterior over one scalar output
  multiplier per feature network (a D x D fit) and scores pairs by the
  mutual information implied by the multipliers' posterior correlation.
* ``gain_scores`` estimates how much the marginal-likelihood bound would
  improve if a pair's posterior cross-covariance were modeled, from the
  log-determinants of the pairwise joint precision versus the independent
  blocks.
* ``mi_scores_blockwise`` is the full-parameter (2P x 2P) mutual
  information for a single pair.

Selected pairs get a joint feature network appended with a zero output
layer, so fine-tuning starts exactly at the stage-one predictions.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DegenerateFeatureWarning, IndexOutOfRange, KTooLarge
from .model import train_map
from .networks import init_joint_network

DEFAULT_LAMBDA_LAST = 1.0
_CORR_CLIP = 1.0 - 1e-12


@dataclass
class LastLayerPosterior:
    """Gaussian posterior over per-network scalar output multipliers.

    ``cov`` is the D x D covariance of multiplier weights, fitted with each
    network's output as the multiplier's feature column.
    """

    cov: np.ndarray
    lambda_last: float
    params_version: int
    hypers_version: int
    degenerate: tuple = ()

    @property
    def n_features(self):
        return self.cov.shape[0]

    @property
    def marginal_variances(self):
        return np.diag(self.cov).copy()

    def correlation(self):
        std = np.sqrt(np.diag(self.cov))
        return self.cov / np.outer(std, std)

    def check_fresh(self, model):
        from .errors import StalePosterior

        if (model.params_version != self.params_version
                or model.hypers_version != self.hypers_version):
            raise StalePosterior("last-layer posterior is stale; refit first")


@dataclass(frozen=True)
class InteractionScore:
    """Score for one candidate pair; higher ranks first (rank 1 = best)."""

    pair: tuple
    mi: float = None
    gain: float = None
    rank: int = None

    @property
    def score(self):
        return self.mi if self.mi is not None else self.gain


def fit_last_layer(model, X, lambda_last=DEFAULT_LAMBDA_LAST, center=True):
    """Fit the D x D last-layer posterior over output multiplier weights.

    Each feature network's output column ``f_d(x_d)`` acts as the feature
    of a scalar multiplier (the multiplier's MAP is 1 by construction); the
    posterior covariance is the Gauss-Newton inverse
    ``(Phi^T diag(gamma) Phi + lambda_last I)^-1``.

    With ``center`` (the default) the columns are centered in the
    gamma-weighted metric, which is exactly what profiling out the model's
    unpenalized global intercept does to the multiplier fit.  Without it,
    multipliers compete to explain the shared offset and the resulting
    anti-correlations swamp the pairwise structure the scores are after,
    with near-constant (switched-off) networks scoring highest.

    Columns that are numerically zero (switched-off networks) trigger a
    :class:`DegenerateFeatureWarning` and stay regularized by the prior
    alone.
    """
    X = model._check_design(X)
    gamma = model.gamma_weights(X)
    phi = np.column_stack([
        net.forward(model.net_input(X, net)) for net in model.feature_nets
    ])
    if center:
        weights = gamma / gamma.sum()
        phi = phi - weights @ phi
    degenerate = tuple(
        int(d) for d in range(phi.shape[1])
        if np.abs(phi[:, d]).max() < 1e-12
    )
    for d in degenerate:
        warnings.warn(
            f"feature network {d} has numerically zero output; its multiplier "
            "posterior is prior-only",
            DegenerateFeatureWarning,
        )
    precision = phi.T @ (phi * gamma[:, None])
    precision[np.diag_indices_from(precision)] += lambda_last
    cov = linalg.solve_pd(precision, np.eye(phi.shape[1]))
    cov = 0.5 * (cov + cov.T)
    return LastLayerPosterior(
        cov=cov, lambda_last=float(lambda_last),
        params_version=model.params_version, hypers_version=model.hypers_version,
        degenerate=degenerate,
    )


def _pairs(d):
    return [(a, b) for a in range(d) for b in range(a + 1, d)]


def mutual_information_from_correlation(rho):
    """Gaussian mutual information ``-0.5 log(1 - rho^2)`` with correlation
    clipped to ``|rho| <= 1 - 1e-12``."""
    rho = np.clip(rho, -_CORR_CLIP, _CORR_CLIP)
    return -0.5 * np.log1p(-rho * rho)


def mi_scores(llp):
    """Mutual-information scores for all feature pairs, best first."""
    corr = llp.correlation()
    scored = [
        InteractionScore(pair=p, mi=float(mutual_information_from_correlation(corr[p])))
        for p in _pairs(llp.n_features)
    ]
    return _ranked(scored)


def _ranked(scored):
    scored.sort(key=lambda s: (-s.score, s.pair))
    return [
        InteractionScore(pair=s.pair, mi=s.mi, gain=s.gain, rank=i + 1)
        for i, s in enumerate(scored)
    ]


def _pair_curvature(model, X, pair):
    """Jacobians, gamma-weighted cross blocks, and priors for one pair."""
    d, dp = pair
    nets = model.networks()
    if not (0 <= d < model.n_features and 0 <= dp < model.n_features and d < dp):
        raise IndexOutOfRange(f"invalid feature pair {pair}")
    gamma = model.gamma_weights(X)
    lam = model.lambdas
    j_d = nets[d].param_jacobian(model.net_input(X, nets[d]))
    j_dp = nets[dp].param_jacobian(model.net_input(X, nets[dp]))
    wj_d = j_d * gamma[:, None]
    h_d = j_d.T @ wj_d
    h_dp = j_dp.T @ (j_dp * gamma[:, None])
    cross = wj_d.T @ j_dp
    prec_d = h_d + lam[d] * np.eye(h_d.shape[0])
    prec_dp = h_dp + lam[dp] * np.eye(h_dp.shape[0])
    joint = np.block([[prec_d, cross], [cross.T, prec_dp]])
    return prec_d, prec_dp, joint


def mi_scores_blockwise(model, X, pair, jitter_schedule=linalg.DEFAULT_JITTER_SCHEDULE):
    """Full-parameter mutual information for one pair.

    Fits a joint Laplace block over both networks' parameters (cross
    curvature included) and returns
    ``0.5 (log|Sigma_d| + log|Sigma_d'| - log|Sigma_joint|)`` where the
    marginals are the diagonal sub-blocks of the joint covariance.
    """
    X = model._check_design(X)
    prec_d, _, joint = _pair_curvature(model, X, pair)
    p = prec_d.shape[0]
    factor = linalg.cholesky(joint, jitter_schedule)
    cov = factor.inverse()
    logdet_joint = -factor.logdet()
    logdet_d = linalg.logdet_pd(cov[:p, :p], jitter_schedule)
    logdet_dp = linalg.logdet_pd(cov[p:, p:], jitter_schedule)
    return 0.5 * (logdet_d + logdet_dp - logdet_joint)


def gain_scores(model, X, posterior):
    """Marginal-likelihood gain heuristic for all feature pairs, best first.

    ``gain(d, d') = log|P_d| + log|P_d'| - log|P_{d,d'}|`` with ``P`` the
    Gauss-Newton-plus-prior precisions; the joint precision includes the
    cross curvature between the two networks.  Non-negative for positive
    definite precisions, and zero when the cross curvature vanishes.
    """
    X = model._check_design(X)
    posterior.check_fresh(model)
    scored = []
    for pair in _pairs(model.n_features):
        prec_d, prec_dp, joint = _pair_curvature(model, X, pair)
        gain = (
            linalg.logdet_pd(prec_d)
            + linalg.logdet_pd(prec_dp)
            - linalg.logdet_pd(joint)
        )
        scored.append(InteractionScore(pair=pair, gain=float(gain)))
    return _ranked(scored)


def select_top_k(scores, k):
    """Best ``k`` pairs by descending score, ties broken lexicographically."""
    if k > len(scores):
        raise KTooLarge(f"asked for {k} pairs, only {len(scores)} scored")
    ordered = sorted(scores, key=lambda s: (-s.score, s.pair))
    return [s.pair for s in ordered[:k]]


def finetune_with_interactions(model, X, y, pairs, cfg, joint_hidden=64, seed=0):
    """Append joint networks for the selected pairs and re-train everything.

    Joint networks start with a zero output layer, so predictions (and the
    likelihood) are unchanged until training moves them; their prior
    precision starts at the mean of the parents'.  Returns the
    :class:`~banam.model.TrainResult` of the fine-tuning stage.
    """
    for pair in pairs:
        net = init_joint_network(tuple(pair), hidden=joint_hidden, seed=seed,
                                 zero_output=True)
        model.add_joint_network(net)
    return train_map(model, X, y, cfg)
