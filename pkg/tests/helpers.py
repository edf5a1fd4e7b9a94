"""Shared fixtures: linear-in-parameter networks and closed-form oracles."""

from dataclasses import dataclass

import numpy as np

from banam.networks import KfacLayer


@dataclass(eq=False)
class LinearFeatureNet:
    """Shape function linear in its parameters: f(x) = theta @ basis(x).

    The basis is polynomial (x, x^2, ...) without a constant term, so a
    zero input produces a zero output.  Linear-in-parameter networks make
    the linearized Laplace exact, which the conjugate-oracle tests exploit.
    """

    feature_index: int
    degree: int = 1
    params: np.ndarray = None

    def __post_init__(self):
        if self.params is None:
            self.params = np.zeros(self.degree)
        self.params = np.asarray(self.params, dtype=np.float64)

    @property
    def n_params(self):
        return self.degree

    @property
    def columns(self):
        return (self.feature_index,)

    def basis(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.column_stack([x ** (k + 1) for k in range(self.degree)])

    def forward(self, x):
        return self.basis(x) @ self.params

    def param_jacobian(self, x):
        return self.basis(x)

    def kfac_layers(self, x):
        phi = self.basis(x)
        return [KfacLayer(phi, np.ones((phi.shape[0], 1)), np.arange(self.degree))]


@dataclass(eq=False)
class CosineFeatureNet:
    """Linear-in-parameters net over bounded cosine features.

    Columns are cos(k x + k/3), so design matrices stay well conditioned
    regardless of the input scale; used where tight agreement with dense
    matrix oracles is asserted.
    """

    feature_index: int
    degree: int = 1
    params: np.ndarray = None

    def __post_init__(self):
        if self.params is None:
            self.params = np.zeros(self.degree)
        self.params = np.asarray(self.params, dtype=np.float64)

    @property
    def n_params(self):
        return self.degree

    @property
    def columns(self):
        return (self.feature_index,)

    def basis(self, x):
        x = np.asarray(x, dtype=np.float64)
        ks = np.arange(1, self.degree + 1)
        return np.cos(np.outer(x, ks) + ks / 3.0)

    def forward(self, x):
        return self.basis(x) @ self.params

    def param_jacobian(self, x):
        return self.basis(x)

    def kfac_layers(self, x):
        phi = self.basis(x)
        return [KfacLayer(phi, np.ones((phi.shape[0], 1)), np.arange(self.degree))]


def blr_posterior(phi, y, sigma2, lam):
    """Closed-form Bayesian linear regression posterior (mean, covariance)."""
    p = phi.shape[1]
    precision = phi.T @ phi / sigma2 + lam * np.eye(p)
    cov = np.linalg.inv(precision)
    mean = cov @ (phi.T @ y / sigma2)
    return mean, cov


def blr_evidence(phi, y, sigma2, lam):
    """Closed-form log-evidence via the N x N marginal covariance.

    Independent of the package's posterior code path: integrates the
    weights analytically, log N(y; 0, sigma2 I + phi phi^T / lam).
    """
    n = y.shape[0]
    marg_cov = sigma2 * np.eye(n) + phi @ phi.T / lam
    chol = np.linalg.cholesky(marg_cov)
    alpha = np.linalg.solve(marg_cov, y)
    return (
        -0.5 * n * np.log(2.0 * np.pi)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * float(y @ alpha)
    )


def finite_difference_jacobian(fn, params, h=1e-6):
    """Central finite differences of a vector-valued function of params."""
    params = np.asarray(params, dtype=np.float64)
    f0 = np.atleast_1d(fn(params))
    jac = np.empty((f0.shape[0], params.shape[0]))
    for i in range(params.shape[0]):
        bumped = params.copy()
        bumped[i] = params[i] + h
        fp = np.atleast_1d(fn(bumped))
        bumped[i] = params[i] - h
        fm = np.atleast_1d(fn(bumped))
        jac[:, i] = (fp - fm) / (2.0 * h)
    return jac


def jacobi_eigenvalues(a, sweeps=50, tol=1e-14):
    """Symmetric eigenvalues by the classical Jacobi rotation method.

    Deliberately independent of LAPACK so it can serve as an oracle for
    determinant identities on small matrices.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-30:
                    continue
                theta = 0.5 * np.arctan2(2.0 * a[p, q], a[q, q] - a[p, p])
                c, s = np.cos(theta), np.sin(theta)
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))
