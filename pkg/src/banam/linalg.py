"""Dense symmetric linear algebra and scalar math primitives.

Everything here works on plain float64 ``numpy`` arrays.  Matrices passed to
the positive-definite routines must be symmetric; factorizations escalate
through a jitter schedule before giving up with
:class:`~banam.errors.NotPositiveDefinite`.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special

from .errors import NotPositiveDefinite, ShapeMismatch

# Escalating diagonal jitter for Gauss-Newton matrices near singularity.
DEFAULT_JITTER_SCHEDULE = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)

_SYM_RTOL = 1e-12


def check_symmetric(a, rtol=_SYM_RTOL):
    """Validate that ``a`` is a square, finite, symmetric float64 matrix.

    Returns the symmetrized array (exact average of ``a`` and ``a.T``) so
    downstream factorizations are insensitive to round-off asymmetry.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > rtol * scale:
        raise ShapeMismatch("matrix is not symmetric within tolerance")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor ``L`` with ``L @ L.T = A + jitter * I``."""

    L: np.ndarray
    jitter_applied: float

    @property
    def dim(self):
        return self.L.shape[0]

    def logdet(self):
        """Log-determinant of the factored matrix, ``2 * sum(log(diag(L)))``."""
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def solve(self, b):
        """Solve ``(A + jitter * I) x = b`` using the factor."""
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.dim:
            raise ShapeMismatch(
                f"rhs has leading dimension {b.shape[0]}, expected {self.dim}"
            )
        return scipy.linalg.cho_solve((self.L, True), b)

    def inverse(self):
        """Materialize the inverse of the factored matrix."""
        return self.solve(np.eye(self.dim))


def cholesky(a, jitter_schedule=DEFAULT_JITTER_SCHEDULE):
    """Cholesky-factor a symmetric matrix, escalating through jitter levels.

    Parameters
    ----------
    a : ndarray (P, P)
        Symmetric matrix.
    jitter_schedule : sequence of float
        Candidate diagonal jitters, tried in order.  The first level that
        yields a positive-definite ``a + jitter * I`` wins and is recorded
        on the returned factor.

    Returns
    -------
    CholeskyFactor

    Raises
    ------
    NotPositiveDefinite
        If every jitter level fails.
    """
    a = check_symmetric(a)
    for jitter in jitter_schedule:
        try:
            shifted = a if jitter == 0.0 else a + jitter * np.eye(a.shape[0])
            L = scipy.linalg.cholesky(shifted, lower=True)
        except scipy.linalg.LinAlgError:
            continue
        return CholeskyFactor(L=L, jitter_applied=float(jitter))
    raise NotPositiveDefinite(
        f"matrix of dim {a.shape[0]} not positive definite for any jitter in "
        f"{list(jitter_schedule)}"
    )


def logdet_pd(a, jitter_schedule=DEFAULT_JITTER_SCHEDULE):
    """Log-determinant of a positive-definite matrix via Cholesky."""
    return cholesky(a, jitter_schedule).logdet()


def solve_pd(a, b, jitter_schedule=DEFAULT_JITTER_SCHEDULE):
    """Solve ``a @ x = b`` for positive-definite ``a`` without forming inverses."""
    return cholesky(a, jitter_schedule).solve(b)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def std_normal_cdf(x):
    """Standard normal CDF via ``erf`` (exact, not a tanh approximation)."""
    return 0.5 * (1.0 + scipy.special.erf(np.asarray(x, dtype=np.float64) * _INV_SQRT2))


def std_normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with ``Phi`` the standard normal CDF."""
    x = np.asarray(x, dtype=np.float64)
    return x * std_normal_cdf(x)


def gelu_deriv(x):
    """Derivative of the exact GELU, ``Phi(x) + x * phi(x)``."""
    x = np.asarray(x, dtype=np.float64)
    return std_normal_cdf(x) + x * std_normal_pdf(x)
