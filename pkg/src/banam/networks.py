"""Per-feature subnetworks and two-input joint networks.

Shape functions are tiny fixed-architecture MLPs with exact GELU activation,
so forward passes and parameter Jacobians are written in closed form on
float64 arrays instead of going through an autodiff engine.

Parameter vector layouts (documented because serialization and Jacobian
columns depend on them):

``FeatureNetwork`` (one hidden layer of width ``h``), ``P = 3h + 1``::

    [w_in (h), b_hidden (h), w_out (h), b_out (1)]

``JointFeatureNetwork`` (two inputs, two hidden layers of width ``h``),
``P = h**2 + 5h + 1``::

    [W1 (h, 2) row-major, b1 (h), W2 (h, h) row-major, b2 (h), w_out (h), b_out (1)]
"""

from dataclasses import dataclass, field

import numpy as np

from .linalg import gelu, gelu_deriv


def _he_normal(rng, shape, fan_in):
    # Zero-mean Gaussian with variance 2 / fan_in.
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _rng(seed, stream):
    # Philox is counter-based, so draws are reproducible across platforms.
    # The 128-bit key is [seed, stream]; streams separate network identities.
    return np.random.Generator(np.random.Philox(key=[int(seed), int(stream)]))


@dataclass(eq=False)
class KfacLayer:
    """Per-layer quantities needed for a Kronecker-factored curvature block.

    ``inputs`` holds the layer inputs with a trailing bias column when the
    layer has a bias; ``out_grads`` holds d f / d z for the layer's
    pre-activations.  ``param_index`` maps the Kronecker ordering
    ``(out_unit, in_unit)`` row-major onto positions in the flat parameter
    vector.
    """

    inputs: np.ndarray      # (N, n_in)
    out_grads: np.ndarray   # (N, n_out)
    param_index: np.ndarray  # (n_out * n_in,) int


@dataclass(eq=False)
class FeatureNetwork:
    """One-input shape function: single hidden GELU layer, linear output."""

    feature_index: int
    hidden: int = 64
    params: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.params is None:
            self.params = np.zeros(self.n_params)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise ValueError(
                f"expected {self.n_params} parameters for hidden={self.hidden}, "
                f"got shape {self.params.shape}"
            )

    @property
    def n_params(self):
        return 3 * self.hidden + 1

    @property
    def columns(self):
        return (self.feature_index,)

    def _unpack(self):
        h = self.hidden
        p = self.params
        return p[:h], p[h:2 * h], p[2 * h:3 * h], p[3 * h]

    def forward(self, x):
        """Evaluate the shape function at inputs ``x`` of shape (N,)."""
        w_in, b_hid, w_out, b_out = self._unpack()
        z = np.outer(np.asarray(x, dtype=np.float64), w_in) + b_hid
        return gelu(z) @ w_out + b_out

    def param_jacobian(self, x):
        """Exact d f / d params, one row per sample, shape (N, P)."""
        x = np.asarray(x, dtype=np.float64)
        w_in, b_hid, w_out, b_out = self._unpack()
        z = np.outer(x, w_in) + b_hid
        act = gelu(z)
        dact = gelu_deriv(z)
        jac = np.empty((x.shape[0], self.n_params))
        h = self.hidden
        delta = dact * w_out          # d f / d z, (N, h)
        jac[:, :h] = delta * x[:, None]
        jac[:, h:2 * h] = delta
        jac[:, 2 * h:3 * h] = act
        jac[:, 3 * h] = 1.0
        return jac

    def kfac_layers(self, x):
        x = np.asarray(x, dtype=np.float64)
        w_in, b_hid, w_out, b_out = self._unpack()
        z = np.outer(x, w_in) + b_hid
        act = gelu(z)
        delta = gelu_deriv(z) * w_out
        h = self.hidden
        n = x.shape[0]
        ones = np.ones((n, 1))
        # Hidden layer: weights act on [x, 1]; unit i owns params (i, h + i).
        idx_hidden = np.column_stack([np.arange(h), h + np.arange(h)]).ravel()
        # Output layer: single unit on [activations, 1].
        idx_out = np.concatenate([2 * h + np.arange(h), [3 * h]])
        return [
            KfacLayer(np.hstack([x[:, None], ones]), delta, idx_hidden),
            KfacLayer(np.hstack([act, ones]), ones, idx_out),
        ]


@dataclass(eq=False)
class JointFeatureNetwork:
    """Two-input interaction network: two hidden GELU layers, linear output."""

    pair: tuple
    hidden: int = 64
    params: np.ndarray = field(default=None)

    def __post_init__(self):
        d, dp = self.pair
        if d == dp:
            raise ValueError("joint network needs two distinct features")
        if d > dp:
            raise ValueError("joint network pair must be ordered (d < d')")
        self.pair = (int(d), int(dp))
        if self.params is None:
            self.params = np.zeros(self.n_params)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise ValueError(
                f"expected {self.n_params} parameters for hidden={self.hidden}, "
                f"got shape {self.params.shape}"
            )

    @property
    def n_params(self):
        h = self.hidden
        return h * h + 5 * h + 1

    @property
    def columns(self):
        return self.pair

    def _unpack(self):
        h = self.hidden
        p = self.params
        o = 0
        w1 = p[o:o + 2 * h].reshape(h, 2); o += 2 * h
        b1 = p[o:o + h]; o += h
        w2 = p[o:o + h * h].reshape(h, h); o += h * h
        b2 = p[o:o + h]; o += h
        w3 = p[o:o + h]; o += h
        b3 = p[o]
        return w1, b1, w2, b2, w3, b3

    def _trace(self, x):
        w1, b1, w2, b2, w3, b3 = self._unpack()
        z1 = x @ w1.T + b1
        a1 = gelu(z1)
        z2 = a1 @ w2.T + b2
        a2 = gelu(z2)
        return z1, a1, z2, a2, (w1, b1, w2, b2, w3, b3)

    def forward(self, x):
        """Evaluate at paired inputs ``x`` of shape (N, 2)."""
        x = np.asarray(x, dtype=np.float64)
        _, _, _, a2, (w1, b1, w2, b2, w3, b3) = self._trace(x)
        return a2 @ w3 + b3

    def param_jacobian(self, x):
        """Exact d f / d params, shape (N, P)."""
        x = np.asarray(x, dtype=np.float64)
        z1, a1, z2, a2, (w1, b1, w2, b2, w3, b3) = self._trace(x)
        n = x.shape[0]
        h = self.hidden
        delta2 = gelu_deriv(z2) * w3                 # (N, h)
        delta1 = (delta2 @ w2) * gelu_deriv(z1)      # (N, h)
        jac = np.empty((n, self.n_params))
        o = 0
        jac[:, o:o + 2 * h] = (delta1[:, :, None] * x[:, None, :]).reshape(n, 2 * h)
        o += 2 * h
        jac[:, o:o + h] = delta1; o += h
        jac[:, o:o + h * h] = (delta2[:, :, None] * a1[:, None, :]).reshape(n, h * h)
        o += h * h
        jac[:, o:o + h] = delta2; o += h
        jac[:, o:o + h] = a2; o += h
        jac[:, o] = 1.0
        return jac

    def kfac_layers(self, x):
        x = np.asarray(x, dtype=np.float64)
        z1, a1, z2, a2, (w1, b1, w2, b2, w3, b3) = self._trace(x)
        h = self.hidden
        n = x.shape[0]
        delta2 = gelu_deriv(z2) * w3
        delta1 = (delta2 @ w2) * gelu_deriv(z1)
        ones = np.ones((n, 1))
        # Layer 1: unit i owns [w1 row i (2 entries), b1[i]].
        base = np.arange(h)
        idx1 = np.column_stack([2 * base, 2 * base + 1, 2 * h + base]).ravel()
        # Layer 2: unit i owns [w2 row i (h entries), b2[i]].
        o2 = 3 * h
        idx2 = np.column_stack(
            [o2 + np.arange(h * h).reshape(h, h), o2 + h * h + base]
        ).ravel()
        o3 = 3 * h + h * h + h
        idx3 = np.concatenate([o3 + base, [o3 + h]])
        return [
            KfacLayer(np.hstack([x, ones]), delta1, idx1),
            KfacLayer(np.hstack([a1, ones]), delta2, idx2),
            KfacLayer(np.hstack([a2, ones]), ones, idx3),
        ]


def init_network(feature_index, hidden=64, seed=0):
    """He-initialized feature network, deterministic per seed.

    Weights are zero-mean Gaussian with variance ``2 / fan_in``; biases are
    zero.
    """
    if hidden < 1:
        raise ValueError("hidden width must be >= 1")
    rng = _rng(seed, feature_index)
    h = hidden
    params = np.zeros(3 * h + 1)
    params[:h] = _he_normal(rng, h, fan_in=1)
    params[2 * h:3 * h] = _he_normal(rng, h, fan_in=h)
    return FeatureNetwork(feature_index=feature_index, hidden=hidden, params=params)


def init_joint_network(pair, hidden=64, seed=0, zero_output=True):
    """He-initialized joint network for an ordered feature pair.

    With ``zero_output`` the output layer starts at zero so appending the
    network leaves model predictions unchanged until training moves it.
    """
    if hidden < 1:
        raise ValueError("hidden width must be >= 1")
    d, dp = pair
    rng = _rng(seed, (1 << 62) | (int(d) << 31) | int(dp))
    h = hidden
    params = np.zeros(h * h + 5 * h + 1)
    o = 0
    params[o:o + 2 * h] = _he_normal(rng, 2 * h, fan_in=2); o += 2 * h
    o += h  # b1 stays zero
    params[o:o + h * h] = _he_normal(rng, h * h, fan_in=h); o += h * h
    o += h  # b2 stays zero
    if not zero_output:
        params[o:o + h] = _he_normal(rng, h, fan_in=h)
    return JointFeatureNetwork(pair=(int(d), int(dp)), hidden=hidden, params=params)
