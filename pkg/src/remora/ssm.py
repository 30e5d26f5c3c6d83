"""Deep state-space machinery: ZOH discretization, recurrent scan,
convolution kernel, selective (input-dependent) scan and bidirectional
composition.

The convolution kernel follows the folded convention: every tap carries
``+D``, so ``conv_apply(kernel(d), x)`` equals the recurrence of the
system augmented with a unit-pole state that integrates the input and is
read out with weight ``D`` (see ``fold_feedthrough``). Pass
``fold_feedthrough=False`` for the standard ``y = K * x + D x`` split.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import _backend
from .errors import InvalidInputError, NumericError

SERIES_CUTOFF = 1e-6


@dataclass(frozen=True)
class SsmParams:
    """Continuous single-input single-output system.

    ``A`` is ``(Q, Q)`` or a length-``Q`` diagonal; ``B`` and ``C`` are
    length-``Q`` vectors.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float
    delta: float

    def __post_init__(self):
        A = np.atleast_1d(np.asarray(self.A, np.float64))
        B = np.atleast_1d(np.asarray(self.B, np.float64)).ravel()
        C = np.atleast_1d(np.asarray(self.C, np.float64)).ravel()
        Q = A.shape[0]
        if A.ndim > 2 or (A.ndim == 2 and A.shape != (Q, Q)) or B.shape != (Q,) or C.shape != (Q,):
            raise InvalidInputError("inconsistent SSM shapes")
        if not self.delta > 0:
            raise InvalidInputError("delta must be positive")
        for name, v in (("A", A), ("B", B), ("C", C), ("D", self.D)):
            if not np.isfinite(v).all():
                raise InvalidInputError(f"{name} has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", float(self.D))

    @property
    def diagonal(self):
        return self.A.ndim == 1

    @property
    def Q(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class DiscreteSsm:
    A_bar: np.ndarray
    B_bar: np.ndarray
    C: np.ndarray
    D: float

    @property
    def Q(self):
        return self.A_bar.shape[0]


def _zoh_input_series(M, dB, terms=6):
    # sum_k M^k / (k+1)! applied to dB
    out = dB.copy()
    term = dB.copy()
    for k in range(1, terms):
        term = M @ term / (k + 1)
        out = out + term
    return out


def discretize(params):
    d = params.delta
    with np.errstate(over="ignore", invalid="ignore"):
        A_bar, B_bar = _zoh(params, d)
    if not (np.isfinite(A_bar).all() and np.isfinite(B_bar).all()):
        raise NumericError("discretization produced non-finite values", where="discretize")
    return DiscreteSsm(A_bar, B_bar, params.C.copy(), params.D)


def _zoh(params, d):
    if params.diagonal:
        a = d * params.A
        small = np.abs(a) < SERIES_CUTOFF
        safe = np.where(small, 1.0, params.A)
        coef = np.where(small, d * (1.0 + a / 2.0 + a * a / 6.0), np.expm1(a) / safe)
        A_bar, B_bar = np.diag(np.exp(a)), coef * params.B
    else:
        M = d * params.A
        A_bar = expm(M)
        if np.linalg.norm(M, 1) < SERIES_CUTOFF:
            B_bar = _zoh_input_series(M, d * params.B)
        else:
            # expm([[M, dB], [0, 0]]) holds M^{-1}(e^M - I) dB in its last column,
            # which also covers singular-but-not-small A
            Q = params.Q
            aug = np.zeros((Q + 1, Q + 1))
            aug[:Q, :Q] = M
            aug[:Q, Q] = d * params.B
            B_bar = expm(aug)[:Q, Q]
    return A_bar, B_bar


def scan(d, x, h0=None):
    x = np.asarray(x, np.float64)
    y = np.empty(len(x))
    h = np.zeros(d.Q) if h0 is None else np.asarray(h0, np.float64).copy()
    for j, xj in enumerate(x):
        h = d.A_bar @ h + d.B_bar * xj
        y[j] = d.C @ h + d.D * xj
    return y


def kernel(d, L, fold_feedthrough=True):
    if L < 1:
        raise InvalidInputError("kernel length must be >= 1")
    k = np.empty(L)
    v = d.B_bar.copy()
    for i in range(L):
        k[i] = d.C @ v
        v = d.A_bar @ v
    if fold_feedthrough:
        k += d.D
    if not np.isfinite(k).all():
        raise NumericError("kernel overflowed", where="kernel")
    return k


def conv_apply(kbar, x):
    """Causal convolution ``y_j = sum_{i<=j} K_i x_{j-i}``."""
    x = np.asarray(x, np.float64)
    if len(x) == 0:
        return x.copy()
    return np.convolve(np.asarray(kbar, np.float64)[:len(x)], x)[:len(x)]


def fold_feedthrough(d):
    """Equivalent system whose recurrence matches the folded kernel.

    Appends a state with unit pole and unit input gain, read out by ``D``.
    """
    Q = d.Q
    A = np.eye(Q + 1)
    A[:Q, :Q] = d.A_bar
    return DiscreteSsm(A, np.append(d.B_bar, 1.0), np.append(d.C, d.D), 0.0)


def output_bound(d, x_max):
    """Geometric-series bound on |y| for |x| <= x_max and h0 = 0."""
    a = np.linalg.norm(d.A_bar, 2)
    if a >= 1.0:
        raise InvalidInputError("bound needs ||A_bar||_2 < 1")
    return (np.linalg.norm(d.C) * np.linalg.norm(d.B_bar) / (1.0 - a) + abs(d.D)) * x_max


def relative_deviation(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    scale = max(np.abs(b).max(initial=0.0), np.finfo(float).tiny)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def softplus(z):
    return np.logaddexp(0.0, z)


def inverse_softplus(y):
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class SelectiveParams:
    """Per-channel diagonal SSMs with token-conditioned delta, B and C.

    ``A`` is ``(d, Q)``; ``delta_t = softplus(x_t W_delta + b_delta)``,
    ``B_t = x_t W_B + b_B`` and ``C_t = x_t W_C + b_C`` (shared by all
    channels).
    """

    A: np.ndarray
    W_delta: np.ndarray
    b_delta: np.ndarray
    W_B: np.ndarray
    b_B: np.ndarray
    W_C: np.ndarray
    b_C: np.ndarray
    D: np.ndarray

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def Q(self):
        return self.A.shape[1]

    def project(self, X):
        with np.errstate(invalid="ignore", over="ignore"):
            return self._project(X)

    def _project(self, X):
        delta = softplus(X @ self.W_delta + self.b_delta)
        return delta, X @ self.W_B + self.b_B, X @ self.W_C + self.b_C

    @classmethod
    def constant(cls, A, delta, B, C, D):
        """Input-independent projections: an LTI system per channel."""
        A = np.asarray(A, np.float64)
        d, Q = A.shape
        return cls(A, np.zeros((d, d)), inverse_softplus(np.broadcast_to(np.asarray(delta, float), (d,))).copy(),
                   np.zeros((d, Q)), np.asarray(B, float).copy(),
                   np.zeros((d, Q)), np.asarray(C, float).copy(),
                   np.broadcast_to(np.asarray(D, float), (d,)).copy())

    @classmethod
    def feedthrough(cls, d, Q, gain=1.0):
        """Zero state path, ``y = gain * x``."""
        return cls(-np.ones((d, Q)), np.zeros((d, d)), np.zeros(d), np.zeros((d, Q)),
                   np.zeros(Q), np.zeros((d, Q)), np.zeros(Q), np.full(d, float(gain)))

    @classmethod
    def random(cls, d, Q, seed, dt_min=1e-3, dt_max=1e-1):
        """Stable seeded draw: negative-real A, log-uniform initial timescale."""
        rng = np.random.default_rng(seed)
        A = -rng.uniform(0.5, 2.0, (d, Q))
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), d))
        s = 1.0 / np.sqrt(d)
        return cls(A, rng.standard_normal((d, d)) * 0.1 * s, inverse_softplus(dt),
                   rng.standard_normal((d, Q)) * s, np.zeros(Q),
                   rng.standard_normal((d, Q)) * s, np.zeros(Q), np.ones(d))


def selective_scan(sp, X, h0=None, backend="auto"):
    """Sequential selective scan of ``X`` (L, d); returns (L, d)."""
    X = np.ascontiguousarray(X, np.float64)
    if X.ndim != 2 or X.shape[1] != sp.d:
        raise InvalidInputError(f"expected (L, {sp.d}) tokens, got {X.shape}")
    h0 = np.zeros((sp.d, sp.Q)) if h0 is None else np.ascontiguousarray(h0, np.float64)
    delta, B, C = sp.project(X)
    y, bad = _backend.get(backend).selective_scan_core(
        X, np.ascontiguousarray(delta), np.ascontiguousarray(sp.A, np.float64),
        np.ascontiguousarray(B), np.ascontiguousarray(C),
        np.ascontiguousarray(sp.D, np.float64), h0)
    if bad >= 0:
        raise NumericError(f"non-finite selective-scan output at step {bad}", where=bad)
    return np.asarray(y)


def selective_scan_parallel(sp, X):
    """Hillis-Steele associative scan over (decay, injection) pairs.

    O(L log L) work; a cross-check on the sequential kernel, not the
    production path.
    """
    X = np.asarray(X, np.float64)
    delta, B, C = sp.project(X)
    abar, coef = _backend.python.zoh_coefficients(delta[:, :, None], sp.A[None])
    a = abar
    b = coef * B[:, None, :] * X[:, :, None]
    L = len(X)
    stride = 1
    while stride < L:
        a_new = a.copy()
        b_new = b.copy()
        a_new[stride:] = a[stride:] * a[:-stride]
        b_new[stride:] = a[stride:] * b[:-stride] + b[stride:]
        a, b = a_new, b_new
        stride *= 2
    return np.einsum("ldq,lq->ld", b, C) + sp.D * X


def bidirectional(spf, spb, X, backend="auto"):
    X = np.asarray(X, np.float64)
    fwd = selective_scan(spf, X, backend=backend)
    bwd = selective_scan(spb, X[::-1], backend=backend)[::-1]
    return fwd + bwd
