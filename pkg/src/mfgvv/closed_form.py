"""Exact solution of the quadratic mean-field MFG.

With ``H = |p|^2/2 - |x - mean|^2/2``, ``g = 0`` and ``m0 = N(m, sigma^2 I)``::

    u(t, x)   = a(t) |x - m|^2 + (beta^2 d / 2) log cosh(T - t),  a(t) = tanh(T - t) / 2
    rho_t     = N(m, v(t) I)
    v(t)      = sigma^2 (cosh(T-t) / cosh T)^2 + beta^2 cosh(T-t)^2 (tanh T - tanh(T-t))

The exponential ratios are evaluated after factoring out the largest exponent,
which keeps every expression finite for long horizons.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError


def _check_time(t, T):
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12) or np.any(t > T + 1e-12):
        raise ConfigurationError(f"time outside [0, {T}]")
    return np.clip(t, 0.0, T)


def _ratio_tanh(s):
    """``(e^s - e^-s) / (e^s + e^-s)`` for ``s >= 0`` without overflow."""
    e = np.exp(-2.0 * s)
    return (1.0 - e) / (1.0 + e)


def _log_cosh(s):
    """``log((e^s + e^-s) / 2)``, stable for large ``s``."""
    s = np.abs(s)
    return s + np.log1p(np.exp(-2.0 * s)) - np.log(2.0)


def curvature_coef(t, T):
    """Coefficient ``a(t)`` of ``|x - m|^2`` in the value function."""
    t = _check_time(t, T)
    return 0.5 * _ratio_tanh(T - t)


def u_exact(t, x, beta, m=0.0, T=1.0, d=1):
    """Value function; ``x`` may carry a trailing dimension of size ``d`` when ``d > 1``."""
    t = _check_time(t, T)
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    r2 = np.square(x - m) if d == 1 else np.sum(np.square(x - m), axis=-1)
    return 0.5 * _ratio_tanh(T - t) * r2 + 0.5 * beta**2 * d * _log_cosh(T - t)


def grad_u_exact(t, x, beta=0.0, m=0.0, T=1.0):
    """Spatial gradient in 1-D; independent of ``beta``."""
    return 2.0 * curvature_coef(t, T) * (np.asarray(x, dtype=float) - m)


def density_variance(t, beta, sigma2, T=1.0):
    """Per-coordinate variance ``v(t)`` of ``rho_t``."""
    if not sigma2 > 0:
        raise ConfigurationError(f"sigma^2 must be positive, got {sigma2}")
    t = _check_time(t, T)
    s = T - t
    # cosh(T - t) / cosh(T), then cosh(T - t)^2 (tanh T - tanh(T - t)) in factored form
    ratio = np.exp(-t) * (1.0 + np.exp(-2.0 * s)) / (1.0 + np.exp(-2.0 * T))
    # cosh^2(s) (tanh T - tanh s) = cosh(s) sinh(t) / cosh(T)
    growth = 0.5 * (1.0 + np.exp(-2.0 * s)) * (1.0 - np.exp(-2.0 * t)) / (1.0 + np.exp(-2.0 * T))
    growth = growth * np.exp(s + t - T)
    return sigma2 * ratio**2 + beta**2 * growth


def rho_exact_params(t, beta, m, sigma2, T=1.0):
    return {"mean": float(m) if np.ndim(m) == 0 else np.asarray(m), "variance": density_variance(t, beta, sigma2, T)}


def rho_exact(t, x, beta, m, sigma2, T=1.0):
    """1-D Gaussian density of ``rho_t`` at points ``x``."""
    v = density_variance(t, beta, sigma2, T)
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * np.square(x - m) / v) / np.sqrt(2.0 * np.pi * v)


def viscosity_gap_exact(beta, T=1.0, d=1):
    """``sup |u^beta - u^0| = (beta^2 d / 2) log cosh T``, attained at ``t = 0``."""
    return 0.5 * np.square(beta) * d * _log_cosh(T)


def w1_gap_exact(t, beta, sigma2, T=1.0):
    """``W1(rho^beta_t, rho^0_t)`` for the two same-mean Gaussians."""
    s_b = np.sqrt(density_variance(t, beta, sigma2, T))
    s_0 = np.sqrt(density_variance(t, 0.0, sigma2, T))
    return np.sqrt(2.0 / np.pi) * np.abs(s_b - s_0)
