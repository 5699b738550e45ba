"""KL and Minka alpha-divergences between discrete distributions."""
from __future__ import annotations

import numpy as np
from scipy.special import rel_entr

from pgop.errors import ConfigError, SupportError


def kl_divergence(p, q, axis=-1):
    """KL(p || q) along ``axis``; raises when p has mass where q has none."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any((p > 0) & (q <= 0)):
        raise SupportError("KL(p || q) needs support(p) within support(q)")
    return np.sum(rel_entr(p, q), axis=axis)


def alpha_divergence(p, q, alpha: float, axis=-1):
    """Minka's alpha-divergence.

    D_a(p || q) = sum_x [a p + (1 - a) q - p^a q^(1-a)] / (a (1 - a)) for a in
    (0, 1), with the KL(p || q) limit at a = 1. Also known in this family as
    the Renyi-type divergence of order a.
    """
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if alpha == 1.0:
        return kl_divergence(p, q, axis=axis)
    mixed = p ** alpha * q ** (1.0 - alpha)
    terms = alpha * p + (1.0 - alpha) * q - mixed
    return np.sum(terms, axis=axis) / (alpha * (1.0 - alpha))


def geometric_mixture(p, q, alpha: float, axis=-1):
    """Normalized p^a q^(1-a) along ``axis``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    m = p ** alpha * q ** (1.0 - alpha)
    return m / m.sum(axis=axis, keepdims=True)
