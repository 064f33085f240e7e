"""
Entropy functions for the marginal penalties of unbalanced transport.

Two kinds are provided:

``balanced``
    Hard marginal constraint. ``phi`` is the indicator of ``{1}``, its
    conjugate is the identity and ``aprox`` is the identity.
``kl(rho)``
    Scaled Kullback-Leibler entropy ``phi(p) = rho (p log p - p + 1)`` with
    conjugate ``phi*(q) = rho (exp(q / rho) - 1)``. Here
    ``aprox(p) = rho p / (rho + eps)``.

``aprox`` is the anisotropic proximity operator
``argmin_q eps exp((p - q) / eps) + phi*(q)`` that turns a soft-min into
the next potential in the Sinkhorn update.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError

__all__ = ["Divergence", "balanced", "kl", "parse_divergence", "aprox",
           "phi_divergence"]


@dataclass(frozen=True)
class Divergence:
    """Marginal penalty of kind ``"balanced"`` or ``"kl"`` with scale ``rho``."""

    kind: str = "balanced"
    rho: float = np.inf

    def __post_init__(self):
        if self.kind not in ("balanced", "kl"):
            raise InputError(f"unknown divergence kind {self.kind!r}")
        if self.kind == "kl":
            rho = float(self.rho)
            if not (rho > 0 and np.isfinite(rho)):
                raise InputError("kl divergence needs a finite scale rho > 0")
            object.__setattr__(self, "rho", rho)
        else:
            object.__setattr__(self, "rho", np.inf)

    @property
    def is_balanced(self) -> bool:
        return self.kind == "balanced"

    def __str__(self):
        return "balanced" if self.is_balanced else f"kl:{self.rho:g}"

    def phi(self, p):
        """Entropy function; ``+inf`` outside its domain."""
        p = np.asarray(p, dtype=float)
        if self.is_balanced:
            return np.where(p == 1.0, 0.0, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        return np.where(p >= 0, self.rho * (plogp - p + 1.0), np.inf)

    def conj(self, q):
        """Legendre-Fenchel conjugate ``phi*``."""
        q = np.asarray(q, dtype=float)
        if self.is_balanced:
            return q
        return self.rho * np.expm1(q / self.rho)

    def conj_grad(self, q):
        """Derivative of ``phi*``."""
        q = np.asarray(q, dtype=float)
        if self.is_balanced:
            return np.ones_like(q)
        return np.exp(q / self.rho)

    def damping(self, eps: float) -> float:
        """Slope of ``aprox``, which is linear for both kinds."""
        if self.is_balanced:
            return 1.0
        return self.rho / (self.rho + eps)

    def aprox(self, p, eps: float):
        return aprox(self, p, eps)


def balanced() -> Divergence:
    return Divergence("balanced")


def kl(rho: float) -> Divergence:
    return Divergence("kl", rho)


def parse_divergence(text: str) -> Divergence:
    """Parse ``"balanced"`` or ``"kl:<rho>"``."""
    text = text.strip().lower()
    if text == "balanced":
        return balanced()
    if text.startswith("kl:"):
        try:
            rho = float(text[3:])
        except ValueError:
            raise InputError(f"bad divergence scale in {text!r}") from None
        return kl(rho)
    raise InputError(f"divergence must be 'balanced' or 'kl:<rho>', got {text!r}")


def aprox(spec: Divergence, p, eps: float):
    """Anisotropic proximity operator of ``phi*`` at ``p``.

    Parameters
    ----------
    spec : Divergence
    p : float or ndarray
    eps : float
        Entropic regularization, must be positive.
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    p_arr = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p_arr)):
        raise InputError("aprox argument must be finite")
    out = spec.damping(eps) * p_arr
    return float(out) if out.ndim == 0 else out


def phi_divergence(spec: Divergence, mu, nu, atol: float = 0.0) -> float:
    """Csiszar divergence ``D_phi(mu | nu)`` between two weight vectors.

    Atoms where ``nu`` vanishes contribute ``phi'_inf`` times their mass,
    which is ``+inf`` for both kinds. For the balanced kind ``atol`` is the
    tolerance under which ``mu`` and ``nu`` count as equal.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    nu = np.asarray(nu, dtype=float).ravel()
    if mu.shape != nu.shape:
        raise InputError("weight vectors have different lengths")
    if np.any(mu < 0) or np.any(nu < 0):
        raise InputError("weights must be nonnegative")
    if spec.is_balanced:
        return 0.0 if np.all(np.abs(mu - nu) <= atol) else np.inf
    pos = nu > 0
    if np.any(mu[~pos] > 0):
        return np.inf
    ratio = mu[pos] / nu[pos]
    return float(np.sum(nu[pos] * spec.phi(ratio)))
