"""Least-squares estimators of one-step conditional expectations.

The Euler chains are Markov, so a conditional expectation given the past is
a function of the current state. It is approximated by a polynomial in the
standardised state, fitted by normal equations with a small ridge on the
non-constant coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericalError

DEFAULT_RIDGE = 1e-10
MAX_CONDITION = 1e13
DIRECT_CONDITION = 1e6


@dataclass(frozen=True)
class Basis:
    """Polynomials ``((x - shift) / scale) ** k`` for ``k = 0..degree``."""

    degree: int
    shift: float = 0.0
    scale: float = 1.0
    kind: str = "polynomial"

    def __post_init__(self):
        if self.kind != "polynomial":
            raise ConfigError("condexp.Basis", f"unsupported basis kind {self.kind!r}")
        if self.degree < 0:
            raise ConfigError("condexp.Basis", "degree must be >= 0")
        if not self.scale > 0:
            raise ConfigError("condexp.Basis", "scale must be positive")

    @classmethod
    def centered(cls, degree: int, states: np.ndarray) -> "Basis":
        """Centre on the sample mean and scale by the sample standard deviation.

        A degenerate cloud (all states equal) keeps unit scale; the ridge term
        then pins the non-constant coefficients to zero.
        """
        states = np.asarray(states, dtype=float)
        shift = float(states.mean())
        spread = float(states.std())
        if not spread > 1e-12 * max(1.0, abs(shift)):
            spread = 1.0
        return cls(int(degree), shift, spread)

    def design(self, x) -> np.ndarray:
        u = (np.asarray(x, dtype=float) - self.shift) / self.scale
        return np.vander(u.ravel(), self.degree + 1, increasing=True).reshape(u.shape + (self.degree + 1,))


@dataclass(frozen=True, eq=False)
class FittedFunction:
    basis: Basis
    coeffs: np.ndarray
    clip: Optional[float] = None

    def __call__(self, x):
        return evaluate(self, x)


def evaluate(fn: FittedFunction, x):
    """``sum_k c_k phi_k(x)``, optionally clipped to ``[-clip, clip]``."""
    values = fn.basis.design(x) @ fn.coeffs
    if fn.clip is not None:
        values = np.clip(values, -fn.clip, fn.clip)
    return values


def fit_many(
    basis: Basis, states: np.ndarray, targets: np.ndarray, ridge: float = DEFAULT_RIDGE,
    clip: Optional[float] = None,
) -> list[FittedFunction]:
    """Regress each column of ``targets`` (shape ``(M, k)``) on the same design."""
    return fit_design(basis, basis.design(np.asarray(states, dtype=float)), targets, ridge, clip)


def fit_design(
    basis: Basis, phi: np.ndarray, targets: np.ndarray, ridge: float = DEFAULT_RIDGE,
    clip: Optional[float] = None,
) -> list[FittedFunction]:
    """As :func:`fit_many` with a precomputed design matrix ``basis.design(states)``."""
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    M = phi.shape[0]
    if M <= basis.degree + 1:
        raise ConfigError(
            "condexp.fit_least_squares", f"need more than {basis.degree + 1} samples, got {M}"
        )
    if ridge < 0:
        raise ConfigError("condexp.fit_least_squares", "ridge must be nonnegative")
    # intercept unpenalised: constants must be reproduced exactly
    idx = np.arange(1, basis.degree + 1)
    gram = phi.T @ phi / M
    gram[idx, idx] += ridge
    rhs = phi.T @ targets / M
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError(
            "condexp.fit_least_squares", f"Gram matrix numerically singular (condition {cond:.3g})"
        )
    if cond < DIRECT_CONDITION:
        coeffs = np.linalg.solve(gram, rhs)
    else:
        # ill-conditioned but usable: solve the ridge problem on the design
        # itself, which does not square the condition number
        pen = np.zeros((basis.degree + 1, basis.degree + 1))
        pen[idx, idx] = math.sqrt(ridge)
        a = np.vstack([phi / math.sqrt(M), pen])
        b = np.vstack([targets / math.sqrt(M), np.zeros((basis.degree + 1, targets.shape[1]))])
        coeffs = np.linalg.lstsq(a, b, rcond=None)[0]
    return [FittedFunction(basis, coeffs[:, k].copy(), clip) for k in range(coeffs.shape[1])]


def evaluate_design(fn: FittedFunction, phi: np.ndarray) -> np.ndarray:
    values = phi @ fn.coeffs
    if fn.clip is not None:
        values = np.clip(values, -fn.clip, fn.clip)
    return values


def fit_least_squares(
    basis: Basis, states: np.ndarray, targets: np.ndarray, ridge: float = DEFAULT_RIDGE,
    clip: Optional[float] = None,
) -> FittedFunction:
    return fit_many(basis, states, np.asarray(targets, dtype=float)[:, None], ridge, clip)[0]
