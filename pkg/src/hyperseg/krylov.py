"""Preconditioned MINRES and CG for symmetric positive definite systems."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

Operator = Callable[[np.ndarray], np.ndarray]


@dataclass
class KrylovInfo:
    iterations: int
    precond_relres: float  # ||r||_{Q^-1} / ||b||_{Q^-1}
    relres: float  # ||b - A x|| / ||b||
    converged: bool
    breakdown: bool = False
    fallback: bool = False  # result discarded in favour of steepest descent


def _identity(x):
    return x


def _true_relres(A, b, x, bnorm):
    return float(np.linalg.norm(b - A(x)) / bnorm) if bnorm > 0 else 0.0


def minres(A: Operator, b, M: Operator | None = None, tol: float = 0.1, maxiter: int = 100):
    """Preconditioned MINRES (Paige & Saunders) for ``A x = b``.

    ``M`` applies the inverse of an SPD preconditioner. Iteration stops once
    both the preconditioned and the plain relative residuals are at most
    ``tol``, or after ``maxiter`` iterations.

    Returns
    -------
    x : ndarray
    info : KrylovInfo
    """
    M = M or _identity
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    bnorm = float(np.linalg.norm(b))
    r1 = b.copy()
    y = M(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise ValueError("preconditioner is not positive definite")
    beta1 = np.sqrt(beta1)
    if beta1 == 0:
        return x, KrylovInfo(0, 0.0, 0.0, True)

    oldb, beta, dbar, epsln, phibar = 0.0, beta1, 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    w = np.zeros_like(b)
    w2 = np.zeros_like(b)
    r2 = r1
    eps = np.finfo(float).eps
    relres = np.inf
    itn = 0
    while itn < maxiter:
        itn += 1
        v = y / beta
        y = A(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = M(r2)
        oldb = beta
        beta2 = float(r2 @ y)
        if beta2 < 0:
            raise ValueError("preconditioner is not positive definite")
        beta = np.sqrt(beta2)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = np.hypot(gbar, beta)
        if not np.isfinite(gamma) or gamma <= eps * beta1:
            logger.warning("MINRES breakdown at iteration %d", itn)
            return x, KrylovInfo(itn, phibar / beta1, _true_relres(A, b, x, bnorm), False, True)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        if phibar / beta1 <= tol or beta == 0:
            relres = _true_relres(A, b, x, bnorm)
            if relres <= tol or beta == 0:
                return x, KrylovInfo(itn, phibar / beta1, relres, True)
    relres = _true_relres(A, b, x, bnorm)
    return x, KrylovInfo(itn, phibar / beta1, relres, False)


def pcg(A: Operator, b, M: Operator | None = None, tol: float = 0.1, maxiter: int = 100):
    """Preconditioned conjugate gradients with the same stopping rule as :func:`minres`."""
    M = M or _identity
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0:
        return x, KrylovInfo(0, 0.0, 0.0, True)
    r = b.copy()
    z = M(r)
    rz = float(r @ z)
    rz0 = rz
    p = z.copy()
    for itn in range(1, maxiter + 1):
        Ap = A(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            logger.warning("CG breakdown at iteration %d", itn)
            return x, KrylovInfo(itn, np.sqrt(rz / rz0), float(np.linalg.norm(r) / bnorm), False, True)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = M(r)
        rz_new = float(r @ z)
        prel = np.sqrt(max(rz_new, 0.0) / rz0)
        relres = float(np.linalg.norm(r) / bnorm)
        if prel <= tol and relres <= tol:
            return x, KrylovInfo(itn, prel, relres, True)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, KrylovInfo(maxiter, np.sqrt(rz / rz0), float(np.linalg.norm(r) / bnorm), False)
