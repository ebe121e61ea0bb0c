"""Semi-dual entropic OT with a squared-difference cost.

Convention: the entropic problem is ``min <c, pi> + eps * KL(pi | mu x nu)``
with the probabilistic KL. Under it the semi-dual
``<v^eps, mu> + <v, nu>`` is exact (no additive constant), where

    v^eps(y) = -eps * log sum_b nu_b exp((v_b - (y - y_b)^2) / eps).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .diffnet import MlpNet, backward_tape, forward_batch


@dataclass(frozen=True)
class EotConfig:
    epsilon: float = 1.0
    mc_samples: int = 32

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")


class ConvergenceError(RuntimeError):
    pass


class PairContractError(ValueError):
    """A pair handed to the regularizer is not an edge of the pair set."""


@dataclass(frozen=True)
class DiscreteMeasure:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=np.float64).ravel()
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if a.size == 0 or a.shape != w.shape:
            raise ValueError("atoms and weights must be nonempty and of equal length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, atoms) -> "DiscreteMeasure":
        a = np.asarray(atoms, dtype=np.float64).ravel()
        return cls(a, np.full(a.size, 1.0 / a.size))


def sq_cost(x, y) -> np.ndarray:
    return (np.asarray(x, float)[:, None] - np.asarray(y, float)[None, :]) ** 2


def c_transform(v_values, samples, y, eps: float):
    """Smoothed c-transform of the potential values ``v_values`` carried by
    equally weighted ``samples``, evaluated at ``y`` (scalar or array)."""
    v = np.asarray(v_values, dtype=np.float64).ravel()
    s = np.asarray(samples, dtype=np.float64).ravel()
    if v.size == 0 or v.size != s.size:
        raise ValueError("need equally many (>= 1) potential values and samples")
    y = np.asarray(y, dtype=np.float64)
    z = (v - (y[..., None] - s) ** 2) / eps
    return -eps * (logsumexp(z, axis=-1) - np.log(v.size))


# ---------------------------------------------------------------------------
# Sinkhorn


@dataclass
class SinkhornResult:
    primal: float
    u: np.ndarray  # potential on mu's atoms
    v: np.ndarray  # potential on nu's atoms
    coupling: np.ndarray
    iterations: int
    residual: float


def sinkhorn(mu: DiscreteMeasure, nu: DiscreteMeasure, eps: float,
             max_iter: int = 10_000, tol: float = 1e-9) -> SinkhornResult:
    """Log-domain alternating scaling until the row-marginal violation (l1)
    drops below ``tol``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    C = sq_cost(mu.atoms, nu.atoms)
    la, lb = np.log(mu.weights), np.log(nu.weights)
    f = np.zeros(C.shape[0])
    g = np.zeros(C.shape[1])
    residual = np.inf
    for it in range(1, max_iter + 1):
        g = -eps * logsumexp((f[:, None] - C) / eps + la[:, None], axis=0)
        f = -eps * logsumexp((g[None, :] - C) / eps + lb[None, :], axis=1)
        logP = (f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :]
        P = np.exp(logP)
        # columns are exact right after the g update; f update fixes rows,
        # so measure the column violation it reintroduces
        residual = float(np.abs(P.sum(axis=0) - nu.weights).sum())
        if residual < tol:
            break
    else:
        raise ConvergenceError(
            f"sinkhorn did not converge in {max_iter} iterations (residual {residual:.3e})"
        )
    mask = P > 0
    kl = float((P[mask] * (logP[mask] - (la[:, None] + lb[None, :])[mask])).sum())
    primal = float((C * P).sum()) + eps * kl
    return SinkhornResult(primal, f, g, P, it, residual)


def semidual_value(v_on_nu, mu: DiscreteMeasure, nu: DiscreteMeasure, eps: float) -> float:
    v = np.asarray(v_on_nu, dtype=np.float64).ravel()
    if v.size != nu.atoms.size:
        raise ValueError(f"potential has {v.size} values for {nu.atoms.size} atoms")
    z = (v[None, :] - sq_cost(mu.atoms, nu.atoms)) / eps + np.log(nu.weights)[None, :]
    vc = -eps * logsumexp(z, axis=1)
    return float(mu.weights @ vc + nu.weights @ v)


# ---------------------------------------------------------------------------
# neural regularizer


@dataclass
class RegEstimate:
    value: float
    grad_gen: np.ndarray | None
    grad_pot: np.ndarray | None


def _gen_inputs(x, u):
    """Rows ``[x, u]`` for every uniform draw: x (P, d), u (P, M) -> (P*M, d+1)."""
    P, M = u.shape
    X = np.repeat(x, M, axis=0)
    return np.concatenate([X, u.reshape(-1, 1)], axis=1)


def regularizer_estimate(
    gen: MlpNet,
    pot: MlpNet,
    xi,
    xj,
    uniforms,
    eps: float,
    batch_size: int | None = None,
    need_gen_grad: bool = True,
    need_pot_grad: bool = True,
) -> RegEstimate:
    """Monte-Carlo semi-dual regularizer over a batch of directed pairs.

    ``xi``/``xj`` are the (already normalized) tail and head covariates,
    shape (P, d); ``uniforms`` has shape (P, M). For pair ``p`` with draws
    ``u_m``, tail samples ``s_m = gen(xi, u_m)``, head samples
    ``t_m = gen(xj, u_m)`` and potentials ``w_m = pot(xi, s_m)``, the term is

        mean_m c_transform(w, s, t_m) + mean_m w_m,

    and the result is the sum over pairs divided by ``M * batch_size``
    (``batch_size`` defaults to P). Gradients flow through every appearance
    of the generator, including the samples inside the c-transform.
    """
    xi = np.asarray(xi, dtype=np.float64)
    xj = np.asarray(xj, dtype=np.float64)
    u = np.asarray(uniforms, dtype=np.float64)
    if u.ndim != 2 or xi.shape[0] != u.shape[0] or xj.shape != xi.shape:
        raise ValueError("xi, xj and uniforms must agree on the number of pairs")
    P, M = u.shape
    B = P if batch_size is None else batch_size
    if P == 0:
        return RegEstimate(0.0,
                           np.zeros(gen.arch.n_params) if need_gen_grad else None,
                           np.zeros(pot.arch.n_params) if need_pot_grad else None)

    gin = np.concatenate([_gen_inputs(xi, u), _gen_inputs(xj, u)], axis=0)
    gout, gtape = forward_batch(gen, gin, keep=True)
    s = gout[: P * M].reshape(P, M)
    t = gout[P * M:].reshape(P, M)
    value, d_s, d_t, pot_grad = semidual_pair_terms(
        pot, xi, s, t, eps, B, need_gen_grad, need_pot_grad)
    grad_gen = None
    if need_gen_grad:
        up = np.concatenate([d_s.ravel(), d_t.ravel()])
        grad_gen, _ = backward_tape(gen, gtape, up, need_params=True, need_input=False)
    return RegEstimate(value, grad_gen, pot_grad)


def semidual_pair_terms(pot: MlpNet, xi, s, t, eps: float, batch_size: int,
                        need_sample_grad: bool = True, need_pot_grad: bool = True):
    """Regularizer value from generator samples already in hand.

    ``s`` (tail samples) and ``t`` (head samples) have shape (P, M). Returns
    ``(value, d_s, d_t, pot_grad)`` where ``d_s``/``d_t`` are the total
    derivatives w.r.t. the samples (through the potential too) and
    ``pot_grad`` the potential parameter gradient; unrequested parts are
    ``None``.
    """
    P, M = s.shape
    pin = np.concatenate([np.repeat(xi, M, axis=0), s.reshape(-1, 1)], axis=1)
    w_flat, ptape = forward_batch(pot, pin, keep=True)
    w = w_flat.reshape(P, M)

    # K[p, k, m] = (w_m - (t_k - s_m)^2) / eps, soft-min over m
    diff = t[:, :, None] - s[:, None, :]
    K = (w[:, None, :] - diff * diff) / eps
    kmax = K.max(axis=2, keepdims=True)
    E = np.exp(K - kmax)
    Z = E.sum(axis=2, keepdims=True)
    lse = (kmax + np.log(Z))[:, :, 0]
    vc = -eps * (lse - np.log(M))
    value = float((vc.sum() + w.sum()) / (M * batch_size))
    if not (need_sample_grad or need_pot_grad):
        return value, None, None, None

    soft = E / Z
    scale = 1.0 / (M * batch_size)
    d_w = scale * (1.0 - soft.sum(axis=1))
    sd = soft * diff
    pot_grad, pin_grad = backward_tape(
        pot, ptape, d_w.ravel(), need_params=need_pot_grad, need_input=need_sample_grad
    )
    d_s = d_t = None
    if need_sample_grad:
        d_s = scale * (-2.0 * sd.sum(axis=1)) + pin_grad[:, -1].reshape(P, M)
        d_t = scale * (2.0 * sd.sum(axis=2))
    return value, d_s, d_t, pot_grad


def check_pairs(pairset, tails, heads):
    for t, h in zip(tails, heads):
        if (int(t), int(h)) not in pairset:
            raise PairContractError(f"pair ({int(t)}, {int(h)}) is not in the directed pair set")


def regularizer_for_pairs(gen, pot, pairset, X, tails, heads, uniforms, eps,
                          batch_size=None, need_gen_grad=True, need_pot_grad=True) -> RegEstimate:
    """:func:`regularizer_estimate` over pairs given as node indices into
    ``X`` (normalized covariates), after checking each is an edge of
    ``pairset``."""
    check_pairs(pairset, tails, heads)
    X = np.asarray(X, dtype=np.float64)
    tails = np.asarray(tails, dtype=np.int64)
    heads = np.asarray(heads, dtype=np.int64)
    return regularizer_estimate(gen, pot, X[tails], X[heads], uniforms, eps,
                                batch_size, need_gen_grad, need_pot_grad)
