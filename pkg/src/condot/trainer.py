"""Empirical minimax loss and doubly smoothed gradient descent-ascent."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import diffnet
from .condcdf import CdfTable
from .data import DataError, Dataset, Normalizer
from .diffnet import MlpArch, MlpNet, backward_tape, forward_batch
from .eotreg import _gen_inputs, semidual_pair_terms
from .pairgraph import DirectedPairSet, build_pairset

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid training configuration; ``errors`` maps field -> message."""

    def __init__(self, errors: dict[str, str]):
        self.errors = dict(errors)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.errors.items()))


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lam: float = 0.4
    epsilon: float = 1.0
    h: float = 0.3
    r1: float = 3.0
    r2: float = 2.0
    alpha: float = 1e-3
    beta: float = 1e-3
    gamma: float = 0.5
    delta: float = 0.7
    batch_size: int = 64
    mc_samples: int = 32
    iterations: int = 20_000
    seed: int = 0
    hidden_widths: tuple[int, ...] = diffnet.DEFAULT_HIDDEN
    history_every: int = 100

    def __post_init__(self):
        self.hidden_widths = tuple(self.hidden_widths)
        self.validate()

    def validate(self):
        e = {}
        if not (isinstance(self.lam, (int, float)) and self.lam >= 0):
            e["lam"] = "must be a nonnegative number"
        for name in ("epsilon", "h", "alpha", "beta"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0):
                e[name] = "must be a positive number"
        for name in ("r1", "r2"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v >= 0):
                e[name] = "must be a nonnegative number"
        if "r1" not in e and "r2" not in e and self.r1 > 0 and self.r2 > 0 and self.r1 == self.r2:
            e["r2"] = "must differ from r1 when both are nonzero"
        for name in ("gamma", "delta"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0 <= v <= 1):
                e[name] = "must lie in [0, 1]"
        for name in ("batch_size", "mc_samples", "history_every"):
            v = getattr(self, name)
            if not (isinstance(v, int) and not isinstance(v, bool) and v >= 1):
                e[name] = "must be a positive integer"
        if not (isinstance(self.iterations, int) and self.iterations >= 0):
            e["iterations"] = "must be a nonnegative integer"
        if not isinstance(self.seed, int):
            e["seed"] = "must be an integer"
        if not self.hidden_widths or not all(isinstance(w, int) and w >= 1 for w in self.hidden_widths):
            e["hidden_widths"] = "must be a nonempty list of positive integers"
        if e:
            raise ConfigError(e)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError({k: "unknown field" for k in unknown})
        kw = dict(d)
        floats = ("lam", "epsilon", "h", "r1", "r2", "alpha", "beta", "gamma", "delta")
        for k in floats:
            if k in kw and isinstance(kw[k], int) and not isinstance(kw[k], bool):
                kw[k] = float(kw[k])
        if "hidden_widths" in kw:
            if not isinstance(kw["hidden_widths"], (list, tuple)):
                raise ConfigError({"hidden_widths": "must be a list"})
            kw["hidden_widths"] = tuple(kw["hidden_widths"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError({"<file>": f"invalid JSON: {exc}"}) from None
        if not isinstance(d, dict):
            raise ConfigError({"<file>": "top level must be an object"})
        return cls.from_dict(d)


def ablate(config: TrainConfig, ablation: str | None) -> TrainConfig:
    if ablation in (None, "", "none"):
        return config
    if ablation == "no-reg":
        return config.replace(lam=0.0)
    if ablation == "no-smooth":
        return config.replace(r1=0.0, r2=0.0)
    raise ConfigError({"ablation": f"unknown ablation {ablation!r}"})


# ---------------------------------------------------------------------------
# problem + state


@dataclass
class Problem:
    """Everything the loss needs that stays fixed during training."""

    X: np.ndarray  # normalized train covariates, (n, d)
    cdfs: CdfTable  # built on standardized responses
    pairs: DirectedPairSet
    normalizer: Normalizer

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_dataset(cls, train: Dataset, h: float) -> "Problem":
        if len(train) == 0:
            raise DataError("training split is empty")
        norm = train.normalizer
        X = norm.covariates(train.X)
        cdfs = CdfTable([norm.responses(g.responses) for g in train.groups], h)
        pairs = build_pairset(X, train.counts)
        return cls(X, cdfs, pairs, norm)


@dataclass
class TrainState:
    gen: MlpNet
    pot: MlpNet
    p: np.ndarray
    q: np.ndarray
    iteration: int
    rng: np.random.Generator
    order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cursor: int = 0

    def copy(self) -> "TrainState":
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self.rng.bit_generator.state
        return TrainState(self.gen.copy(), self.pot.copy(), self.p.copy(), self.q.copy(),
                          self.iteration, rng, self.order.copy(), self.cursor)


def init_state(d: int, config: TrainConfig) -> TrainState:
    rng = np.random.default_rng(config.seed)
    arch = MlpArch(d + 1, config.hidden_widths)
    gen = diffnet.init_net(arch, rng)
    pot = diffnet.init_net(arch, rng)
    return TrainState(gen, pot, gen.params.copy(), pot.params.copy(), 0, rng)


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws strictly inside (0, 1)."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return (k + 0.5) / 2.0**53


@dataclass
class Batch:
    nodes: np.ndarray
    u_fit: np.ndarray  # (B,)
    u_reg: np.ndarray  # (B, M)


def next_batch(state: TrainState, n: int, config: TrainConfig) -> Batch:
    """Next slice of an epoch-wise permutation of the training nodes; the
    last slice of an epoch may be short."""
    if state.cursor >= state.order.size:
        state.order = state.rng.permutation(n)
        state.cursor = 0
    nodes = state.order[state.cursor: state.cursor + config.batch_size]
    state.cursor += nodes.size
    u_fit = open_uniform(state.rng, nodes.size)
    u_reg = open_uniform(state.rng, (nodes.size, config.mc_samples))
    return Batch(nodes, u_fit, u_reg)


# ---------------------------------------------------------------------------
# loss pieces


def fit_estimate(gen: MlpNet, cdfs: CdfTable, X: np.ndarray, nodes, u, need_grad: bool = True):
    """Mean of ``(u_b - F_b(gen(x_b, u_b)))^2`` over the batch, with its
    generator gradient."""
    nodes = np.asarray(nodes)
    u = np.asarray(u, dtype=np.float64)
    inp = np.concatenate([X[nodes], u[:, None]], axis=1)
    out, tape = forward_batch(gen, inp, keep=True)
    F, f = cdfs.eval_with_derivative(nodes, out)
    r = u - F
    B = nodes.size
    value = float((r * r).sum() / B)
    if not need_grad:
        return value, None
    grad, _ = backward_tape(gen, tape, -2.0 * r * f / B, need_params=True, need_input=False)
    return value, grad


@dataclass
class LossEstimate:
    loss: float
    fit: float
    reg: float
    grad_gen: np.ndarray | None
    grad_pot: np.ndarray | None


def loss_estimate(
    problem: Problem,
    gen: MlpNet,
    pot: MlpNet,
    p: np.ndarray,
    q: np.ndarray,
    config: TrainConfig,
    batch: Batch,
    need_gen_grad: bool = True,
    need_pot_grad: bool = True,
) -> LossEstimate:
    """``Fit + lam * R + r1/2 |gen - p|^2 - r2/2 |pot - q|^2`` on one batch.

    Batch nodes without an outgoing edge (the tree root) only enter the
    fitness term; the regularizer is still averaged over the full batch.
    The generator runs once over the fitness rows and both sample blocks.
    """
    nodes = batch.nodes
    B = nodes.size
    X = problem.X
    heads = problem.pairs.heads[nodes]
    has = heads >= 0
    use_reg = config.lam > 0
    tails = nodes[has]
    u_reg = batch.u_reg[has]
    P, M = u_reg.shape

    blocks = [np.concatenate([X[nodes], batch.u_fit[:, None]], axis=1)]
    if use_reg and P:
        blocks.append(_gen_inputs(X[tails], u_reg))
        blocks.append(_gen_inputs(X[heads[has]], u_reg))
    gin = np.concatenate(blocks, axis=0) if len(blocks) > 1 else blocks[0]
    if need_gen_grad:
        gout, gtape = forward_batch(gen, gin, keep=True)
    else:
        gout = forward_batch(gen, gin)

    out = gout[:B]
    F, f = problem.cdfs.eval_with_derivative(nodes, out)
    r = batch.u_fit - F
    fit = float((r * r).sum() / B)

    reg = 0.0
    upstream = np.zeros(gout.size) if need_gen_grad else None
    grad_pot = np.zeros(pot.arch.n_params) if need_pot_grad else None
    if need_gen_grad:
        upstream[:B] = -2.0 * r * f / B
    if use_reg and P:
        s = gout[B: B + P * M].reshape(P, M)
        t = gout[B + P * M:].reshape(P, M)
        reg, d_s, d_t, g_pot = semidual_pair_terms(
            pot, X[tails], s, t, config.epsilon, B, need_gen_grad, need_pot_grad)
        if need_gen_grad:
            upstream[B: B + P * M] = config.lam * d_s.ravel()
            upstream[B + P * M:] = config.lam * d_t.ravel()
        if need_pot_grad:
            grad_pot = config.lam * g_pot

    dtheta = gen.params - p
    dphi = pot.params - q
    loss = (fit + config.lam * reg + 0.5 * config.r1 * float(dtheta @ dtheta)
            - 0.5 * config.r2 * float(dphi @ dphi))

    grad_gen = None
    if need_gen_grad:
        grad_gen, _ = backward_tape(gen, gtape, upstream, need_params=True, need_input=False)
        grad_gen += config.r1 * dtheta
    if need_pot_grad:
        grad_pot -= config.r2 * dphi
    return LossEstimate(loss, fit, reg, grad_gen, grad_pot)


# ---------------------------------------------------------------------------
# update rule


def dsgda_update(theta, phi, p, q, grad_theta: Callable, grad_phi: Callable,
                 alpha, beta, gamma, delta):
    """One doubly smoothed GDA update on flat vectors.

    ``grad_theta(theta, phi)`` and ``grad_phi(theta_new, phi)`` return full
    gradients of the smoothed objective (smoothing terms included).
    """
    gt = grad_theta(theta, phi)
    _check_finite(gt, "theta")
    theta_new = theta - alpha * gt
    gp = grad_phi(theta_new, phi)
    _check_finite(gp, "phi")
    phi_new = phi + beta * gp
    p_new = p + gamma * (theta_new - p)
    q_new = q + delta * (phi_new - q)
    return theta_new, phi_new, p_new, q_new


def _check_finite(g, name):
    if not np.all(np.isfinite(g)):
        bad = int((~np.isfinite(g)).sum())
        raise DivergenceError(f"non-finite {name}-gradient ({bad} entries); lower the learning rates")


def dsgda_step(problem: Problem, state: TrainState, config: TrainConfig, batch: Batch | None = None):
    """Advance ``state`` by one update on a fresh batch. Returns the
    :class:`LossEstimate` computed at the pre-update parameters."""
    if batch is None:
        batch = next_batch(state, problem.n, config)
    record = {}

    def g_theta(theta, phi):
        est = loss_estimate(problem, state.gen.with_params(theta), state.pot.with_params(phi),
                            state.p, state.q, config, batch, need_gen_grad=True, need_pot_grad=False)
        record["est"] = est
        return est.grad_gen

    def g_phi(theta, phi):
        est = loss_estimate(problem, state.gen.with_params(theta), state.pot.with_params(phi),
                            state.p, state.q, config, batch, need_gen_grad=False, need_pot_grad=True)
        return est.grad_pot

    theta, phi, p, q = dsgda_update(state.gen.params, state.pot.params, state.p, state.q,
                                    g_theta, g_phi, config.alpha, config.beta,
                                    config.gamma, config.delta)
    state.gen = state.gen.with_params(theta)
    state.pot = state.pot.with_params(phi)
    state.p, state.q = p, q
    state.iteration += 1
    return record["est"]


@dataclass
class HistoryRow:
    iteration: int
    fit: float
    reg: float
    loss: float


def train(train_set: Dataset, config: TrainConfig, checkpoint: str | Path | None = None,
          progress: Callable[[HistoryRow], None] | None = None):
    """Run ``config.iterations`` updates from a seeded initialization.

    Returns ``(problem, state, history)``. When ``checkpoint`` is given the
    final state is written there, also on ``KeyboardInterrupt``.
    """
    problem = Problem.from_dataset(train_set, config.h)
    state = init_state(problem.d, config)
    history: list[HistoryRow] = []
    try:
        for _ in range(config.iterations):
            est = dsgda_step(problem, state, config)
            it = state.iteration
            if it == 1 or it % config.history_every == 0 or it == config.iterations:
                row = HistoryRow(it - 1, est.fit, est.reg, est.loss)
                history.append(row)
                if progress:
                    progress(row)
    except KeyboardInterrupt:
        if checkpoint is not None:
            save_state(checkpoint, state, config, problem.normalizer)
        raise
    if checkpoint is not None:
        save_state(checkpoint, state, config, problem.normalizer)
    return problem, state, history


def write_history(history: Sequence[HistoryRow], path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "fit", "reg", "loss"])
        for r in history:
            w.writerow([r.iteration, repr(r.fit), repr(r.reg), repr(r.loss)])


# ---------------------------------------------------------------------------
# generation


def generate(gen: MlpNet, normalizer: Normalizer, x, k: int, mode: str = "iid",
             rng: np.random.Generator | None = None) -> np.ndarray:
    """``k`` samples of the learned conditional law at raw covariate ``x``.

    ``mode="grid"`` uses the midpoints ``(i - 0.5) / k`` instead of random
    uniforms, so the output traces the learned quantile curve.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    x = np.asarray(x, dtype=np.float64).ravel()
    xn = normalizer.covariates(x)
    if mode == "grid":
        u = (np.arange(1, k + 1) - 0.5) / k
    elif mode == "iid":
        if rng is None:
            rng = np.random.default_rng(0)
        u = open_uniform(rng, k)
    else:
        raise ValueError(f"unknown generation mode {mode!r}")
    inp = np.concatenate([np.broadcast_to(xn, (k, xn.size)), u[:, None]], axis=1)
    return normalizer.unscale_responses(forward_batch(gen, inp))


def monotone_fraction(samples) -> float:
    """Share of adjacent pairs that are not inverted."""
    s = np.asarray(samples, dtype=np.float64)
    if s.size < 2:
        return 1.0
    return float(np.mean(s[1:] >= s[:-1]))


# ---------------------------------------------------------------------------
# checkpoints


def save_state(path, state: TrainState, config: TrainConfig, normalizer: Normalizer):
    meta = {
        "arch": state.gen.arch.to_dict(),
        "config": config.to_dict(),
        "normalizer": normalizer.to_dict(),
        "iteration": state.iteration,
        "cursor": state.cursor,
        "rng": state.rng.bit_generator.state,
    }
    arrays = [("theta", state.gen.params), ("phi", state.pot.params),
              ("p", state.p), ("q", state.q), ("order", state.order.astype(np.float64))]
    diffnet.write_container(path, "train-state", arrays, meta)


@dataclass
class LoadedModel:
    state: TrainState
    config: TrainConfig
    normalizer: Normalizer


def load_state(path) -> LoadedModel:
    header, arrays = diffnet.read_container(path)
    if header["kind"] != "train-state":
        raise diffnet.CheckpointError(f"{path}: expected a train-state checkpoint")
    try:
        arch = MlpArch.from_dict(header["arch"])
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = header["rng"]
        state = TrainState(MlpNet(arch, arrays["theta"]), MlpNet(arch, arrays["phi"]),
                           arrays["p"], arrays["q"], int(header["iteration"]), rng,
                           arrays["order"].astype(np.int64), int(header["cursor"]))
        return LoadedModel(state, TrainConfig.from_dict(header["config"]),
                           Normalizer.from_dict(header["normalizer"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise diffnet.CheckpointError(f"{path}: inconsistent train-state checkpoint ({exc})") from None


# ---------------------------------------------------------------------------
# validation + sweep


def mean_w2_squared(gen: MlpNet, normalizer: Normalizer, eval_set: Dataset, k: int, seed: int = 0) -> float:
    from .metrics import w2_squared

    rng = np.random.default_rng(seed)
    vals = [w2_squared(generate(gen, normalizer, g.x, k, "iid", rng), g.responses)
            for g in eval_set.groups]
    return float(np.mean(vals))


SWEEP_FRACTION = 0.1


@dataclass
class SweepRow:
    index: int
    overrides: dict
    val_w2_squared: float


def sweep(train_set: Dataset, val_set: Dataset, config: TrainConfig, grid: Sequence[dict],
          k: int = 1000, budget_fraction: float = SWEEP_FRACTION):
    """Short-budget training per grid point; returns ``(best_config, rows)``.

    The selected point minimizes mean validation W2^2; ties keep the first.
    """
    if not grid:
        raise ConfigError({"grid": "empty grid"})
    if len(val_set) == 0:
        raise ConfigError({"validation": "sweep needs a nonempty validation split"})
    iters = max(1, int(round(budget_fraction * config.iterations))) if config.iterations else 0
    rows = []
    best, best_val = None, math.inf
    for i, overrides in enumerate(grid):
        try:
            cfg = config.replace(**overrides, iterations=iters)
        except TypeError as exc:
            raise ConfigError({"grid": str(exc)}) from None
        problem, state, _ = train(train_set, cfg)
        score = mean_w2_squared(state.gen, problem.normalizer, val_set, k, seed=cfg.seed)
        rows.append(SweepRow(i, dict(overrides), score))
        log.info("sweep point %d %s: val W2^2 = %.6g", i, overrides, score)
        if score < best_val:
            best, best_val = config.replace(**overrides), score
    return best, rows
