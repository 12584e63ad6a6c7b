"""Solvers that approximate the c-transform by an inner minimization:
over the batch itself, or with a learned mover network."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from .. import nn
from .base import (
    MoverGradient,
    PotentialGradient,
    ResidualMover,
    SolverOutput,
    Trainer,
    make_adam,
    make_potential,
    two_term_w1,
)


def batch_c_transform(fX, X, Y):
    """``min_i ||x_i - y_j|| - f(x_i)`` for every ``y_j`` and the minimizing index."""
    M = cdist(X, Y) - np.asarray(fX)[:, None]
    idx = np.argmin(M, axis=0)
    return M[idx, np.arange(M.shape[1])], idx


def fit_mmb(sampler, cfg, rng) -> SolverOutput:
    cfg = cfg.resolved(sampler.dim)
    net = make_potential(sampler.dim, cfg, rng)
    opt = make_adam(net, cfg)
    trainer = Trainer([net])
    for it in range(cfg.iterations):
        X, Y = sampler.sample(cfg.batch_size, rng)
        n = len(X)
        fX, cache = net.forward(X, cache=True)
        fc, idx = batch_c_transform(fX[:, 0], X, Y)
        # d/df_i of mean f + mean f^c: 1/n minus the share of y's whose argmin is i
        dual = fX[:, 0].mean() + fc.mean()
        df = 1.0 / n - np.bincount(idx, minlength=n) / len(Y)
        _, grads = net.backward(cache, -df[:, None])
        opt.step(net.params(), grads)
        trainer.record(it, -dual)
    trainer.check_params(cfg.iterations)
    w1 = two_term_w1(net, sampler, cfg.eval_batch, rng)
    return SolverOutput(cfg.kind, PotentialGradient(net), w1, {"f": net}, net, trainer.log, trainer.elapsed)


def _unit_rows(D):
    norm = np.linalg.norm(D, axis=1, keepdims=True)
    return np.divide(D, norm, out=np.zeros_like(D), where=norm > 0), norm[:, 0]


def mover_step(mover, pot, Z, opt):
    """One descent step of ``mean ||T(z) - z|| - pot(T(z))`` over the mover; returns the value."""
    out, cache = mover.net.forward(Z, cache=True)
    TZ = Z + out
    unit, dist = _unit_rows(TZ - Z)
    value = float(dist.mean() - pot(TZ).mean())
    dT = (unit - nn.grad_input(pot, TZ)) / len(Z)
    _, grads = mover.net.backward(cache, dT)
    opt.step(mover.net.params(), grads)
    return value


def _saddle(sampler, cfg, rng, mover_side):
    """Alternate ``inner_steps`` mover descents with one potential ascent.

    ``mover_side`` is 1 when the mover acts on the second marginal (the mover
    is the c-transform of the learned potential) and 0 when it acts on the first.
    """
    cfg = cfg.resolved(sampler.dim)
    pot = make_potential(sampler.dim, cfg, rng)
    mover = ResidualMover(sampler.dim, cfg.hidden, rng)
    opt_p, opt_m = make_adam(pot, cfg), make_adam(mover.net, cfg)
    trainer = Trainer([pot, mover.net])
    inner = 0.0
    for it in range(cfg.iterations):
        for _ in range(cfg.inner_steps):
            Z = sampler.sample(cfg.batch_size, rng)[mover_side]
            inner = mover_step(mover, pot, Z, opt_m)
        batches = sampler.sample(cfg.batch_size, rng)
        keep, Z = batches[1 - mover_side], batches[mover_side]
        TZ = mover(Z)
        n, m = len(keep), len(TZ)
        out, cache = pot.forward(np.vstack([keep, TZ]), cache=True)
        # ascend mean pot(keep) - mean pot(T(Z))
        dout = np.concatenate([np.full(n, -1.0 / n), np.full(m, 1.0 / m)])[:, None]
        _, grads = pot.backward(cache, dout)
        opt_p.step(pot.params(), grads)
        two_term = out[:n, 0].mean() - out[n:, 0].mean()
        saddle = out[:n, 0].mean() + np.linalg.norm(TZ - Z, axis=1).mean() - out[n:, 0].mean()
        trainer.record(it, -two_term, saddle=saddle, inner=inner)
    trainer.check_params(cfg.iterations)
    return cfg, pot, mover, trainer


def fit_mm(sampler, cfg, rng) -> SolverOutput:
    cfg, f, mover, trainer = _saddle(sampler, cfg, rng, mover_side=1)
    X, Y = sampler.sample(cfg.eval_batch, rng)
    w1 = float(f(X).mean() - f(Y).mean())
    saddle = float(f(X).mean() + np.mean(np.linalg.norm(mover(Y) - Y, axis=1) - f(mover(Y))))
    return SolverOutput(
        cfg.kind, PotentialGradient(f), w1, {"f": f, "H": mover.net}, f, trainer.log,
        trainer.elapsed, extras={"saddle_value": saddle},
    )


def fit_mmr(sampler, cfg, rng) -> SolverOutput:
    cfg, g, mover, trainer = _saddle(sampler, cfg, rng, mover_side=0)
    w1 = -two_term_w1(g, sampler, cfg.eval_batch, rng)
    return SolverOutput(
        cfg.kind, MoverGradient(mover), w1, {"g": g, "T": mover.net},
        lambda X: -g(X), trainer.log, trainer.elapsed,
    )
