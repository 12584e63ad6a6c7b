"""Single-potential dual ascent: weight clipping, gradient/Lipschitz penalties,
spectral normalization and orthonormal FullSort nets."""

from __future__ import annotations

import numpy as np

from .. import nn
from ..errors import ConfigError
from .base import (
    PotentialGradient,
    SolverOutput,
    Trainer,
    add_grads,
    make_adam,
    make_potential,
    scale_grads,
    two_term_w1,
)


def dual_step_grads(net, X, Y):
    """Loss ``-(mean f(X) - mean f(Y))`` and its parameter gradient, one pass."""
    n, m = len(X), len(Y)
    out, cache = net.forward(np.vstack([X, Y]), cache=True)
    dout = np.concatenate([np.full(n, -1.0 / n), np.full(m, 1.0 / m)])[:, None]
    _, grads = net.backward(cache, dout)
    loss = -(out[:n, 0].mean() - out[n:, 0].mean())
    return float(loss), grads


def interpolate(X, Y, rng):
    t = rng.uniform(size=(len(X), 1))
    return t * X + (1.0 - t) * Y


def _ascend(sampler, cfg, rng, net, project=None, penalty=None):
    opt = make_adam(net, cfg)
    trainer = Trainer([net])
    if project is not None:
        project(net)
    for it in range(cfg.iterations):
        X, Y = sampler.sample(cfg.batch_size, rng)
        loss, grads = dual_step_grads(net, X, Y)
        extra = {}
        if penalty is not None:
            _, Y2 = sampler.sample(cfg.batch_size, rng)
            val, pgrads, _ = nn.penalty_grad(net, interpolate(X, Y2, rng), penalty)
            grads = add_grads(grads, scale_grads(pgrads, cfg.lam))
            extra["penalty"] = val
            loss += cfg.lam * val
        opt.step(net.params(), grads)
        if project is not None:
            project(net)
        trainer.record(it, loss, **extra)
    trainer.check_params(cfg.iterations)
    w1 = two_term_w1(net, sampler, cfg.eval_batch, rng)
    return SolverOutput(
        cfg.kind, PotentialGradient(net), w1, {"f": net}, net, trainer.log, trainer.elapsed,
    )


def fit_wc(sampler, cfg, rng) -> SolverOutput:
    cfg = cfg.resolved(sampler.dim)
    net = make_potential(sampler.dim, cfg, rng)
    return _ascend(sampler, cfg, rng, net, project=lambda n: nn.clip_weights(n, cfg.c))


def _penalized(sampler, cfg, rng, mode):
    cfg = cfg.resolved(sampler.dim)
    if cfg.lam < 0:
        raise ConfigError("lam must be non-negative")
    net = make_potential(sampler.dim, cfg, rng)
    return _ascend(sampler, cfg, rng, net, penalty=mode if cfg.lam > 0 else None)


def fit_gp(sampler, cfg, rng) -> SolverOutput:
    return _penalized(sampler, cfg, rng, "gp")


def fit_lp(sampler, cfg, rng) -> SolverOutput:
    return _penalized(sampler, cfg, rng, "lp")


def fit_sn(sampler, cfg, rng) -> SolverOutput:
    cfg = cfg.resolved(sampler.dim)
    net = make_potential(sampler.dim, cfg, rng, constraint="spectral")
    return _ascend(sampler, cfg, rng, net, project=nn.spectral_normalize)


def fit_so(sampler, cfg, rng) -> SolverOutput:
    cfg = cfg.resolved(sampler.dim)
    net = make_potential(sampler.dim, cfg, rng, activation="fullsort", constraint="orthonormal")
    return _ascend(sampler, cfg, rng, net, project=nn.orthonormalize)
