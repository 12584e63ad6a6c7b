"""Dual W1 solvers behind one interface: ``fit(sampler, cfg, rng) -> SolverOutput``."""

from .base import (
    KINDS,
    EvalReport,
    MoverGradient,
    NearestBatchGradient,
    PotentialGradient,
    ResidualMover,
    SolverConfig,
    SolverOutput,
    TruthGradient,
    canonical_kind,
    evaluate,
    oracle_output,
    output_from_dict,
    output_to_dict,
    two_term_w1,
)
from .discrete import assignment, fit_dot
from .dual import fit_gp, fit_lp, fit_sn, fit_so, fit_wc
from .maximin import batch_c_transform, fit_mm, fit_mmb, fit_mmr
from .regularized import fit_ls, ls_objective

FITTERS = {
    "wc": fit_wc,
    "gp": fit_gp,
    "lp": fit_lp,
    "sn": fit_sn,
    "so": fit_so,
    "ls": fit_ls,
    "mmb": fit_mmb,
    "mm": fit_mm,
    "mmr": fit_mmr,
    "dot": fit_dot,
}

DISPLAY_NAMES = {
    "wc": "WC", "gp": "GP", "lp": "LP", "sn": "SN", "so": "SO", "ls": "LS",
    "mmb": "MM:B", "mm": "MM", "mmr": "MM:R", "dot": "DOT", "truth": "truth",
}


def fit(sampler, cfg: SolverConfig, rng) -> SolverOutput:
    return FITTERS[cfg.kind](sampler, cfg, rng)


__all__ = [
    "KINDS", "FITTERS", "DISPLAY_NAMES", "EvalReport", "MoverGradient", "NearestBatchGradient",
    "PotentialGradient", "ResidualMover", "SolverConfig", "SolverOutput", "TruthGradient",
    "assignment", "batch_c_transform", "canonical_kind", "evaluate", "fit", "fit_dot", "fit_gp",
    "fit_lp", "fit_ls", "fit_mm", "fit_mmb", "fit_mmr", "fit_sn", "fit_so", "fit_wc",
    "ls_objective", "oracle_output", "output_from_dict", "output_to_dict", "two_term_w1",
]
