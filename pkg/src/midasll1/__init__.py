"""Regularized rank-(Lr,Lr,1) block-term tensor decomposition.

Library entry points: DenseTensor3 / unfold / fold (tensor), LL1Factors /
objective / full_gradient (model), SGD/SAGA/SARAH estimators, the inertial
doubly stochastic solver with deterministic baselines, quality metrics, and
binary tensor file I/O.
"""

from .metrics import MetricReport, report
from .model import LL1Factors, ObjectiveValue, RankVector, full_gradient, objective, reconstruct
from .prox import Regularizer, RegularizerSpec, prox
from .solver import (
    RunTrace,
    SolverAbort,
    SolverConfig,
    als_mu_baseline,
    feasibility_check,
    palm_baseline,
    run,
)
from .synth import generate
from .tensor import DenseTensor3, FiberBatch, UnfoldedMatrix, fold, gather_fiber_rows, khatri_rao, unfold

__all__ = [
    "DenseTensor3", "UnfoldedMatrix", "FiberBatch", "unfold", "fold",
    "gather_fiber_rows", "khatri_rao",
    "RankVector", "LL1Factors", "ObjectiveValue", "reconstruct", "objective",
    "full_gradient",
    "Regularizer", "RegularizerSpec", "prox",
    "SolverConfig", "RunTrace", "SolverAbort", "run", "palm_baseline",
    "als_mu_baseline", "feasibility_check",
    "MetricReport", "report", "generate",
]

__version__ = "0.1.0"
