"""Distributed and decentralized H2 control of networks of discrete-time systems."""

from .analysis import (
    AnalysisCertificate,
    MultiplierSet,
    analysis_residuals,
    h2_norm_freqgrid,
    h2_norm_lyapunov,
    is_stable,
    verify_closed_loop,
)
from .netmodel import (
    ControllerRealization,
    NetworkModel,
    SubsystemRealization,
    Topology,
    assemble_interconnected,
    well_posed,
)
from .synthesis import synthesize_central, synthesize_decentralized, synthesize_distributed

__version__ = "0.1.0"

__all__ = [
    "AnalysisCertificate",
    "ControllerRealization",
    "MultiplierSet",
    "NetworkModel",
    "SubsystemRealization",
    "Topology",
    "analysis_residuals",
    "assemble_interconnected",
    "h2_norm_freqgrid",
    "h2_norm_lyapunov",
    "is_stable",
    "synthesize_central",
    "synthesize_decentralized",
    "synthesize_distributed",
    "verify_closed_loop",
    "well_posed",
]
