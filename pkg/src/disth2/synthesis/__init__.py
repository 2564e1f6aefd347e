"""Controller synthesis: existence conditions, construction and baselines."""

from .central import CentralController, CentralResult, synthesize_central
from .drivers import SynthesisResult, synthesize_decentralized, synthesize_distributed
from .existence import (
    SynthesisCertificate,
    build_analysis_problem,
    build_existence_problem,
    node_lmi_dimensions,
)
from .reconstruct import extend_multipliers, reconstruct_XK, recover_rho, solve_theta_qmi

__all__ = [
    "CentralController",
    "CentralResult",
    "SynthesisCertificate",
    "SynthesisResult",
    "build_analysis_problem",
    "build_existence_problem",
    "extend_multipliers",
    "node_lmi_dimensions",
    "reconstruct_XK",
    "recover_rho",
    "solve_theta_qmi",
    "synthesize_central",
    "synthesize_decentralized",
    "synthesize_distributed",
]
