"""koopkit: data-driven Koopman operator models.

Fit lifted linear predictors (DMD, EDMD, generator EDMD, Hankel-DMD) from
trajectory data, extract Koopman eigenvalues, eigenfunctions and modes,
certify stability with Lyapunov functions built from eigenfunctions, and
run model predictive control on bilinear lifted models.
"""

import logging

from . import analysis, control, embed, io, koopfit, linalg, systems
from .analysis import classify_stability, find_conserved, synthesize_lyapunov
from .control import BilinearLiftedModel, MpcProblem, lift_control_fields, run_mpc, simulate_bilinear
from .embed import (
    PolynomialDictionary,
    custom_dictionary,
    identity_dictionary,
    monomial_dictionary,
    polynomial_dictionary,
)
from .estimators import DMD, EDMD, GeneratorEDMD, HankelDMD
from .exceptions import *  # noqa: F401,F403
from .koopfit import (
    KoopmanModel,
    SpectralModel,
    extract_spectrum,
    fit_conjugacy,
    fit_dmd,
    fit_edmd,
    fit_generator_edmd,
    hankel_dmd,
    predict,
)
from .systems import Trajectory, example1_map, example4_system, cubic_decay, integrate_rk4, simulate_map

logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = "0.1.0"
