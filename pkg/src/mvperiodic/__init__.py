"""Particle methods for periodic and stationary measures of McKean-Vlasov SDEs."""

__version__ = "0.1.0"

from .measures import EmpiricalMeasure, GaussianLaw, dirac, pool, moment, moment_norm, transport, wasserstein
from .dynamics import ModelSpec, ConditionConstants, PeriodicFunction, FieldMap
from .particle_sim import SimConfig, SimReport, BlowupError, simulate, propagate, step
from .periodic_finder import picard_iterate, find_stationary, cesaro_average, verify_periodic, noise_floor
from .lyapunov import LyapunovSpec, SamplePlan, builtin_lyapunov, generator_apply, check_condition, fit_constants
