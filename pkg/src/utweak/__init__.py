"""Uniform-in-time weak-error toolkit for the explicit Euler scheme.

Simulate SDEs with reproducible coupled noise, mechanically audit the
sufficient conditions for uniform-in-time weak convergence (bracket
coercivity, ellipticity, cosh-gap, Lyapunov inequalities), and estimate
weak-error curves, moment suprema, occupation decay, semigroup
derivatives and ergodic averages with confidence intervals.
"""

from .dsl import (
    DomainError,
    DslError,
    ParseError,
    UnknownIdentifierError,
    VectorField,
    commutator,
    ito_drift_point,
    parse_expr,
    pretty,
    stratonovich_drift_point,
)
from .jets import Jet
from .models import (
    ExactOracle,
    ExampleSpec,
    SdeModel,
    builtin_example,
    builtin_names,
    invariant_expectation,
    resolve_model,
)
from .engine import (
    CoupledBatch,
    PathBatch,
    coupled_reference,
    euler_step,
    higher_order_flows,
    mesh_times,
    simulate_batch,
    steps_for,
)
from .conditions import (
    SINGULAR,
    ConditionReport,
    GapResult,
    RateFunction,
    apply_generator,
    commutation_check,
    cosh_ratio,
    ellipticity_check,
    gap_scan,
    hypothesis_report,
    lamperti_transform,
    loac_rate_1d,
    loac_scan,
    lyapunov_check,
    radial_confinement_check,
)
from .estimators import (
    DecayCurve,
    DerivativeCurve,
    ErgodicCurve,
    ErrorCurve,
    GammaCheckResult,
    MomentCurve,
    decay_functional,
    derivative_estimate,
    ergodic_average,
    gamma_pathwise_check,
    moment_supremum,
    weak_error_curve,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
