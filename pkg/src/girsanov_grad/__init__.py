"""Monte Carlo solvers and checks for entropy-regularised first-exit control.

The control ``u^a = sum_k a_k b_k`` shifts the drift of
``dX = (u + g) dt + f dB``; the objective is
``Phi(a) = E^a[phi_tau + lam/2 <M^{u^a}, M^{u^a}>_tau]`` with ``tau`` the
first exit time from a box.

Submodules: ``model``, ``simulate``, ``estimate``, ``optimize``, ``verify``
and ``cli``.  The batch simulator is ``girsanov_grad.simulate.simulate``.
"""
from . import cli, config, estimate, model, optimize, simulate, verify
from .errors import (
    DegenerateControlError,
    DegenerateEstimateError,
    EstimatorUnusableError,
    GirsanovGradError,
    IndefiniteHessianError,
    InvalidInputError,
    SimulationDivergedError,
)
from .model import (
    BasisFunction,
    Box,
    ConstantDiffusion,
    Cost,
    PolynomialDrift,
    ProblemSpec,
    admissible_radius,
    brownian_exit,
    builtin,
    double_well,
    evaluate_control,
    fixed_horizon,
    integrability_exponent,
    pseudo_apply,
)
from .rng import RngStream
from .simulate import (
    RecordBatch,
    TrajectoryRecord,
    bridge_exit_probability,
    exponential_martingale,
    simulate_path,
)
from .estimate import (
    DerivativeEstimate,
    KlEstimate,
    McEstimate,
    control_variate_beta,
    cv_efficiency_gate,
    estimate_free_energy,
    estimate_gradient,
    estimate_hessian,
    estimate_kl,
    estimate_nth_derivative,
    estimate_phi,
    optimal_cv_coefficients,
    reweighted_expectation,
    reweighted_objective,
)
from .optimize import (
    OptTrace,
    Termination,
    check_convexity,
    gradient_descent,
    newton,
    newton_step,
)
from .verify import (
    ExitLaw,
    bound_checks,
    exit_law_oracle,
    finite_difference_check,
    pathwise_identity_check,
    q_polynomial,
    reproduce_nonconvexity,
)
from .config import load_problem, problem_from_dict

__version__ = "0.1.0"
