"""Decision-focused learning lab.

Train a small predictor through differentiable optimization layers,
combine prediction- and decision-loss gradients with pluggable
strategies, evaluate normalized regret against exact solvers, and
inspect what the two losses do to gradient geometry, Hessian spectra,
and convergence.
"""

from .combiners import (
    STRATEGIES,
    CombineResult,
    CombinerConfig,
    GradPair,
    alpha_decay,
    combine_convex,
    combine_dcgd,
    combine_mgda,
    combine_ours,
    combine_pcgrad,
    mgda_lambda,
    select_update,
)
from .convergence import (
    RateCheckResult,
    ScheduleConfig,
    TraceRow,
    TwoObjectiveProblem,
    biquadratic_1d,
    estimate_lipschitz,
    pareto_certificate,
    rate_check,
    rotated_quadratics,
    run_schedule,
    shared_quadratic,
    telescoping_check,
    write_trace,
)
from .datagen import (
    Dataset,
    ProblemInstance,
    gen_budget,
    gen_knapsack,
    gen_portfolio,
    load_csv,
    make_rng,
    problem_for,
    split,
    write_csv,
)
from .errors import (
    ConfigurationError,
    DataFormatError,
    DegenerateInstanceError,
    DflabError,
    DivergenceError,
    IllConditionedProblemError,
    NumericError,
    SolverError,
    ValidationError,
)
from .layers import (
    BudgetProblem,
    DecisionOutput,
    DecisionPullback,
    KnapsackProblem,
    PortfolioProblem,
    budget_objective,
    budget_solve_exact,
    budget_solve_relaxed,
    decision_pullback,
    knapsack_solve_exact,
    knapsack_solve_relaxed,
    model_predictions,
    mse_pullback,
    portfolio_decision_loss,
    portfolio_jacobian,
    portfolio_solve,
    predict_values,
)
from .metrics import (
    GradGeometry,
    RegretRow,
    grad_geometry,
    regret,
    regret_of_prediction,
    sem,
    summarize_runs,
    worst_case_regret,
    write_epoch_log,
    write_summary,
)
from .mlp import (
    AdamState,
    ForwardCache,
    MlpParams,
    adam_step,
    backward,
    backward_rows,
    flatten_params,
    forward,
    forward_rows,
    init_adam,
    init_mlp,
    unflatten_params,
)
from .spectrum import (
    SpectrumEstimate,
    hessian_vector_product,
    lanczos_spectrum,
    lanczos_spectrum_matvec,
    write_spectrum,
)
from .training import (
    DiagnoseResult,
    ExperimentConfig,
    RunRecord,
    SuiteResult,
    build_dataset,
    diagnose,
    evaluate_regret,
    run_suite,
    train_one,
)

__version__ = "0.1.0"
