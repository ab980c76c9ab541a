"""Runtime shielding of action distributions against temporal specifications."""

from .shield import (
    ActionDistribution,
    FeasibilityVector,
    Infeasible,
    ShieldConfig,
    evaluate_action,
    exponential_tilt,
    feasibility_vector,
    project_distribution,
)
from .stl import (
    ConjunctEvaluator,
    Formula,
    FormulaError,
    SpecMonitor,
    Trace,
    TraceTooShort,
    Verdict,
    format_formula,
    horizon,
    parse_spec,
    prefix_verdict,
    robustness,
    top_conjuncts,
)
from .surrogate import Instruction, SurrogateConfig, fm_distribution
from .synthesis import (
    DegenerateRobustness,
    FunnelParams,
    IllegalTStar,
    QTable,
    SynthesisConfig,
    SynthesisGateError,
    build_plans,
    funnel_params,
    funnel_value,
    greedy_rollout,
    load_qtable,
    policy_action,
    save_qtable,
    shaped_reward,
    synthesize_policy,
    train_policy,
)
from .runtime import (
    RunConfig,
    RunRecord,
    execute_episode,
    execute_unmodified,
    load_record,
    sample_action,
    save_record,
)
from .world import (
    ACTIONS,
    Action,
    Pose,
    Scene,
    SceneParseError,
    SceneValidationError,
    load_scene,
    parse_scene,
    signed_distance,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "ACTIONS",
    "Action",
    "ActionDistribution",
    "ConjunctEvaluator",
    "DegenerateRobustness",
    "FeasibilityVector",
    "Formula",
    "FormulaError",
    "FunnelParams",
    "IllegalTStar",
    "Infeasible",
    "Instruction",
    "Pose",
    "QTable",
    "RunConfig",
    "RunRecord",
    "Scene",
    "SceneParseError",
    "SceneValidationError",
    "ShieldConfig",
    "SpecMonitor",
    "SurrogateConfig",
    "SynthesisConfig",
    "SynthesisGateError",
    "Trace",
    "TraceTooShort",
    "Verdict",
    "build_plans",
    "evaluate_action",
    "execute_episode",
    "execute_unmodified",
    "exponential_tilt",
    "feasibility_vector",
    "fm_distribution",
    "format_formula",
    "funnel_params",
    "funnel_value",
    "greedy_rollout",
    "horizon",
    "load_qtable",
    "load_record",
    "load_scene",
    "parse_scene",
    "parse_spec",
    "policy_action",
    "prefix_verdict",
    "project_distribution",
    "robustness",
    "sample_action",
    "save_qtable",
    "save_record",
    "shaped_reward",
    "signed_distance",
    "step",
    "synthesize_policy",
    "top_conjuncts",
    "train_policy",
]
