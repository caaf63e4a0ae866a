"""Docker-free surrogate environment and training pipeline for SWE agents."""

from .contexts import (
    AnalysisCache,
    ContextConfig,
    EvalContext,
    TransitionContext,
    build_eval_context,
    build_transition_context,
    render_context_prompt,
)
from .episode import (
    Environment,
    EpisodeConfig,
    Trajectory,
    TrajectoryStep,
    evaluate_trajectory,
    run_episode,
    shaped_return,
)
from .gateway import (
    HttpBackend,
    MockBackend,
    ModelEndpoint,
    ModelGateway,
    RecordingBackend,
    ReplayBackend,
    SwrOutput,
    SwtOutput,
    parse_model_output,
)
from .grpo import GrpoConfig, RolloutGroup, clipped_surrogate, grad_check, loo_advantage, objective
from .instances import DatasetReport, Instance, dedup_instances, load_dataset, parse_instance
from .metrics import classification_metrics, harmonic_f1, resolve_rate
from .mining import MinedCandidate, MiningRules, mine_instances
from .pipeline import (
    FilterLimits,
    RewardSample,
    TransitionSample,
    balance_labels,
    extract_training_samples,
    filter_trajectory,
    format_cot_target,
    leak_check,
)
from .sandbox import (
    Action,
    ActionClass,
    StepFeedback,
    WorkspaceState,
    apply_patch,
    classify_action,
    current_patch,
    execute_sandbox_action,
    fresh_workspace,
    materialize_workspace,
)
from .tts import CandidateScore, score_trajectory, select_best

__version__ = "0.1.0"
