"""Jump-started reinforcement learning for a planar monoped hopper.

The package is organized bottom-up: procedural terrains (`terrain`), the
batched physics simulator and observation stack (`hopper`), the shaped reward
(`rewards`), numpy policy networks with manual gradients (`nets`), the PPO
update (`ppo`), guided patch collection and the stage/curriculum drivers
(`jumpstart`), difficulty tracking and evaluation metrics (`curriculum`),
and the TOML-driven run harness (`config`, `cli`).
"""

from .config import ConfigError, RunConfig, build_stage_config, load_config
from .curriculum import (EvalTask, LevelTracker, MetricsReport, evaluate,
                         render_eval_csv)
from .hopper import (HopperModel, HopperState, ObsMode, ObsSpec, StepInfo,
                     TermReason, VecHopper)
from .jumpstart import (GuidePolicy, JumpSchedule, StageConfig, StageReport,
                        TerrainSampler, adapt_obs, collect_patches,
                        mix_select, mixed_action, run_curriculum, run_stage,
                        schedule_n, stage1_config, stage2_config,
                        stage3_config)
from .nets import (PolicyParams, checkpoint_checksum, forward_actor,
                   forward_critic, init_policy, load_checkpoint,
                   save_checkpoint)
from .ppo import PatchBuffer, PPOConfig, clipped_objective, gae, update
from .rewards import (ObjectiveMode, RewardBreakdown, RewardWeights,
                      compute_reward)
from .terrain import Heightfield, TerrainKind, generate, height_at

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "RunConfig", "build_stage_config", "load_config",
    "EvalTask", "LevelTracker", "MetricsReport", "evaluate",
    "render_eval_csv",
    "HopperModel", "HopperState", "ObsMode", "ObsSpec", "StepInfo",
    "TermReason", "VecHopper",
    "GuidePolicy", "JumpSchedule", "StageConfig", "StageReport",
    "TerrainSampler", "adapt_obs", "collect_patches", "mix_select",
    "mixed_action", "run_curriculum", "run_stage", "schedule_n",
    "stage1_config", "stage2_config", "stage3_config",
    "PolicyParams", "checkpoint_checksum", "forward_actor", "forward_critic",
    "init_policy", "load_checkpoint", "save_checkpoint",
    "PatchBuffer", "PPOConfig", "clipped_objective", "gae", "update",
    "ObjectiveMode", "RewardBreakdown", "RewardWeights", "compute_reward",
    "Heightfield", "TerrainKind", "generate", "height_at",
    "__version__",
]
