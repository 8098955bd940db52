"""Task-and-motion planning with demonstration-learned decomposition.

The library turns solved demonstrations into reusable task structure:
scene-graph sequences are mined for a common subgoal chain, a small
graph network learns which objects matter for each transition, and new
instances are decomposed into independent subproblems that are solved
concurrently and concatenated at the motion level.
"""

from .scene import Atom, Demonstration, Pose, Subgraph, WorldState, atom
from .pddl import Domain, GroundAction, ProblemSpec, parse_domain, parse_problem
from .geometry import Footprint, Region, WorldModel, collides, merge_into_base, sample_placement, stack_pose
from .tasks import TASK_NAMES, TaskSpec, gen_instance, make_task
from .solver import Plan, SolveError, SolverConfig, generate_demos, register_domain, solve, validate
from .dmp import DmpModel, Trajectory, min_jerk, modulate_via, rollout, train_dmp
from .mining import SubgoalArtifact, SubgoalSequence, build_database, prefixspan, select_target_sequence
from .importance import FeatureSpec, GnnModel, label_important, oracle_predict, predict, segment_demos, train
from .decompose import Subproblem, chain_states, generate_subproblems
from .pipeline import (
    GlobalPlan,
    PipelineConfig,
    PipelineResult,
    concatenate,
    parallel_tamp,
    run_pipeline,
    sequential_tamp,
    validate_global,
)
from .bench import BenchTable, TrialResult, prepare_artifacts, run_bench, run_trial

__version__ = "0.1.0"
