"""Exact epipolar-guided keypoint matching with an angular interval tree."""

from .angular_index import (
    AngularInterval,
    EpipolarIndex,
    build_index,
    interval_for_keypoint,
    line_query_angle,
    query,
    reduce_angle,
)
from .baselines import (
    AngularHashIndex,
    GridIndex,
    brute_force_candidates,
    grid_candidates,
    hash_candidates,
)
from .errors import (
    AmbiguousDirection,
    DegenerateLine,
    DegenerateTranslation,
    DimensionMismatch,
    EpimatchError,
    EpipoleAtInfinity,
    InfeasibleCameraConfig,
    InfiniteEpipole,
    NoCandidates,
)
from .geometry import (
    CameraIntrinsics,
    Epipole,
    EpipolarLine,
    FundamentalMatrix,
    ImagePoint,
    RelativePose,
    epipolar_line,
    epipole_of,
    fundamental_from_pose,
    perturb_pose,
    point_line_distance,
)
from .harness import (
    ExperimentReport,
    candidate_recall,
    matching_recall,
    run_noise_sweep,
    run_scalability_sweep,
    run_tolerance_sweep,
)
from .matching import (
    Keypoint,
    KeypointSet,
    MatchConfig,
    MatchPair,
    MatchTiming,
    best_two_in_candidates,
    descriptor_distance,
    match_guided,
    match_unguided,
    ratio_accept,
)
from .synth import SyntheticScene, synth_scene

__version__ = "0.1.0"
