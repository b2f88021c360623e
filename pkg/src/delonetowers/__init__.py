"""Hierarchical box-decomposition towers over repetitive point sets,
with the induced non-stationary Markov chain and patch-frequency
deviation experiments."""

from .delone import (
    DeloneWindow,
    GeneratorSpec,
    Patch,
    PatternClassId,
    RepetitivityProfile,
    classify,
    generate,
    load_points_csv,
    occurrences,
    patch_at,
    repetitivity_profile,
    save_points_csv,
)
from .deviation import (
    CubeDecomposition,
    DeviationRecord,
    FrequencyEstimate,
    compute_n0,
    cube_decomposition,
    deviation_identity_check,
    deviation_sweep,
    estimate_frequency,
    patch_count,
)
from .geometry import (
    Box,
    ConvexCell,
    RadiiReport,
    radii,
    star_membership,
    star_partition_assign,
    voronoi_cells,
)
from .markov import (
    MixingReport,
    StochasticMatrix,
    TransverseMeasureEstimate,
    chain_product,
    mixing_analysis,
    q_matrix,
    transverse_measures,
)
from .towers import (
    MatrixReport,
    TowerLevel,
    TowerParams,
    TowerSystem,
    TransitionMatrix,
    ZoomReport,
    base_decomposition,
    build_tower,
    load_tower_json,
    matrix_diagnostics,
    required_K,
    save_tower_json,
    theorem_constants,
    verify_tower,
    verify_zoom,
    zoom_level,
)

__version__ = "0.1.0"
