"""gnnco: joint search over GNN structures and matched accelerators."""

from .accel import (
    AccelConfig,
    AccelSpace,
    Platform,
    SubAccConfig,
    TileSizes,
    WorkloadPlan,
    allocate,
    random_config,
    space_cardinality,
    tile_sizes_for,
    validate,
)
from .graph import (
    DatasetSplit,
    Graph,
    RowProfile,
    SparseMatrix,
    build_normalized_adjacency,
    load_json_graph,
    load_planetoid,
    make_splits,
    sparsity_profile,
)
from .oracle import oracle_simulate, oracle_tile_cycles
from .search import (
    Candidate,
    CandidateSpaces,
    CoSearchFitness,
    SearchParams,
    evolve,
    fitness,
    mutate,
    pareto_report,
)
from .simulator import (
    SimReport,
    TileNnzStats,
    buffer_requirement,
    simulate,
    tile_compute_cycles,
    tile_offchip_traffic,
)
from .workload import (
    LayerWorkload,
    MatmulOp,
    analyze_sparsity,
    parse_subnet,
    total_mac_work,
)

__version__ = "0.1.0"
