"""Rule learning for driving scenes with a grammar-based semantic memory.

Time steps become association matrices, a spatial grammar parses them into
trees, identical trees define events, and event strings feed a temporal PCFG
and an episodic store that predict how an episode continues.
"""

from .chart import ViterbiResult
from .errors import (
    ArtifactVersionError,
    BudgetExceededError,
    DegenerateInstanceError,
    MissingArtifactError,
    ScenarioParseError,
    SemanticMemoryError,
    UnparseableError,
    ValidationError,
)
from .events import (
    GENERATED_AT_TEST,
    SEEN_IN_TRAINING,
    EventCatalog,
    EventSequence,
    label_step,
    rle_compress,
    segment_episode,
)
from .pipeline import RunConfig, StepReport, evaluate, predict_episode, train_spatial_phase, train_temporal_phase
from .scenario import (
    ContextElement,
    Episode,
    LaneGroup,
    Observation,
    Scenario,
    TimeStep,
    build_association_matrix,
    enumerate_combinations,
    fixture_path,
    load_scenario,
)
from .spatial import (
    Parse,
    SpatialGrammar,
    init_grammar,
    inside_outside_step,
    modulated_rule_prob,
    most_probable_parse,
    train_spatial,
)
from .temporal import (
    EpisodicStore,
    Prediction,
    TemporalPCFG,
    learn_temporal_pcfg,
    predict_episodic,
    predict_pcfg,
    sequence_probability,
    store_episode,
)
from .trees import Leaf, Node, canonical_form, parse_canonical

__version__ = "0.1.0"
