"""Dynamic hypergraph neural networks for epidemic source detection and forecasting."""

from .episim import (
    ConfigError,
    ContactConfig,
    MobilityConfig,
    Population,
    generate_population,
    simulate_mobility,
    stranger_contact_mask,
)
from .hypergraph import (
    INFECTED,
    RECOVERED,
    SUSCEPTIBLE,
    DegreeOperators,
    DynamicHypergraph,
    StateSequence,
    TimeSplit,
    build_incidence,
    degree_operators,
    mask_states,
)
from .io import load_dataset, save_dataset
from .metrics import MetricReport, auroc, f1, hit_at_k, mrr, population_curve, quantile_contact_report
from .model import (
    ModelConfig,
    Window,
    backward,
    contact_score,
    decode_detection,
    decode_forecast,
    forward,
    hgnn_layer,
    init_params,
    load_checkpoint,
    save_checkpoint,
    temporal_conv,
    temporal_stack,
)
from .presets import Scenario, episim_like, generate_episode, generate_episodes
from .sir import PathogenParams, expected_infection_prob, run_sir, seed_infection, step_sir
from .training import (
    AdamState,
    Episode,
    TrainConfig,
    adam_step,
    combined_loss,
    detection_loss,
    forecast_loss,
    grid_search,
    pattern_loss,
    sample_pattern_batch,
    train,
)

__version__ = "0.1.0"
