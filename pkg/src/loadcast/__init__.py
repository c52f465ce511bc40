"""Mid-term electricity demand forecasting engine.

Stacked residual-block network with per-block destandardization, trained in
cross-learning mode over many monthly series with a pinball-percentage +
variance-normalized squared-error loss, plus bootstrap ensembling and a full
evaluation stack. See the CLI (``loadcast --help``) for the batch surface.
"""

from .baselines import seasonal_naive
from .data import (
    DatasetError,
    RegionSplit,
    SplitSpec,
    StratifiedSampler,
    TimeSeries,
    Window,
    evaluation_windows,
    load_dataset,
    make_windows,
    split,
    synthetic_dataset,
    training_windows,
)
from .ensemble import EnsembleSpec, aggregate_forecasts, draw_ensemble, run_trials
from .evaluation import (
    DMResult,
    MetricsReport,
    aggregate_metrics,
    diebold_mariano,
    dm_decision,
    point_errors,
)
from .loss import LossConfig, combined_loss, loss_gradients, nmse, pmape
from .model import (
    BlockOutput,
    ModelConfig,
    block_forward,
    config_hash,
    decompose,
    forecast_series,
    forward_graph,
    init_params,
    model_forward,
    normalize_input,
)
from .nn import AdamState, DenseLayer, GradientTape, adam_step, backward, grad_check
from .train import Pool, TrainSchedule, TrainedMember, build_pool, load_pool, train_one

__version__ = "0.1.0"
