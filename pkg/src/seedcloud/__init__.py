"""Point-cloud autoencoding toolkit: a progressive seed-generation decoder,
folding baselines, permutation-invariant encoders, chamfer loss/metrics, a
synthetic shape corpus, and training/evaluation/ablation pipelines, all on a
small in-repo reverse-mode tensor engine.

Import layers directly for research work (`seedcloud.autodiff`,
`seedcloud.nn`, ...); the names re-exported here cover the everyday
train/evaluate/inspect loop.
"""

from .autodiff import Tensor, no_grad
from .chamfer import chamfer, chamfer_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    apply_overrides,
    format_config,
    load_config,
    parse_config,
    save_config,
)
from .data import (
    FAMILIES,
    ShapeRecord,
    SyntheticSpec,
    attach_partials,
    batch_clouds,
    load_cloud,
    load_manifest,
    make_splits,
    make_synthetic_corpus,
    sample_synthetic,
    save_cloud,
    split_records,
    write_manifest,
)
from .encoders import make_encoder
from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    NumericsError,
    SeedCloudError,
    ShapeError,
    TrainingDiverged,
    UsageError,
)
from .folding import FoldingDecoder, make_seed_source
from .optim import Adam
from .pointcloud import (
    ball_query,
    farthest_point_sample,
    normalize,
    occlude,
    resample,
)
from .psg import DecoderConfig, ProgressiveDecoder
from .training import (
    AutoEncoder,
    MetricsTable,
    RunConfig,
    TrainResult,
    build_dataset,
    count_parameters,
    default_ablation_grid,
    eval_completion,
    eval_reconstruction,
    eval_unsupervised_classification,
    evaluate_cd,
    load_run,
    ordering_holds,
    overfit_single_shape,
    run_ablation,
    run_config_from_dict,
    run_config_to_dict,
    train_autoencoder,
    train_completion,
)

__version__ = "0.1.0"
