"""Speaker demographic attribute prediction from pooled speech embeddings."""

from .corpus import (
    ATTRIBUTES,
    CATEGORICAL_ATTRIBUTES,
    AvailabilityMatrix,
    DatasetManifest,
    LabelSpace,
    ManifestError,
    SegmentRecord,
    availability_matrix,
    harmonize_labels,
    parse_manifest,
    split_train_val,
    summarize,
    write_manifest,
)
from .adapters import adapt_corpus
from .embedstore import (
    EmbeddingStore,
    EmbeddingVector,
    FeatureSequence,
    SynthConfig,
    import_external,
    pool_mean,
    synth_generate,
    write_store,
)
from .heads import (
    TaskSpec,
    build_bilstm,
    build_head,
    build_mlp,
    build_resnet32,
    forward,
    gradient,
    param_count,
)
from .metrics import (
    EvalResult,
    PredictionSet,
    accuracy,
    confusion,
    macro_f1,
    mae,
    render_report,
)
from .trainer import (
    Checkpoint,
    TrainConfig,
    TrainLog,
    load_checkpoint,
    loss_classification,
    loss_regression,
    predict_records,
    save_checkpoint,
    train,
)
from .runner import ExperimentPlan, PlanEntry, StoreUnion, build_plan, execute_plan

__version__ = "0.1.0"
