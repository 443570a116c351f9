"""detangle: predict, suppress, and measure attribute entanglement in
text-driven latent-space image editing.

The toolkit is backend-pluggable end to end: a deterministic synthetic
embedding space and a toy linear generator make every stage runnable and
testable at desk scale, while real encoder/generator stacks bind through
the same interfaces.
"""

__version__ = "0.1.0"

from .cache import EmbeddingCache, build_cache
from .corpus import EmbeddedCorpus, SyntheticWorldSpec, generate_synthetic_corpus
from .embedding import (
    EmbeddingBackend,
    EmbeddingVector,
    LinearSyntheticBackend,
    clip_distance,
)
from .evaluation import (
    AttributeRange,
    EvaluationReport,
    attribute_range,
    delta_command,
    delta_entangled,
    evaluate_run,
    indicator,
    normalize_delta,
)
from .generator import GeneratorBackend, ToyLinearGenerator
from .hierarchy import (
    Attribute,
    AttributeHierarchy,
    Category,
    HierarchyError,
    labels_for_command,
    load_hierarchy,
    save_hierarchy,
)
from .losses import LossConfig, clip_loss, entanglement_loss, id_loss, l2_loss
from .mapper import (
    TrainingTrace,
    load_checkpoint,
    manipulate,
    save_checkpoint,
    train_mapper,
)
from .predictor import (
    EntanglementPrediction,
    PredictorConfig,
    aggregate_relevant,
    predict_entangled,
    predict_multi,
    rank_images,
    score_attributes,
)

__all__ = [
    "__version__",
    "Attribute",
    "AttributeHierarchy",
    "AttributeRange",
    "Category",
    "EmbeddedCorpus",
    "EmbeddingBackend",
    "EmbeddingCache",
    "EmbeddingVector",
    "EntanglementPrediction",
    "EvaluationReport",
    "GeneratorBackend",
    "HierarchyError",
    "LinearSyntheticBackend",
    "LossConfig",
    "PredictorConfig",
    "SyntheticWorldSpec",
    "ToyLinearGenerator",
    "TrainingTrace",
    "aggregate_relevant",
    "attribute_range",
    "build_cache",
    "clip_distance",
    "clip_loss",
    "delta_command",
    "delta_entangled",
    "entanglement_loss",
    "evaluate_run",
    "generate_synthetic_corpus",
    "id_loss",
    "indicator",
    "l2_loss",
    "labels_for_command",
    "load_checkpoint",
    "load_hierarchy",
    "manipulate",
    "normalize_delta",
    "predict_entangled",
    "predict_multi",
    "rank_images",
    "save_checkpoint",
    "save_hierarchy",
    "score_attributes",
    "train_mapper",
]
