"""Faithfulness metrics for natural-language explanations.

Quantifies how well a generated explanation reflects the reasoning of the
task model it accompanies: integrated-gradients attributions for answer and
explanation are compared via cosine similarity, and explanation-relevant
features are perturbed to measure their sufficiency and comprehensiveness
for the prediction.
"""

from .core import (
    AttributionPair,
    AttributionVector,
    MetricRow,
    Modality,
    PredictionDistribution,
    TaskExample,
    Token,
    cosine,
    softmax_normalize,
)
from .attribution import (
    IGConfig,
    ModalAttribution,
    attribute_answer,
    attribute_explanation,
    default_baseline,
    integrated_gradients,
)
from .alignment import (
    BPE,
    CHAR_OFFSETS,
    WORDPIECE,
    TokenScheme,
    WordMap,
    aggregate_to_words,
    map_tokens_to_words,
    segment_words,
)
from .faithfulness import (
    DEFAULT_BINS,
    FeatureBin,
    SFScore,
    attribution_similarity,
    nle_comprehensiveness,
    nle_sufficiency,
    perturb_keep_only,
    perturb_remove,
    select_top_k,
)
from .analysis import (
    CorrelationMatrix,
    Histogram,
    build_report,
    histogram,
    input_group_influence,
    modality_influence,
    pearson_matrix,
)
from .oracle import (
    AnswerTarget,
    ExplanationTarget,
    GradientRecord,
    InputCodec,
    ModelInputs,
    OracleInfo,
    OracleSession,
    load_attributions,
    load_examples,
    read_metrics,
    write_attributions,
    write_examples,
    write_metrics,
)
from .toymodel import (
    ABLATION_PRESETS,
    ExplainerInputs,
    ToyDims,
    ToyVLModel,
    forward_classifier,
    load_model,
    make_toy_model,
    save_model,
)
from .errors import (
    AlignmentError,
    EmptyExplanation,
    FaithevalError,
    IngestError,
    InvalidInput,
    OracleError,
    OracleTimeout,
    ProtocolError,
)

__version__ = "0.1.0"
