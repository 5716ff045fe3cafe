"""Pipeline harness and evaluation engine for grounded/segmented
multimodal named entity recognition."""

from .corpus import (
    BBox,
    DatasetSplit,
    EntityType,
    GoldEntity,
    RleMask,
    Sample,
    dataset_stats,
    load_dataset,
    rasterize_box,
    rle_decode,
    rle_encode,
    save_dataset,
    validate_sample,
)
from .errors import BackendError, DataError, ProtocolError, RivegError
from .metrics import AgreementTable, box_iou, dice_coefficient, fleiss_kappa, mask_iou
from .pipeline import (
    Backend,
    BackendConfig,
    HttpBackend,
    MockBackend,
    MockLookup,
    PipelineResult,
    PredictionRecord,
    PredictionTriple,
    VeVerdict,
    make_backend,
    mock_respond,
    run_pipeline,
)
from .prompts import (
    AnnotatedExample,
    ReferringExpression,
    build_expansion_prompt,
    build_knowledge_prompt,
    compose_referring_expression,
    merge_augmented,
)
from .retrieval import ExampleIndex, FeatureVector, build_index, topn_similar
from .scoring import (
    MatchPolicy,
    ScoreReport,
    emit_report,
    iou_sweep,
    score_task,
    topn_prec_at,
    triple_correct,
)
from .seqlab import (
    SCHEME,
    CrfParams,
    EntitySpan,
    LabelScheme,
    bio_from_spans,
    crf_nll_and_grad,
    log_partition,
    spans_from_bio,
    validate_bio,
    viterbi_decode,
)

__version__ = "0.1.0"
