"""Retrieval-augmented multiple-choice QA engine for technical-standards corpora."""

from .abbrev import (
    AbbrevDict,
    AbbrevEntry,
    Detection,
    detect_abbreviations,
    extract_abbreviations,
    hit_rate,
    merge_dictionaries,
)
from .answer import ParsedAnswer, fallback_random, parse_option_label, select_by_similarity
from .backend import (
    BackendConfig,
    BackendError,
    CompletionRequest,
    HashEmbeddingBackend,
    MockCompletionBackend,
    build_backend,
    complete_batch,
    embed_batch,
    mock_script_load,
)
from .corpus import (
    Chunk,
    ChunkingConfig,
    CorpusManifest,
    Document,
    Section,
    build_corpus,
    chunk_document,
    chunk_section,
    parse_document,
)
from .evaluate import (
    EvalReport,
    PipelineArtifacts,
    PipelineConfig,
    accuracy,
    load_dataset,
    run_pipeline,
)
from .prompt import (
    McqQuestion,
    PromptText,
    build_falcon_prompt,
    build_phi2_prompt,
    render_abbrev_block,
)
from .retrieval import (
    Bm25Index,
    Context,
    DenseRetriever,
    EmbeddingMatrix,
    ScoredChunk,
    bm25_build,
    bm25_query,
    embed_chunks,
    hybrid_retrieve,
    knn_query,
    load_index,
    save_index,
)
from .shuffle import (
    Permutation,
    VoteTally,
    answer_with_shuffle,
    epoch_shuffle,
    majority_vote,
    map_back,
    sample_permutations,
)
from .trainprep import (
    MaskVector,
    PredictionTable,
    TokenSequence,
    TrainingConfig,
    TrainingRecord,
    emit_training_set,
    find_answer_boundary,
    full_cross_entropy,
    mask_vector,
    masked_cross_entropy,
)

__version__ = "0.1.0"
