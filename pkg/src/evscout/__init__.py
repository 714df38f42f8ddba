"""Evidence scout: retrieve, grade, and review diagnosis evidence in clinical notes."""

from .auto_eval import EvalConfig, EvalVerdict, Factor, LabelMapping, evaluate_bundle, map_expert_label
from .baseline import BaselineConfig, RiskFactorProfile, build_profile, fetch_risk_factors, retrieve_topk
from .corpus import (
    Corpus,
    RunStore,
    SampledInstance,
    SamplingCriteria,
    extract_diagnoses,
    import_expert_annotations,
    load_corpus,
    sample_instances,
)
from .embedding import HashedEmbedder, WireEmbedder, cosine, embed, match_highlights
from .llm import (
    BinaryAnswer,
    Completion,
    CompletionRequest,
    ScriptedBackend,
    WireBackend,
    parse_binary,
    sequence_confidence,
)
from .metrics import (
    BinarySeries,
    EvalSummary,
    auc,
    average_pairwise_kappa,
    cohen_kappa,
    micro_f1,
    pcc,
    recall_notes,
)
from .model import (
    DiagnosisQuery,
    EvidenceItem,
    EvidenceSource,
    EvidenceStatus,
    Highlight,
    Note,
    NoteCategory,
    QueryKind,
    Relevance,
    RelevanceLabel,
    RunRecord,
    Sentence,
    validate_corpus,
)
from .pipeline import (
    Backends,
    EvidenceBundle,
    PipelineConfig,
    PromptStyle,
    replay_run,
    run_patient,
    run_single_prompt,
)
from .text_prep import Chunk, ChunkingConfig, chunk_note, count_tokens, split_sentences

__version__ = "0.1.0"

__all__ = [
    "Backends",
    "BaselineConfig",
    "BinaryAnswer",
    "BinarySeries",
    "Chunk",
    "ChunkingConfig",
    "Completion",
    "CompletionRequest",
    "Corpus",
    "DiagnosisQuery",
    "EvalConfig",
    "EvalSummary",
    "EvalVerdict",
    "EvidenceBundle",
    "EvidenceItem",
    "EvidenceSource",
    "EvidenceStatus",
    "Factor",
    "HashedEmbedder",
    "Highlight",
    "LabelMapping",
    "Note",
    "NoteCategory",
    "PipelineConfig",
    "PromptStyle",
    "QueryKind",
    "Relevance",
    "RelevanceLabel",
    "RiskFactorProfile",
    "RunRecord",
    "RunStore",
    "SampledInstance",
    "SamplingCriteria",
    "ScriptedBackend",
    "Sentence",
    "WireBackend",
    "WireEmbedder",
    "auc",
    "average_pairwise_kappa",
    "build_profile",
    "chunk_note",
    "cohen_kappa",
    "cosine",
    "count_tokens",
    "embed",
    "evaluate_bundle",
    "extract_diagnoses",
    "fetch_risk_factors",
    "import_expert_annotations",
    "load_corpus",
    "map_expert_label",
    "match_highlights",
    "micro_f1",
    "parse_binary",
    "pcc",
    "recall_notes",
    "replay_run",
    "retrieve_topk",
    "run_patient",
    "run_single_prompt",
    "sample_instances",
    "sequence_confidence",
    "split_sentences",
    "validate_corpus",
]
