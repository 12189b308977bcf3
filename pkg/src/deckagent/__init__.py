"""Hierarchical agentic question answering over multi-page slide decks."""

from .document import (
    BoundingBox,
    Document,
    DocumentError,
    Element,
    ElementType,
    Page,
    Violation,
    load_document,
    save_document,
    validate_document,
)
from .merge import build_adjacency, connected_components, merge_document, merge_elements, min_box_distance
from .backend import (
    Backend,
    BackendError,
    ChatMessage,
    ChatRequest,
    CompletionResult,
    EmbeddingVector,
    HTTPBackend,
    ScriptedBackend,
)
from .knowledge import (
    ElementKnowledge,
    GlobalKnowledge,
    KnowledgeBase,
    PageKnowledge,
    annotate_page,
    build_knowledge_base,
    load_kb,
)
from .retrieval import (
    QueryCase,
    QueryPlan,
    RankedElement,
    RankedPage,
    bm25_score,
    classify_query,
    generate_subqueries,
    index_elements,
    index_pages,
    retrieve_elements,
    retrieve_pages,
)
from .orchestrator import (
    AgentAnswer,
    FinalAnswer,
    answer_query,
    answers_agree,
    nls,
    synthesize,
)
from .evaluation import (
    EvalRecord,
    hit_at_k,
    mrr,
    ndcg_at_k,
    normalize_number,
    numeric_match,
    recall_at_k,
    run_eval,
    token_f1,
)

__version__ = "0.1.0"
