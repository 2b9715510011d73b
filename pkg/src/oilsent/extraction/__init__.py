from .adapters import (
    Adapter,
    AdapterError,
    ChatAdapter,
    ClassifierAdapter,
    StubChatAdapter,
    StubClassifierAdapter,
    StubVendorAdapter,
    TokenBucket,
    VendorAdapter,
    stub_adapters,
    stub_vector,
)
from .runner import (
    ExtractionConfig,
    ExtractionResult,
    extract_corpus,
    read_vector_store,
    write_failures,
    write_vector_store,
)
from .scores import (
    CHAT_MODELS,
    DIMENSIONS,
    MODEL_IDS,
    POPULATED,
    SYSTEM_PROMPT,
    ChatRequest,
    ScoreValidationError,
    SentimentVector,
    build_prompt,
    check_population,
    classifier_to_scores,
    parse_scores,
    serialize_scores,
    vendor_passthrough,
)
