"""Vision Search Assistant: an agentic search engine for images.

Given an image and a question, the pipeline detects the objects worth asking
about, describes each one in the context of the others, iteratively plans and
runs web searches per object until a judge deems the gathered knowledge
sufficient, and generates a web-grounded answer. Every model and search
dependency sits behind a pluggable backend, so the full algorithm runs
deterministically against scripted fixtures.
"""

from .chain import ChainConfig, ChainResult, ChainRunner, TerminationReason
from .formulation import FormulationResult, Formulator
from .gateway import Gateway, ModelRole, ScriptedBackend
from .model import (
    BoundingBox,
    CorrelatedFormulation,
    FinalAnswer,
    ImagePayload,
    QueryMode,
    RegionOfInterest,
    SearchGraph,
    UserQuery,
    WebKnowledge,
    check_graph,
)
from .pipeline import PipelineDeps, load_fixture_deps, run_query
from .trace import EventKind, TraceEvent, TraceRecorder, decode_trace, encode_trace

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "ChainConfig",
    "ChainResult",
    "ChainRunner",
    "CorrelatedFormulation",
    "EventKind",
    "FinalAnswer",
    "FormulationResult",
    "Formulator",
    "Gateway",
    "ImagePayload",
    "ModelRole",
    "PipelineDeps",
    "QueryMode",
    "RegionOfInterest",
    "ScriptedBackend",
    "SearchGraph",
    "TerminationReason",
    "TraceEvent",
    "TraceRecorder",
    "UserQuery",
    "WebKnowledge",
    "check_graph",
    "decode_trace",
    "encode_trace",
    "load_fixture_deps",
    "run_query",
    "__version__",
]
