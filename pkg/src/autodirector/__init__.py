"""Event-driven automatic sports broadcast directing.

Multi-view feature streams go in; an edit decision list that cuts
between cameras, inserts correlated begin/end clips and replays the
highlights of important events comes out.
"""

from .errors import (ConfigurationError, ContractViolation, DataError,
                     DegenerateBatchError, DimensionError, DirectorError,
                     InvalidEventError, NumericError, ScriptError,
                     StreamError, UndefinedMetricError)
from .events import (EVENT_CLASSES, EventInstance, EventLocalizer,
                     LocalizerConfig, TruthEvent, ViewBuffer, detect_events,
                     train_localizer)
from .highlights import HighlightScorer, detect_highlights
from .pipeline import (Director, DirectorModels, DirectorResult,
                       DirectorSettings, run_stream)
from .scheduler import (CorrelationClassifier, EventStory, ViewClassifier,
                        compose_event_story, schedule_buffer)
from .streamio import EditDecisionList, EdlEntry, StreamSource, write_stream
from .synthetic import GeneratorConfig, MatchScript, synthesize, write_match

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ContractViolation", "DataError",
    "DegenerateBatchError", "DimensionError", "DirectorError",
    "InvalidEventError", "NumericError", "ScriptError", "StreamError",
    "UndefinedMetricError",
    "EVENT_CLASSES", "EventInstance", "EventLocalizer", "LocalizerConfig",
    "TruthEvent", "ViewBuffer", "detect_events", "train_localizer",
    "HighlightScorer", "detect_highlights",
    "Director", "DirectorModels", "DirectorResult", "DirectorSettings",
    "run_stream",
    "CorrelationClassifier", "EventStory", "ViewClassifier",
    "compose_event_story", "schedule_buffer",
    "EditDecisionList", "EdlEntry", "StreamSource", "write_stream",
    "GeneratorConfig", "MatchScript", "synthesize", "write_match",
    "__version__",
]
