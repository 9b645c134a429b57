"""Human data collection: studies, live sessions, replay, tagging, export."""

from .session import AsyncStepper, Event, EpisodeOutcome, Phase, Session
from .studies import Study, StudyStore

__all__ = [
    "AsyncStepper",
    "EpisodeOutcome",
    "Event",
    "Phase",
    "Session",
    "Study",
    "StudyStore",
]
