"""Streaming director: feature seconds in, edit decision list out.

Seconds arrive one at a time.  A sliding window feeds the event
localizer, detections are merged across overlapping windows, and once
an event has been out of frame long enough for its surroundings to be
stable, the story around it is composed (camera for the in-progress
span, correlated begin/end clips, replay for priority events).  At end
of stream every story is placed on the output timeline with the main
camera filling the gaps.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, StreamError
from .events import (EventInstance, EventLocalizer, ViewBuffer,
                     collapse_instances, detect_events)
from .highlights import HighlightScorer, detect_highlights
from .metrics import temporal_iou
from .scheduler import (DEFAULT_MIN_QUALITY, DEFAULT_TAU, ChannelFaceEmbedder,
                        ChannelQualityEvaluator, CorrelationClassifier,
                        EventStory, ViewClassifier, ViewCountVector,
                        compose_event_story, correlation_score,
                        drop_replay_conflicts, filter_candidates,
                        generate_candidates, mean_view_feature,
                        schedule_buffer, select_begin_end, select_in_progress)
from .streamio import EditDecisionList, StreamSource

log = logging.getLogger(__name__)


class SlidingBuffer:
    """Fixed-length window over the incoming stream, advanced every stride."""

    def __init__(self, window: int = 30, stride: int = 1):
        if window < 2 or stride < 1:
            raise ConfigurationError("window must be >=2 and stride >=1")
        self.window = window
        self.stride = stride
        self._rows: deque = deque(maxlen=window)
        self._count = 0

    def push_second(self, row: np.ndarray) -> Optional[ViewBuffer]:
        row = np.asarray(row, dtype=np.float32)
        if row.ndim != 2:
            raise StreamError("stream second must be a (views, channels) row")
        self._rows.append(row)
        self._count += 1
        if self._count < self.window:
            return None
        if (self._count - self.window) % self.stride != 0:
            return None
        stack = np.stack(list(self._rows), axis=1)   # (K, window, D)
        return ViewBuffer(stack, float(self._count - self.window))


class FeatureHistory:
    """Recent seconds kept around for story composition."""

    def __init__(self, capacity: int = 96):
        if capacity < 8:
            raise ConfigurationError("history capacity too small")
        self.capacity = capacity
        self._rows: deque = deque(maxlen=capacity)
        self.head = 0    # seconds pushed so far

    def push(self, row: np.ndarray) -> None:
        self._rows.append(np.asarray(row, dtype=np.float32))
        self.head += 1

    @property
    def earliest(self) -> int:
        return self.head - len(self._rows)

    def slice(self, t0: float, t1: float) -> ViewBuffer:
        s0 = max(int(math.floor(t0)), self.earliest, 0)
        s1 = min(int(math.ceil(t1)), self.head)
        if s1 - s0 < 1:
            raise StreamError(
                f"history slice [{t0}, {t1}) is empty or evicted")
        rows = list(self._rows)[s0 - self.earliest:s1 - self.earliest]
        stack = np.stack(rows, axis=1)
        return ViewBuffer(stack, float(s0))


def dedup_events(known: list[EventInstance],
                 fresh: list[EventInstance],
                 iou_threshold: float = 0.5) -> list[EventInstance]:
    """Merge fresh detections into the running list.

    A fresh instance matching a known one of the same class keeps
    whichever bounds carry the higher confidence; unmatched instances
    are appended.  Returns the instances that were genuinely new.
    """
    new = []
    for cand in fresh:
        best = None
        best_iou = iou_threshold
        for i, old in enumerate(known):
            if old.event_class != cand.event_class:
                continue
            iou = temporal_iou((old.t_start, old.t_end),
                               (cand.t_start, cand.t_end))
            if iou >= best_iou:
                best_iou = iou
                best = i
        if best is None:
            known.append(cand)
            new.append(cand)
        elif cand.confidence > known[best].confidence:
            known[best] = cand
    return new


@dataclass
class DirectorModels:
    localizer: EventLocalizer
    highlight_scorer: HighlightScorer
    view_classifier: ViewClassifier
    correlation_classifier: CorrelationClassifier


@dataclass
class DirectorSettings:
    window: int = 30
    stride: int = 1
    min_confidence: float = 0.25
    nms_iou: float = 0.5
    dedup_iou: float = 0.5
    edge_guard: float = 2.0
    tau: float = DEFAULT_TAU
    min_quality: float = DEFAULT_MIN_QUALITY
    history_seconds: int = 96
    step_budget: float = 1.0         # seconds of wall time per stream second
    main_view: int = 0


@dataclass
class TimingReport:
    budget: float
    step_seconds: list[float] = field(default_factory=list)
    violations: int = 0

    def record(self, elapsed: float) -> None:
        self.step_seconds.append(elapsed)
        if elapsed > self.budget:
            self.violations += 1
            log.warning("stream second took %.3fs (budget %.3fs)",
                        elapsed, self.budget)

    @property
    def max_step(self) -> float:
        return max(self.step_seconds) if self.step_seconds else 0.0

    @property
    def mean_step(self) -> float:
        return (sum(self.step_seconds) / len(self.step_seconds)
                if self.step_seconds else 0.0)


@dataclass
class DirectorResult:
    edl: EditDecisionList
    instances: list[EventInstance]
    stories: list[EventStory]
    timing: TimingReport
    duration: float


@dataclass
class _Tracked:
    instance_index: int
    composed: bool = False


class Director:
    """Stateful streaming scheduler.  Feed seconds, then call finish()."""

    def __init__(self, models: DirectorModels,
                 settings: Optional[DirectorSettings] = None):
        self.models = models
        self.settings = settings or DirectorSettings()
        s = self.settings
        self.buffer = SlidingBuffer(s.window, s.stride)
        self.history = FeatureHistory(s.history_seconds)
        self.instances: list[EventInstance] = []
        self._tracked: list[_Tracked] = []
        self.stories: list[EventStory] = []
        self.counts = ViewCountVector(models.localizer.config.num_views,
                                      s.main_view)
        self.face_embedder = ChannelFaceEmbedder()
        self.quality = ChannelQualityEvaluator()
        self.timing = TimingReport(budget=s.step_budget)
        self._finished = False

    # ------------------------------------------------------------ feed

    def push_second(self, row: np.ndarray) -> None:
        if self._finished:
            raise StreamError("director already finished")
        start = time.perf_counter()
        self.history.push(row)
        buf = self.buffer.push_second(row)
        if buf is not None:
            guard = self.settings.edge_guard
            fresh = detect_events(buf, self.models.localizer,
                                  min_confidence=self.settings.min_confidence,
                                  nms_iou=self.settings.nms_iou,
                                  left_guard=0.0 if buf.buffer_start_time
                                  <= 1e-9 else guard,
                                  right_guard=guard)
            added = dedup_events(self.instances, fresh,
                                 self.settings.dedup_iou)
            for inst in added:
                self._tracked.append(_Tracked(self.instances.index(inst)))
        self._compose_ready(head=float(self.history.head))
        self.timing.record(time.perf_counter() - start)

    def _compose_ready(self, head: float, flush: bool = False) -> None:
        canonical = None
        order = sorted(range(len(self._tracked)),
                       key=lambda i: self.instances[
                           self._tracked[i].instance_index].t_start)
        for i in order:
            track = self._tracked[i]
            if track.composed:
                continue
            inst = self.instances[track.instance_index]
            if not flush and head < inst.t_end + self.settings.window:
                continue
            if canonical is None:
                canonical = {id(x) for x in collapse_instances(
                    self.instances, self.settings.dedup_iou)}
            track.composed = True
            if id(inst) not in canonical:
                continue    # a stronger record of the same event exists
            self.stories.append(self._compose(inst, head))

    # ------------------------------------------------------- composition

    def _neighbors(self, inst: EventInstance):
        prev_end, next_start = None, None
        for other in self.instances:
            if other is inst:
                continue
            if other.t_end <= inst.t_start + 1e-9:
                if prev_end is None or other.t_end > prev_end:
                    prev_end = other.t_end
            if other.t_start >= inst.t_end - 1e-9:
                if next_start is None or other.t_start < next_start:
                    next_start = other.t_start
        return prev_end, next_start

    def _compose(self, inst: EventInstance, head: float) -> EventStory:
        s = self.settings
        prev_end, next_start = self._neighbors(inst)
        lo = max(inst.t_start - s.window,
                 prev_end if prev_end is not None else 0.0, 0.0)
        lo = min(lo, inst.t_start)
        hi = min(inst.t_end + s.window,
                 next_start if next_start is not None else head, head)
        buf = self.history.slice(lo, max(hi, inst.t_end))

        in_progress = select_in_progress(inst, buf,
                                         self.models.view_classifier,
                                         horizon=float(s.window))

        seq = []
        if prev_end is not None:
            seq.append(EventInstance("throw_in", max(prev_end - 1.0, 0.0),
                                     prev_end, 1.0))
        index = len(seq)
        seq.append(inst)
        if next_start is not None:
            seq.append(EventInstance("throw_in", next_start,
                                     next_start + 1.0, 1.0))
        candidates = generate_candidates(seq, index, buf,
                                         self.face_embedder, self.quality,
                                         min_quality=s.min_quality)

        event_feature = mean_view_feature(buf, inst)
        prog_face = self.face_embedder(buf, in_progress.view,
                                       inst.t_start, inst.t_end)
        if prog_face is None:
            prog_face = np.zeros(self.face_embedder.dim, dtype=np.float32)
        for cand in candidates:
            cand.correlation_score = correlation_score(
                cand, prog_face, event_feature,
                self.models.correlation_classifier)
        kept = filter_candidates(candidates, tau=s.tau)
        begin_cand, end_cand = select_begin_end(kept, self.counts)
        begin = begin_cand.clip if begin_cand is not None else None
        end = end_cand.clip if end_cand is not None else None

        highlight = None
        if inst.priority == 1:
            event_buf = self.history.slice(inst.t_start, inst.t_end)
            _, highlight = detect_highlights(event_buf, inst,
                                             self.models.highlight_scorer)
        story = compose_event_story(inst, in_progress, begin, end, highlight)
        self.counts.record_story(story)
        return story

    # ---------------------------------------------------------- wrap up

    def finish(self) -> DirectorResult:
        if self._finished:
            raise StreamError("director already finished")
        self._finished = True
        head = float(self.history.head)
        self._compose_ready(head, flush=True)
        drop_replay_conflicts(self.stories)
        edl = EditDecisionList(schedule_buffer(
            self.stories, 0.0, head, main_view=self.settings.main_view))
        edl.validate(0.0, head)
        final = collapse_instances(self.instances, self.settings.dedup_iou)
        return DirectorResult(edl=edl, instances=final,
                              stories=list(self.stories), timing=self.timing,
                              duration=head)


def run_stream(source: StreamSource, models: DirectorModels,
               settings: Optional[DirectorSettings] = None) -> DirectorResult:
    """Drive a director over a stored stream from start to finish."""
    director = Director(models, settings)
    for row in source.iter_seconds():
        director.push_second(row)
    return director.finish()


def detect_stream(features: np.ndarray, localizer: EventLocalizer,
                  *, window: int = 30, stride: int = 1,
                  min_confidence: float = 0.25, nms_iou: float = 0.5,
                  dedup_iou: float = 0.5,
                  edge_guard: float = 2.0) -> list[EventInstance]:
    """Localization only: slide over a (T, K, D) stream and merge windows."""
    buffer = SlidingBuffer(window, stride)
    known: list[EventInstance] = []
    total = float(features.shape[0])
    for row in features:
        buf = buffer.push_second(row)
        if buf is None:
            continue
        fresh = detect_events(
            buf, localizer, min_confidence=min_confidence, nms_iou=nms_iou,
            left_guard=0.0 if buf.buffer_start_time <= 1e-9 else edge_guard,
            right_guard=0.0 if buf.end_time >= total - 1e-9 else edge_guard)
        dedup_events(known, fresh, dedup_iou)
    return collapse_instances(known, dedup_iou)
