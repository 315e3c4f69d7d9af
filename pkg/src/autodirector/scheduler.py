"""Auto broadcasting scheduler.

Given detected events, this stage picks the in-progress camera, collects
begin/end candidate clips around the event, keeps the ones that correlate
with the action, balances correlation against how unevenly the non-main
cameras have been used so far, and composes the event story that the
timeline assembly stitches between main-camera spans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import nn
from .errors import (ConfigurationError, ContractViolation, DataError,
                     DegenerateBatchError, DimensionError, InvalidEventError)
from .events import EventInstance, ViewBuffer
from .streamio import EdlEntry

MAIN_VIEW = 0
CANDIDATE_WINDOW = 3.0
CANDIDATE_STRIDE = 1.0
DEFAULT_TAU = 0.7
DEFAULT_MIN_QUALITY = 0.5
REPLAY_SPEED = 0.5

# visual effect requests attached per event class (replay implied by
# priority one); other classes get a plain replay only
EFFECT_TAGS = {
    "free_kick": ("trajectory", "distance"),
    "shooting": ("trajectory",),
}


@dataclass
class Clip:
    view: int
    t_start: float
    t_end: float

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ContractViolation("clip ends before it starts")
        if self.view < 0:
            raise ContractViolation("negative view index")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass
class CandidateClip:
    clip: Clip
    kind: str                      # "begin" or "end"
    quality: float
    face_feature: Optional[np.ndarray] = None
    correlation_score: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("begin", "end"):
            raise ContractViolation(f"unknown candidate kind {self.kind!r}")


@dataclass
class EventStory:
    event: EventInstance
    in_progress: Clip
    begin: Optional[Clip] = None
    end: Optional[Clip] = None
    replay: Optional[Clip] = None
    replay_speed: float = REPLAY_SPEED
    effect_tags: tuple[str, ...] = ()

    @property
    def span_start(self) -> float:
        return self.begin.t_start if self.begin else self.in_progress.t_start

    @property
    def span_end(self) -> float:
        base = self.end.t_end if self.end else self.in_progress.t_end
        if self.replay is not None:
            base += self.replay.duration / self.replay_speed
        return base


class ViewCountVector:
    """Running selection tallies for every camera except the main one."""

    def __init__(self, num_views: int, main_view: int = MAIN_VIEW):
        if num_views < 2:
            raise ConfigurationError("need at least two views")
        if not (0 <= main_view < num_views):
            raise ConfigurationError("main view outside the rig")
        self.num_views = num_views
        self.main_view = main_view
        self.counts = np.zeros(num_views - 1, dtype=np.int64)

    def slot(self, view: int) -> int:
        if view == self.main_view:
            raise ContractViolation("main camera is never tallied")
        if not (0 <= view < self.num_views):
            raise ContractViolation(f"view {view} outside the rig")
        return view - 1 if view > self.main_view else view

    def increment(self, view: int) -> None:
        self.counts[self.slot(view)] += 1

    def record_story(self, story: EventStory) -> None:
        """Tally every non-main clip the story will put on air."""
        for clip in (story.begin, story.in_progress, story.end, story.replay):
            if clip is not None and clip.view != self.main_view:
                self.increment(clip.view)


def diversity_std(counts: ViewCountVector,
                  proposed_views: Sequence[int]) -> float:
    """Normalized spread of selection counts after a proposed pick.

    Population standard deviation of the incremented tallies divided by
    the deviation of the same total mass concentrated on one view; zero
    when the total mass is zero.
    """
    tally = counts.counts.astype(np.float64).copy()
    for view in proposed_views:
        tally[counts.slot(view)] += 1.0
    total = tally.sum()
    if total == 0.0:
        return 0.0
    concentrated = np.zeros_like(tally)
    concentrated[0] = total
    denom = float(np.std(concentrated))
    if denom == 0.0:
        return 0.0
    return float(np.std(tally)) / denom


# ------------------------------------------------------------ classifiers


class ViewClassifier:
    """Picks the in-progress camera from pooled event features."""

    def __init__(self, in_channels: int, num_views: int, hidden: int = 32,
                 *, rng=None, dtype=nn.DEFAULT_DTYPE):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_channels = in_channels     # pooled feature width, D
        self.num_views = num_views
        self.hidden = hidden
        self.l1 = nn.LinearMap(in_channels + 2, hidden, rng=rng, dtype=dtype)
        self.l2 = nn.LinearMap(hidden, num_views, rng=rng, dtype=dtype)

    def logits(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs)
        if inputs.shape[-1] != self.in_channels + 2:
            raise DimensionError(
                f"expected width {self.in_channels + 2} inputs")
        return self.l2(nn.relu(self.l1(inputs)))

    def named_layers(self):
        return [("l1", self.l1), ("l2", self.l2)]

    def parameters(self):
        return nn.collect_parameters(self.named_layers())

    def zero_grad(self):
        nn.zero_gradients([self.l1, self.l2])

    def state(self):
        entries = [("meta", np.asarray(
            [self.in_channels, self.num_views, self.hidden], np.float32))]
        for prefix, layer in self.named_layers():
            for name, value, _ in layer.parameters():
                entries.append((f"{prefix}.{name}", value))
        return entries

    def save(self, path) -> None:
        nn.save_parameters(path, self.state())

    @classmethod
    def load(cls, path) -> "ViewClassifier":
        loaded = nn.load_parameters(path)
        if "meta" not in loaded:
            raise DataError(f"{path}: missing classifier metadata")
        d, k, h = (int(v) for v in loaded["meta"])
        model = cls(d, k, h)
        _restore(model, loaded, path)
        return model


class CorrelationClassifier:
    """Scores whether a candidate clip belongs to an event's story."""

    def __init__(self, face_dim: int, feature_dim: int, hidden: int = 32,
                 hidden2: int = 16, *, rng=None, dtype=nn.DEFAULT_DTYPE):
        if rng is None:
            rng = np.random.default_rng(0)
        self.face_dim = face_dim
        self.feature_dim = feature_dim
        self.hidden = hidden
        self.hidden2 = hidden2
        width = 2 * face_dim + feature_dim
        self.l1 = nn.LinearMap(width, hidden, rng=rng, dtype=dtype)
        self.l2 = nn.LinearMap(hidden, hidden2, rng=rng, dtype=dtype)
        self.l3 = nn.LinearMap(hidden2, 1, rng=rng, dtype=dtype)

    def input_row(self, cand_face: np.ndarray, prog_face: np.ndarray,
                  pooled: np.ndarray) -> np.ndarray:
        row = np.concatenate([np.asarray(cand_face, np.float32).ravel(),
                              np.asarray(prog_face, np.float32).ravel(),
                              np.asarray(pooled, np.float32).ravel()])
        if row.shape[0] != 2 * self.face_dim + self.feature_dim:
            raise DimensionError("correlation input width mismatch")
        return row

    def logit_batch(self, rows: np.ndarray) -> np.ndarray:
        return self.l3(nn.relu(self.l2(nn.relu(self.l1(rows)))))[:, 0]

    def probability(self, cand_face, prog_face, pooled) -> float:
        row = self.input_row(cand_face, prog_face, pooled)[None, :]
        return float(nn.sigmoid(self.logit_batch(row))[0])

    def named_layers(self):
        return [("l1", self.l1), ("l2", self.l2), ("l3", self.l3)]

    def parameters(self):
        return nn.collect_parameters(self.named_layers())

    def zero_grad(self):
        nn.zero_gradients([self.l1, self.l2, self.l3])

    def state(self):
        entries = [("meta", np.asarray(
            [self.face_dim, self.feature_dim, self.hidden, self.hidden2],
            np.float32))]
        for prefix, layer in self.named_layers():
            for name, value, _ in layer.parameters():
                entries.append((f"{prefix}.{name}", value))
        return entries

    def save(self, path) -> None:
        nn.save_parameters(path, self.state())

    @classmethod
    def load(cls, path) -> "CorrelationClassifier":
        loaded = nn.load_parameters(path)
        if "meta" not in loaded:
            raise DataError(f"{path}: missing classifier metadata")
        f, d, h, h2 = (int(v) for v in loaded["meta"])
        model = cls(f, d, h, h2)
        _restore(model, loaded, path)
        return model


def _restore(model, loaded, path):
    for prefix, layer in model.named_layers():
        for name, value, _ in layer.parameters():
            key = f"{prefix}.{name}"
            if key not in loaded or loaded[key].shape != value.shape:
                raise DataError(f"{path}: bad parameter {key}")
            value[...] = loaded[key]


# ---------------------------------------------------- descriptor readers

# Feature channel conventions used by the reference probes: a face
# identity sub-vector and a single picture-quality channel at the end.
FACE_CHANNELS = slice(8, 16)
QUALITY_CHANNEL = -1
FACE_NULL_NORM = 0.2


def _window_rows(buf: ViewBuffer, t_start: float, t_end: float):
    """(second indices, overlap weights) for a clip inside the buffer."""
    if (t_start < buf.buffer_start_time - 1e-9
            or t_end > buf.end_time + 1e-9 or t_end <= t_start):
        raise InvalidEventError("clip does not fit inside the buffer")
    rel0 = t_start - buf.buffer_start_time
    rel1 = t_end - buf.buffer_start_time
    first = int(math.floor(rel0))
    last = min(int(math.ceil(rel1)), buf.length)
    idx, weights = [], []
    for s in range(max(first, 0), last):
        w = min(s + 1.0, rel1) - max(float(s), rel0)
        if w > 1e-9:
            idx.append(s)
            weights.append(w)
    if not idx:
        raise InvalidEventError("clip covers no buffered seconds")
    return np.asarray(idx), np.asarray(weights, dtype=np.float64)


class ChannelFaceEmbedder:
    """Reads the face identity sub-vector; null when nobody is visible."""

    def __init__(self, channels: slice = FACE_CHANNELS,
                 null_norm: float = FACE_NULL_NORM):
        self.channels = channels
        self.null_norm = null_norm

    def __call__(self, buf: ViewBuffer, view: int, t_start: float,
                 t_end: float) -> Optional[np.ndarray]:
        idx, w = _window_rows(buf, t_start, t_end)
        rows = buf.features[view, idx, self.channels].astype(np.float64)
        emb = (rows * w[:, None]).sum(axis=0) / w.sum()
        if float(np.linalg.norm(emb)) < self.null_norm:
            return None
        return emb.astype(np.float32)

    @property
    def dim(self) -> int:
        return (self.channels.stop or 0) - (self.channels.start or 0)


class ChannelQualityEvaluator:
    """Reads the picture-quality channel, clipped to [0, 1]."""

    def __init__(self, channel: int = QUALITY_CHANNEL):
        self.channel = channel

    def __call__(self, buf: ViewBuffer, view: int, t_start: float,
                 t_end: float) -> float:
        idx, w = _window_rows(buf, t_start, t_end)
        vals = buf.features[view, idx, self.channel].astype(np.float64)
        q = float((vals * w).sum() / w.sum())
        return min(max(q, 0.0), 1.0)


# ------------------------------------------------------------- selection


def mean_view_feature(buf: ViewBuffer, event: EventInstance) -> np.ndarray:
    """Event window features pooled over every view and second."""
    idx, w = _window_rows(buf, event.t_start, event.t_end)
    rows = buf.features[:, idx, :].astype(np.float64)    # (K, W, D)
    pooled = (rows * w[None, :, None]).sum(axis=(0, 1)) / (w.sum() * buf.num_views)
    return pooled.astype(np.float32)


def select_in_progress(event: EventInstance, buf: ViewBuffer,
                       classifier: ViewClassifier,
                       *, horizon: float) -> Clip:
    """Pick the camera that broadcasts the event while it happens.

    The classifier sees the pooled event feature, the event duration
    normalized by the analysis horizon, and the priority flag.
    """
    if buf.num_views != classifier.num_views:
        raise DimensionError("classifier built for a different rig")
    pooled = mean_view_feature(buf, event)
    rel_len = (event.t_end - event.t_start) / horizon
    row = np.concatenate([pooled, [rel_len, float(event.priority)]])
    logits = classifier.logits(row[None, :])[0]
    view = int(np.argmax(logits))
    return Clip(view=view, t_start=event.t_start, t_end=event.t_end)


def candidate_windows(lo: float, hi: float, *, window: float = CANDIDATE_WINDOW,
                      stride: float = CANDIDATE_STRIDE) -> list[tuple[float, float]]:
    """Fixed-length windows on the stride grid inside [lo, hi]."""
    if hi - lo < window - 1e-9:
        return []
    out = []
    s = math.ceil(lo / stride - 1e-9) * stride
    while s + window <= hi + 1e-9:
        out.append((s, s + window))
        s += stride
    return out


def generate_candidates(event_seq: Sequence[EventInstance], i: int,
                        buf: ViewBuffer, face_embedder, quality_evaluator,
                        *, window: float = CANDIDATE_WINDOW,
                        stride: float = CANDIDATE_STRIDE,
                        min_quality: float = DEFAULT_MIN_QUALITY) -> list[CandidateClip]:
    """Enumerate begin/end candidate clips around event ``i``.

    Begin windows live between the previous event's end and this event's
    start, end windows between this event's end and the next event's
    start, both clamped to the buffer.  Windows with a null face
    embedding or quality below the floor are dropped.
    """
    event = event_seq[i]
    begin_lo = buf.buffer_start_time if i == 0 else max(
        buf.buffer_start_time, event_seq[i - 1].t_end)
    begin_hi = event.t_start
    end_lo = event.t_end
    end_hi = buf.end_time if i + 1 >= len(event_seq) else min(
        buf.end_time, event_seq[i + 1].t_start)

    out = []
    for kind, lo, hi in (("begin", begin_lo, begin_hi),
                         ("end", end_lo, end_hi)):
        for w0, w1 in candidate_windows(lo, hi, window=window, stride=stride):
            for view in range(buf.num_views):
                quality = quality_evaluator(buf, view, w0, w1)
                if quality < min_quality:
                    continue
                face = face_embedder(buf, view, w0, w1)
                if face is None:
                    continue
                out.append(CandidateClip(clip=Clip(view, w0, w1), kind=kind,
                                         quality=quality, face_feature=face))
    return out


def correlation_score(candidate: CandidateClip, in_progress_face: np.ndarray,
                      pooled: np.ndarray,
                      classifier: CorrelationClassifier) -> float:
    if candidate.face_feature is None:
        raise ContractViolation("candidate has no face embedding")
    return classifier.probability(candidate.face_feature, in_progress_face,
                                  pooled)


def filter_candidates(candidates: Sequence[CandidateClip],
                      tau: float = DEFAULT_TAU) -> list[CandidateClip]:
    """Keep candidates whose correlation score reaches tau."""
    for c in candidates:
        if c.correlation_score is None:
            raise ContractViolation("candidate not yet scored")
    return [c for c in candidates if c.correlation_score >= tau]


def select_begin_end(candidates: Sequence[CandidateClip],
                     counts: ViewCountVector):
    """Exhaustively pick at most one begin and one end clip.

    The objective is mean correlation of the chosen clips minus the
    diversity spread of the tallies incremented by their non-main
    views.  Ties prefer higher correlation, then the earlier begin,
    then lower view indices.  A side without candidates stays empty.
    """
    begins = [c for c in candidates if c.kind == "begin"] or [None]
    ends = [c for c in candidates if c.kind == "end"] or [None]
    best = None
    best_key = None
    for b in begins:
        for e in ends:
            chosen = [c for c in (b, e) if c is not None]
            if chosen:
                cor = float(np.mean([c.correlation_score for c in chosen]))
            else:
                cor = 0.0
            views = [c.clip.view for c in chosen
                     if c.clip.view != counts.main_view]
            objective = cor - diversity_std(counts, views)
            key = (objective, cor,
                   -(b.clip.t_start if b else 0.0),
                   -(b.clip.view if b else 0),
                   -(e.clip.t_start if e else 0.0),
                   -(e.clip.view if e else 0))
            if best_key is None or key > best_key:
                best, best_key = (b, e), key
    return best


# ----------------------------------------------------------- composition


def compose_event_story(event: EventInstance, in_progress: Clip,
                        begin: Optional[Clip], end: Optional[Clip],
                        highlight: Optional[Clip], *,
                        replay_speed: float = REPLAY_SPEED) -> EventStory:
    """Assemble begin, in-progress, end and, for priority events, replay.

    The replay repeats the highlight clip at half speed right after the
    end clip; effect tags are attached per event class.
    """
    if begin is not None and begin.t_end > in_progress.t_start + 1e-9:
        raise ContractViolation("begin clip runs into the event")
    if end is not None and end.t_start < in_progress.t_end - 1e-9:
        raise ContractViolation("end clip starts before the event ends")
    replay = None
    tags: tuple[str, ...] = ()
    if event.priority == 1:
        if highlight is None:
            raise ContractViolation("priority event needs a highlight clip")
        replay = highlight
        tags = EFFECT_TAGS.get(event.event_class, ())
    return EventStory(event=event, in_progress=in_progress, begin=begin,
                      end=end, replay=replay, replay_speed=replay_speed,
                      effect_tags=tags)


def drop_replay_conflicts(stories: Sequence[EventStory]) -> None:
    """Drop replays that would run into the next priority event's story."""
    ordered = sorted(stories, key=lambda s: s.span_start)
    for i, story in enumerate(ordered):
        if story.replay is None:
            continue
        for nxt in ordered[i + 1:]:
            if nxt.event.priority != 1 or nxt is story:
                continue
            if story.span_end > nxt.span_start + 1e-9:
                story.replay = None
            break


def story_segments(story: EventStory) -> list[EdlEntry]:
    """Expand a story into EDL entries, replay played at its speed."""
    cls = story.event.event_class
    out = []
    if story.begin is not None:
        out.append(EdlEntry(story.begin.t_start, story.begin.t_end,
                            story.begin.view, story.begin.t_start,
                            story.begin.t_end, 1.0, ("begin", cls)))
    ip = story.in_progress
    out.append(EdlEntry(ip.t_start, ip.t_end, ip.view, ip.t_start, ip.t_end,
                        1.0, ("in_progress", cls)))
    if story.end is not None:
        out.append(EdlEntry(story.end.t_start, story.end.t_end,
                            story.end.view, story.end.t_start,
                            story.end.t_end, 1.0, ("end", cls)))
    if story.replay is not None:
        anchor = story.end.t_end if story.end else ip.t_end
        dur = story.replay.duration / story.replay_speed
        out.append(EdlEntry(anchor, anchor + dur, story.replay.view,
                            story.replay.t_start, story.replay.t_end,
                            story.replay_speed,
                            ("replay", cls) + story.effect_tags))
    return out


def schedule_buffer(stories: Sequence[EventStory], span_start: float,
                    span_end: float, *, main_view: int = MAIN_VIEW) -> list[EdlEntry]:
    """Lay stories on the span and fill everything else with the main camera.

    Overlapping stories keep the higher priority event, ties keep the
    earlier one.  Surviving story segments are clipped to the span.
    """
    if span_end <= span_start:
        raise ContractViolation("empty scheduling span")
    ordered = sorted(stories, key=lambda s: (s.span_start, s.event.t_start))
    kept: list[EventStory] = []
    for story in ordered:
        beaten = []
        winner = True
        for other in kept:
            if (story.span_start < other.span_end - 1e-9
                    and other.span_start < story.span_end - 1e-9):
                mine = (story.event.priority, -story.event.t_start)
                theirs = (other.event.priority, -other.event.t_start)
                if mine > theirs:
                    beaten.append(other)
                else:
                    winner = False
                    break
        if winner:
            for other in beaten:
                kept.remove(other)
            kept.append(story)

    segments: list[EdlEntry] = []
    for story in kept:
        for seg in story_segments(story):
            o0 = max(seg.out_start, span_start)
            o1 = min(seg.out_end, span_end)
            if o1 - o0 <= 1e-9:
                continue
            s0 = seg.src_start + (o0 - seg.out_start) * seg.speed
            s1 = s0 + (o1 - o0) * seg.speed
            segments.append(EdlEntry(o0, o1, seg.view, s0, s1, seg.speed,
                                     seg.tags))
    segments.sort(key=lambda s: s.out_start)
    for prev, cur in zip(segments, segments[1:]):
        if cur.out_start < prev.out_end - 1e-9:
            raise ContractViolation("story segments overlap after resolution")

    timeline: list[EdlEntry] = []
    cursor = span_start
    for seg in segments:
        if seg.out_start - cursor > 1e-9:
            timeline.append(EdlEntry(cursor, seg.out_start, main_view,
                                     cursor, seg.out_start, 1.0, ("main",)))
        timeline.append(seg)
        cursor = max(cursor, seg.out_end)
    if span_end - cursor > 1e-9:
        timeline.append(EdlEntry(cursor, span_end, main_view, cursor,
                                 span_end, 1.0, ("main",)))
    return timeline


# -------------------------------------------------------------- training


def train_view_classifier(inputs: np.ndarray, labels: np.ndarray,
                          num_views: int, *, hidden: int = 32,
                          epochs: int = 200, lr: float = 5e-3,
                          seed: int = 0):
    """Fit the in-progress view classifier; returns (model, losses)."""
    inputs = np.asarray(inputs, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.intp)
    if inputs.ndim != 2 or len(inputs) != len(labels):
        raise DimensionError("bad view training set")
    if len(inputs) == 0:
        raise DegenerateBatchError("no view training samples")
    rng = np.random.default_rng(seed)
    model = ViewClassifier(inputs.shape[1] - 2, num_views, hidden, rng=rng)
    opt = nn.Adam([(v, g) for _, v, g in model.parameters()], lr=lr)
    losses = []
    for _ in range(epochs):
        pre1 = model.l1(inputs)
        hid = nn.relu(pre1)
        logits = model.l2(hid)
        loss, dlogits = nn.softmax_cross_entropy(logits, labels)
        model.zero_grad()
        dhid = model.l2.backward(hid, dlogits)
        model.l1.backward(inputs, nn.relu_backward(pre1, dhid))
        opt.step()
        losses.append(loss)
    return model, losses


def train_correlation_classifier(rows: np.ndarray, labels: np.ndarray,
                                 face_dim: int, feature_dim: int, *,
                                 hidden: int = 32, hidden2: int = 16,
                                 epochs: int = 300, lr: float = 5e-3,
                                 seed: int = 0):
    """Fit the story correlation classifier; returns (model, losses)."""
    rows = np.asarray(rows, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.float64)
    if rows.ndim != 2 or len(rows) != len(labels):
        raise DimensionError("bad correlation training set")
    if len(rows) == 0:
        raise DegenerateBatchError("no correlation training samples")
    rng = np.random.default_rng(seed)
    model = CorrelationClassifier(face_dim, feature_dim, hidden, hidden2,
                                  rng=rng)
    opt = nn.Adam([(v, g) for _, v, g in model.parameters()], lr=lr)
    losses = []
    n = len(rows)
    for _ in range(epochs):
        pre1 = model.l1(rows)
        h1 = nn.relu(pre1)
        pre2 = model.l2(h1)
        h2 = nn.relu(pre2)
        logit = model.l3(h2)[:, 0]
        p = nn.sigmoid(logit)
        eps = 1e-12
        loss = float(-np.mean(labels * np.log(p + eps)
                              + (1 - labels) * np.log(1 - p + eps)))
        dlogit = (p - labels) / n
        model.zero_grad()
        dh2 = model.l3.backward(h2, dlogit[:, None])
        dh1 = model.l2.backward(h1, nn.relu_backward(pre2, dh2))
        model.l1.backward(rows, nn.relu_backward(pre1, dh1))
        opt.step()
        losses.append(loss)
    return model, losses


# ------------------------------------------------------------------ files


def write_view_labels(path, rows) -> None:
    """Rows of (event_id, chosen_view)."""
    with open(path, "w", encoding="utf-8") as f:
        for event_id, view in rows:
            f.write(f"{event_id} {view}\n")


def read_view_labels(path) -> list[tuple[int, int]]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{ln}: expected 'event view'")
            try:
                out.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise DataError(f"{path}:{ln}: non-integer field") from None
    return out


def write_correlation_labels(path, rows) -> None:
    """Rows of (event_id, view, w_start, w_end, label)."""
    with open(path, "w", encoding="utf-8") as f:
        for event_id, view, w0, w1, label in rows:
            f.write(f"{event_id} {view} {w0:.3f} {w1:.3f} {label}\n")


def read_correlation_labels(path) -> list[tuple[int, int, float, float, int]]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise DataError(
                    f"{path}:{ln}: expected 'event view start end label'")
            try:
                out.append((int(parts[0]), int(parts[1]), float(parts[2]),
                            float(parts[3]), int(parts[4])))
            except ValueError:
                raise DataError(f"{path}:{ln}: malformed field") from None
    return out
