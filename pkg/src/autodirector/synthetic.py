"""Seeded synthetic match generator.

Produces a feature stream plus ground-truth label files.  Event classes
follow the frequency and duration calibration table below.  Class
evidence is cross-view complementary: a shared activity channel rises on
every camera while an event runs, the class identity axis is weak on
most cameras and strong on two.  The strongest camera (the in-progress
carrier) is the class's favored close-up, so a view classifier fed
view-pooled features can recover it; a second witness camera varies
freely per event.  The planted highlight second carries an extra bump,
face identity vectors tie begin/end candidate windows to their event,
and a quality channel lets the candidate filter reject degraded clips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ScriptError
from .events import EVENT_CLASSES, TruthEvent, ViewBuffer
from .scheduler import (CANDIDATE_WINDOW, ChannelFaceEmbedder,
                        ChannelQualityEvaluator, candidate_windows)

# per class: observed count, shortest and longest duration in seconds
CLASS_STATS = {
    "shooting": (115, 2.12, 9.17),
    "player_falling": (227, 1.49, 9.68),
    "goal_kick": (161, 1.30, 8.47),
    "throw_in": (103, 1.26, 13.03),
    "corner_kick": (32, 3.03, 9.97),
    "free_kick": (63, 1.53, 9.46),
}

# descriptor layout: one axis per class, a shared activity channel, the
# highlight channel, the face identity block, then noise filler and the
# quality channel last
CLASS_AXES = {name: i for i, name in enumerate(EVENT_CLASSES)}
ACTIVITY_CHANNEL = 6
HIGHLIGHT_CHANNEL = 7
FACE_LO, FACE_HI = 8, 16
MIN_CHANNELS = 18


def class_proportions() -> dict[str, float]:
    total = sum(c for c, _, _ in CLASS_STATS.values())
    return {name: c / total for name, (c, _, _) in CLASS_STATS.items()}


@dataclass
class GeneratorConfig:
    num_views: int = 10
    channels: int = 32
    buffer_len: int = 30
    duration: float = 300.0          # seconds of match
    seed: int = 0
    noise_sigma: float = 0.1
    margin: float = 3.0              # class signature separation, in sigmas
    highlight_gain: float = 2.0      # highlight bump, in margin units
    events_per_minute: float = 1.2
    min_gap: float = 12.0
    quality_base: float = 0.85
    degraded_quality: float = 0.2
    main_view: int = 0

    def __post_init__(self):
        if self.channels < MIN_CHANNELS:
            raise ConfigurationError(
                f"generator needs at least {MIN_CHANNELS} channels")
        if self.num_views < 2:
            raise ConfigurationError("generator needs at least two views")
        if self.min_gap <= CANDIDATE_WINDOW + 1.0:
            raise ConfigurationError("min_gap too small for candidate windows")
        if self.noise_sigma < 0 or self.margin <= 0:
            raise ConfigurationError("bad noise/margin settings")


CARRIER_GAIN = 1.5     # class-axis gain on the in-progress camera
WITNESS_GAIN = 0.75    # class-axis gain on the one corroborating camera


def favored_view(event_class: str, num_views: int) -> int:
    """The close-up camera assigned to a class, never the wide main view."""
    return 1 + CLASS_AXES[event_class] % (num_views - 1)


def signature_gains(event: "ScriptEvent", num_views: int) -> np.ndarray:
    """Per-view class-axis gain vector for one scripted event.

    Every camera sees the class identity axis weakly, with a hashed
    texture gain; the carrier (the in-progress camera) and one witness
    camera see it strongly.  The carrier strictly dominates, which
    keeps the in-progress label equal to the argmax of the gains.
    """
    c = CLASS_AXES[event.event_class]
    gains = np.array([0.25 + 0.5 * ((3 * c + 5 * v) % 7) / 6.0
                      for v in range(num_views)])
    gains[event.in_progress_view] = CARRIER_GAIN
    if event.witness_view is not None:
        gains[event.witness_view] = WITNESS_GAIN
    return gains


@dataclass
class ScriptEvent:
    event_class: str
    t_start: float
    t_end: float
    in_progress_view: int
    highlight_view: int
    highlight_second: int
    witness_view: Optional[int] = None
    begin_span: Optional[tuple[int, float, float]] = None
    end_span: Optional[tuple[int, float, float]] = None
    begin_decoy: Optional[tuple[int, float, float]] = None
    end_decoy: Optional[tuple[int, float, float]] = None
    degrade_decoy: bool = False


@dataclass
class MatchScript:
    duration: float
    num_views: int
    events: list[ScriptEvent] = field(default_factory=list)

    def validate(self) -> None:
        prev_end = -math.inf
        for ev in self.events:
            if ev.t_end <= ev.t_start:
                raise ScriptError("scripted event with non-positive duration")
            if ev.t_start < prev_end:
                raise ScriptError("scripted events overlap")
            if ev.t_end > self.duration:
                raise ScriptError("scripted event beyond match end")
            if not (0 <= ev.in_progress_view < self.num_views):
                raise ScriptError("in-progress view outside the rig")
            if ev.witness_view is not None:
                if not (0 <= ev.witness_view < self.num_views):
                    raise ScriptError("witness view outside the rig")
                if ev.witness_view == ev.in_progress_view:
                    raise ScriptError("witness must differ from carrier")
            prev_end = ev.t_end

    def truths(self) -> list[TruthEvent]:
        return [TruthEvent(e.event_class, e.t_start, e.t_end)
                for e in self.events]


def sample_script(config: GeneratorConfig) -> MatchScript:
    """Draw a match plan: classes by frequency, durations uniform per class."""
    rng = np.random.default_rng(config.seed)
    props = class_proportions()
    names = list(CLASS_STATS.keys())
    p = np.array([props[n] for n in names])
    durations = {n: (lo, hi) for n, (_, lo, hi) in CLASS_STATS.items()}
    mean_dur = float(np.mean([(lo + hi) / 2 for lo, hi in durations.values()]))
    spacing_slack = max(60.0 / config.events_per_minute
                        - config.min_gap - mean_dur, 1.0)

    script = MatchScript(duration=config.duration, num_views=config.num_views)
    prev_end = 1.0
    tail = CANDIDATE_WINDOW + 5.0
    while True:
        gap = config.min_gap + float(rng.exponential(spacing_slack))
        t_start = prev_end + gap
        name = names[int(rng.choice(len(names), p=p))]
        lo, hi = durations[name]
        dur = float(rng.uniform(lo, hi))
        t_end = t_start + dur
        if t_end > config.duration - tail:
            break
        mid_second = int(math.floor((t_start + t_end) / 2.0))
        # each class has a dedicated close-up camera; a second witness
        # camera varies freely per event
        in_prog = favored_view(name, config.num_views)
        others = [v for v in range(config.num_views) if v != in_prog]
        witness = int(others[int(rng.integers(0, len(others)))])
        script.events.append(ScriptEvent(
            event_class=name, t_start=t_start, t_end=t_end,
            in_progress_view=in_prog,
            highlight_view=int(rng.integers(0, config.num_views)),
            highlight_second=mid_second,
            witness_view=witness))
        prev_end = t_end

    _plan_candidate_spans(script, config, rng)
    script.validate()
    return script


def _event_ranges(script: MatchScript, i: int,
                  buffer_len: float) -> tuple[tuple[float, float],
                                              tuple[float, float]]:
    """Begin and end candidate ranges around scripted event i."""
    ev = script.events[i]
    prev_end = script.events[i - 1].t_end if i > 0 else 0.0
    next_start = (script.events[i + 1].t_start
                  if i + 1 < len(script.events) else script.duration)
    begin = (max(prev_end, ev.t_start - buffer_len), ev.t_start)
    end = (ev.t_end, min(next_start, ev.t_end + buffer_len, script.duration))
    return begin, end


def _plan_candidate_spans(script: MatchScript, config: GeneratorConfig,
                          rng) -> None:
    """Pick one correlated window and at most one decoy per event side."""
    for i, ev in enumerate(script.events):
        (b_lo, b_hi), (e_lo, e_hi) = _event_ranges(script, i,
                                                   config.buffer_len)
        for side, (lo, hi) in (("begin", (b_lo, b_hi)), ("end", (e_lo, e_hi))):
            grid = candidate_windows(lo, hi)
            if not grid:
                continue
            pick = int(rng.integers(0, len(grid)))
            view = int(rng.integers(0, config.num_views))
            span = (view, *grid[pick])
            far = [g for g in grid if abs(g[0] - grid[pick][0]) >= 6.0]
            decoy = None
            if far and rng.random() < 0.7:
                d = far[int(rng.integers(0, len(far)))]
                decoy = (int(rng.integers(0, config.num_views)), *d)
            if side == "begin":
                ev.begin_span, ev.begin_decoy = span, decoy
            else:
                ev.end_span, ev.end_decoy = span, decoy
        ev.degrade_decoy = bool(rng.random() < 0.3)


# ------------------------------------------------------------- rendering


@dataclass
class SyntheticMatch:
    script: MatchScript
    config: GeneratorConfig
    features: np.ndarray                     # (T, K, D) float32
    truths: list[TruthEvent]
    highlight_rows: list[tuple[int, int, int]]
    view_rows: list[tuple[int, int]]
    correlation_rows: list[tuple[int, int, float, float, int]]


def _unit_vector(rng, dim: int) -> np.ndarray:
    v = rng.normal(0.0, 1.0, dim)
    return v / np.linalg.norm(v)


def _covered_seconds(t_start: float, t_end: float, total: int):
    first = max(int(math.floor(t_start)), 0)
    last = min(int(math.ceil(t_end)), total)
    for s in range(first, last):
        ov = min(s + 1.0, t_end) - max(float(s), t_start)
        if ov > 1e-9:
            yield s, ov


def generate_match(script: MatchScript, config: GeneratorConfig) -> SyntheticMatch:
    """Render a script into features plus label rows."""
    script.validate()
    rng = np.random.default_rng(config.seed + 1)
    total = int(math.ceil(script.duration))
    k, d = config.num_views, config.channels
    sigma = config.noise_sigma
    amp = config.margin * sigma if sigma > 0 else config.margin * 0.1

    feats = rng.normal(0.0, sigma, (total, k, d)) if sigma > 0 else \
        np.zeros((total, k, d))
    feats[:, :, FACE_LO:FACE_HI] *= 0.3
    feats[:, :, -1] = config.quality_base + (
        rng.normal(0.0, 0.3 * sigma, (total, k)) if sigma > 0 else 0.0)

    face_dim = FACE_HI - FACE_LO
    protected = set()    # (second, view) pairs that must keep quality

    for idx, ev in enumerate(script.events):
        axis = CLASS_AXES[ev.event_class]
        gains = signature_gains(ev, k)
        for s, ov in _covered_seconds(ev.t_start, ev.t_end, total):
            feats[s, :, axis] += amp * ov * gains
            feats[s, :, ACTIVITY_CHANNEL] += amp * ov
        hs = min(max(ev.highlight_second, 0), total - 1)
        feats[hs, ev.highlight_view, HIGHLIGHT_CHANNEL] += (
            config.highlight_gain * config.margin * max(sigma, 0.1))
        ev.highlight_second = hs

        face = _unit_vector(rng, face_dim)
        for s, ov in _covered_seconds(ev.t_start, ev.t_end, total):
            feats[s, ev.in_progress_view, FACE_LO:FACE_HI] += face * ov
            protected.add((s, ev.in_progress_view))
        for span in (ev.begin_span, ev.end_span):
            if span is None:
                continue
            view, w0, w1 = span
            for s, ov in _covered_seconds(w0, w1, total):
                feats[s, view, FACE_LO:FACE_HI] += face * ov
                protected.add((s, view))
        for span in (ev.begin_decoy, ev.end_decoy):
            if span is None:
                continue
            view, w0, w1 = span
            # a different face by construction, not by luck of the draw
            decoy_face = _unit_vector(rng, face_dim)
            decoy_face -= (decoy_face @ face) * face
            decoy_face /= np.linalg.norm(decoy_face)
            for s, ov in _covered_seconds(w0, w1, total):
                feats[s, view, FACE_LO:FACE_HI] += decoy_face * ov
                if ev.degrade_decoy:
                    feats[s, view, -1] = config.degraded_quality
                else:
                    protected.add((s, view))

    # sprinkle degraded seconds away from anything the labels depend on
    if total > 0:
        n_bad = int(0.05 * total * k)
        for _ in range(n_bad):
            s = int(rng.integers(0, total))
            v = int(rng.integers(0, k))
            if (s, v) in protected:
                continue
            feats[s, v, -1] = config.degraded_quality

    np.clip(feats[:, :, -1], 0.0, 1.0, out=feats[:, :, -1])
    feats = feats.astype(np.float32)

    truths = script.truths()
    highlight_rows = [(i, e.highlight_view, e.highlight_second)
                      for i, e in enumerate(script.events)]
    view_rows = [(i, e.in_progress_view) for i, e in enumerate(script.events)]
    correlation_rows = _label_candidates(script, config, feats)
    return SyntheticMatch(script=script, config=config, features=feats,
                          truths=truths, highlight_rows=highlight_rows,
                          view_rows=view_rows,
                          correlation_rows=correlation_rows)


def _label_candidates(script: MatchScript, config: GeneratorConfig,
                      feats: np.ndarray):
    """Enumerate candidate windows the scheduler would see and label them.

    A window is correlated when it sits on the planted view within one
    stride of the planted span; everything else that survives the face
    and quality probes is a negative.  Two kinds of window are skipped
    outright because neither label would be right: same-view windows
    that merely graze the span (their content mixes planted and
    background seconds) and windows touching material planted for a
    different event.
    """
    buf = ViewBuffer(feats.transpose(1, 0, 2), 0.0)
    embed = ChannelFaceEmbedder()
    quality = ChannelQualityEvaluator()
    plants = []                      # (event, view, t0, t1) for every plant
    for i, ev in enumerate(script.events):
        plants.append((i, ev.in_progress_view, ev.t_start, ev.t_end))
        for sp in (ev.begin_span, ev.end_span, ev.begin_decoy, ev.end_decoy):
            if sp is not None:
                plants.append((i, sp[0], sp[1], sp[2]))

    def foreign(i, view, w0, w1):
        return any(j != i and pv == view
                   and min(w1, p1) - max(w0, p0) > 1e-9
                   for j, pv, p0, p1 in plants)

    rows = []
    for i, ev in enumerate(script.events):
        (b_lo, b_hi), (e_lo, e_hi) = _event_ranges(script, i,
                                                   config.buffer_len)
        for span, (lo, hi) in ((ev.begin_span, (b_lo, b_hi)),
                               (ev.end_span, (e_lo, e_hi))):
            for w0, w1 in candidate_windows(lo, hi):
                for view in range(config.num_views):
                    if quality(buf, view, w0, w1) < 0.5:
                        continue
                    if embed(buf, view, w0, w1) is None:
                        continue
                    if foreign(i, view, w0, w1):
                        continue
                    label = 0
                    if span is not None and view == span[0]:
                        near = abs(w0 - span[1]) <= 1.0 + 1e-9
                        grazes = min(w1, span[2]) - max(w0, span[1]) > 1e-9
                        if grazes and not near:
                            continue
                        label = int(near)
                    rows.append((i, view, float(w0), float(w1), label))
    return rows


def synthesize(config: GeneratorConfig) -> SyntheticMatch:
    """Sample a script and render it in one call."""
    return generate_match(sample_script(config), config)


def write_match(out_dir, match: SyntheticMatch) -> None:
    """Write the stream and every label file into a directory."""
    import os

    from . import highlights, scheduler, streamio
    from .events import write_annotations

    os.makedirs(out_dir, exist_ok=True)
    streamio.write_stream(os.path.join(out_dir, "stream.sdfs"),
                          match.features)
    write_annotations(os.path.join(out_dir, "events.txt"), match.truths)
    highlights.write_highlight_labels(
        os.path.join(out_dir, "highlights.txt"), match.highlight_rows)
    scheduler.write_view_labels(
        os.path.join(out_dir, "views.txt"), match.view_rows)
    scheduler.write_correlation_labels(
        os.path.join(out_dir, "correlation.txt"), match.correlation_rows)
