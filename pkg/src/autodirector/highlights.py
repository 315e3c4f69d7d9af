"""Multi-view highlight ranking.

A small shared scorer rates every one-second clip of every view inside a
detected event window; the top clip becomes the slow-motion replay
source.  Training uses a margin ranking hinge against the clips of the
other views at the same moment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .errors import (ContractViolation, DataError, DegenerateBatchError,
                     DimensionError, InvalidEventError)
from .events import EventInstance, ViewBuffer
from .scheduler import Clip

RANKING_MARGIN = 1.0


class HighlightScorer:
    """Two-layer perceptron mapping a clip feature to an interest score."""

    def __init__(self, in_channels: int, hidden: int = 16, *, rng=None,
                 dtype=nn.DEFAULT_DTYPE):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_channels = in_channels
        self.hidden = hidden
        self.l1 = nn.LinearMap(in_channels, hidden, rng=rng, dtype=dtype)
        self.l2 = nn.LinearMap(hidden, 1, rng=rng, dtype=dtype)

    def score_batch(self, clips: np.ndarray) -> np.ndarray:
        clips = np.asarray(clips)
        if clips.ndim != 2 or clips.shape[1] != self.in_channels:
            raise DimensionError(
                f"expected (N, {self.in_channels}) clip features")
        return self.l2(nn.relu(self.l1(clips)))[:, 0]

    def backward_batch(self, clips: np.ndarray,
                       grad_scores: np.ndarray) -> None:
        pre = self.l1(clips)
        hid = nn.relu(pre)
        dhid = self.l2.backward(hid, np.asarray(grad_scores)[:, None])
        self.l1.backward(clips, nn.relu_backward(pre, dhid))

    def named_layers(self):
        return [("l1", self.l1), ("l2", self.l2)]

    def layers(self):
        return [self.l1, self.l2]

    def parameters(self):
        return nn.collect_parameters(self.named_layers())

    def zero_grad(self):
        nn.zero_gradients(self.layers())

    def state(self):
        entries = [("meta", np.asarray([self.in_channels, self.hidden],
                                       dtype=np.float32))]
        for prefix, layer in self.named_layers():
            for name, value, _ in layer.parameters():
                entries.append((f"{prefix}.{name}", value))
        return entries

    def save(self, path) -> None:
        nn.save_parameters(path, self.state())

    @classmethod
    def load(cls, path) -> "HighlightScorer":
        loaded = nn.load_parameters(path)
        if "meta" not in loaded:
            raise DataError(f"{path}: missing scorer metadata")
        in_ch, hidden = (int(v) for v in loaded["meta"])
        model = cls(in_ch, hidden)
        for prefix, layer in model.named_layers():
            for name, value, _ in layer.parameters():
                key = f"{prefix}.{name}"
                if key not in loaded or loaded[key].shape != value.shape:
                    raise DataError(f"{path}: bad parameter {key}")
                value[...] = loaded[key]
        return model


def score_clip(feature: np.ndarray, scorer: HighlightScorer) -> float:
    return float(scorer.score_batch(np.asarray(feature)[None, :])[0])


def multi_view_ranking_loss(pos_score: float, neg_scores: Sequence[float],
                            *, margin: float = RANKING_MARGIN):
    """Hinge ranking loss against every negative view.

    L = sum_i max(0, margin - pos + neg_i).  Returns (loss, grad wrt
    pos, grads wrt negs); the subgradient at the hinge kink is zero.
    """
    if len(neg_scores) == 0:
        raise DegenerateBatchError("ranking loss needs at least one negative")
    loss = 0.0
    dpos = 0.0
    dnegs = []
    for neg in neg_scores:
        slack = margin - pos_score + float(neg)
        if slack > 0.0:
            loss += slack
            dpos -= 1.0
            dnegs.append(1.0)
        else:
            dnegs.append(0.0)
    return loss, dpos, dnegs


@dataclass
class HighlightScoreTable:
    """Scores for each (view, second) clip inside one event window."""

    scores: np.ndarray          # (views, seconds)
    clip_seconds: list[int]     # absolute start second per column
    event: EventInstance


def event_clip_seconds(event: EventInstance, buf: ViewBuffer) -> list[int]:
    """Integer clip starts whose [s, s+1) span intersects the event."""
    if (event.t_start < buf.buffer_start_time - 1e-9
            or event.t_end > buf.end_time + 1e-9):
        raise InvalidEventError("event does not fit inside the buffer")
    first = int(math.floor(event.t_start))
    last = int(math.ceil(event.t_end))
    secs = [s for s in range(first, last)
            if min(s + 1, event.t_end) - max(s, event.t_start) > 1e-9]
    if not secs:
        raise InvalidEventError("event window contains no whole clip")
    return secs


def detect_highlights(buf: ViewBuffer, event: EventInstance,
                      scorer: HighlightScorer):
    """Score every clip of every view in the event window.

    Returns (HighlightScoreTable, replay Clip).  The replay clip is the
    argmax; ties go to the lower view index, then the earlier second.
    """
    secs = event_clip_seconds(event, buf)
    k = buf.num_views
    cols = [int(s - buf.buffer_start_time) for s in secs]
    if cols[0] < 0 or cols[-1] >= buf.length:
        raise InvalidEventError("event clips fall outside the buffer")
    feats = buf.features[:, cols, :]                  # (K, W, D)
    flat = feats.reshape(k * len(cols), buf.channels)
    scores = scorer.score_batch(flat).reshape(k, len(cols))
    best_view, best_col, best = 0, 0, -np.inf
    for v in range(k):
        for c in range(len(cols)):
            if scores[v, c] > best:
                best, best_view, best_col = float(scores[v, c]), v, c
    table = HighlightScoreTable(scores=scores, clip_seconds=secs, event=event)
    replay = Clip(view=best_view, t_start=float(secs[best_col]),
                  t_end=float(secs[best_col] + 1))
    return table, replay


# -------------------------------------------------------------- training


def train_highlight_scorer(samples, in_channels: int, *, hidden: int = 16,
                           epochs: int = 30, lr: float = 5e-3,
                           seed: int = 0):
    """Fit the scorer on (positive clip, negative clips) feature pairs.

    Each sample is (pos (D,), negs (K-1, D)).  Returns (scorer, losses).
    """
    samples = list(samples)
    if not samples:
        raise DegenerateBatchError("no highlight training samples")
    rng = np.random.default_rng(seed)
    scorer = HighlightScorer(in_channels, hidden, rng=rng)
    opt = nn.Adam([(v, g) for _, v, g in scorer.parameters()], lr=lr)
    losses = []
    order = np.arange(len(samples))
    for _ in range(epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        for i in order:
            pos, negs = samples[i]
            negs = np.asarray(negs, dtype=np.float32)
            stack = np.concatenate([np.asarray(pos, np.float32)[None, :],
                                    negs], axis=0)
            scores = scorer.score_batch(stack)
            loss, dpos, dnegs = multi_view_ranking_loss(
                float(scores[0]), [float(s) for s in scores[1:]])
            epoch_loss += loss
            grad = np.asarray([dpos] + dnegs, dtype=np.float64)
            scorer.zero_grad()
            scorer.backward_batch(stack, grad)
            opt.step()
        losses.append(epoch_loss / len(samples))
    return scorer, losses


# ------------------------------------------------------------------ files


def write_highlight_labels(path, rows) -> None:
    """Rows of (event_id, view, second)."""
    with open(path, "w", encoding="utf-8") as f:
        for event_id, view, second in rows:
            f.write(f"{event_id} {view} {second}\n")


def read_highlight_labels(path) -> list[tuple[int, int, int]]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DataError(f"{path}:{ln}: expected 'event view second'")
            try:
                out.append((int(parts[0]), int(parts[1]), int(parts[2])))
            except ValueError:
                raise DataError(f"{path}:{ln}: non-integer field") from None
    return out


def highlight_training_samples(stream: np.ndarray,
                               labels: Sequence[tuple[int, int, int]]):
    """Build (pos, negs) pairs from a (T, K, D) stream and label rows."""
    samples = []
    total, k, _ = stream.shape
    for _, view, second in labels:
        if not (0 <= second < total and 0 <= view < k):
            raise ContractViolation("highlight label outside the stream")
        row = stream[second]
        negs = np.delete(row, view, axis=0)
        samples.append((row[view], negs))
    return samples
