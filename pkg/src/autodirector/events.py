"""Multi-view temporal event localization.

A shared conv stack turns each camera view's clip features into a
temporal pyramid.  At every pyramid scale each ordered view pair runs
through a cross-view relation block, the enhanced maps are channel
concatenated and reduced, and anchor heads emit class scores, center and
width offsets, and an overlap score per anchor.  Proposals decode against
the anchor grid and survive class-wise greedy suppression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn
from .errors import (ConfigurationError, ContractViolation, DataError,
                     DegenerateBatchError, DimensionError, InvalidEventError,
                     NumericError)
from .metrics import temporal_iou

EVENT_CLASSES = ("shooting", "player_falling", "goal_kick",
                 "throw_in", "corner_kick", "free_kick")
PRIORITY_ONE = frozenset({"shooting", "player_falling",
                          "corner_kick", "free_kick"})
BACKGROUND_ID = 0

# offset decode scaling for anchor center and width
ALPHA_CENTER = 0.1
ALPHA_WIDTH = 0.1


def class_id(name: str) -> int:
    try:
        return EVENT_CLASSES.index(name) + 1
    except ValueError:
        raise ConfigurationError(f"unknown event class {name!r}") from None


def priority_of(name: str) -> int:
    return 1 if name in PRIORITY_ONE else 0


# ------------------------------------------------------------------ types


@dataclass
class TruthEvent:
    event_class: str
    t_start: float
    t_end: float

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise InvalidEventError(
                f"event ends before it starts: {self.t_start}..{self.t_end}")
        class_id(self.event_class)


@dataclass
class ViewBuffer:
    """Synchronized per-view clip features, shape (views, seconds, channels)."""

    features: np.ndarray
    buffer_start_time: float = 0.0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 3:
            raise DimensionError("ViewBuffer features must be (K, T, D)")
        if self.num_views < 2:
            raise ConfigurationError("ViewBuffer needs at least two views")
        if not np.all(np.isfinite(self.features)):
            raise NumericError("ViewBuffer features must be finite")

    @property
    def num_views(self) -> int:
        return self.features.shape[0]

    @property
    def length(self) -> int:
        return self.features.shape[1]

    @property
    def channels(self) -> int:
        return self.features.shape[2]

    @property
    def end_time(self) -> float:
        return self.buffer_start_time + self.length


@dataclass
class EventInstance:
    event_class: str
    t_start: float
    t_end: float
    confidence: float
    priority: int = field(init=False)

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise InvalidEventError("instance ends before it starts")
        self.priority = priority_of(self.event_class)


@dataclass
class EventProposal:
    a_c: float
    a_w: float
    delta_c: float
    delta_w: float
    phi_c: float
    phi_w: float
    class_scores: np.ndarray
    overlap_score: float
    ranking_score: float
    class_id: int
    t_start: float
    t_end: float
    index: int


@dataclass
class AnchorGrid:
    scale_index: int
    length: int
    ratios: tuple[float, ...] = (1.0, 1.5, 2.0)

    def __post_init__(self):
        if self.length < 1:
            raise DimensionError("anchor grid needs length >= 1")
        if any(r <= 0 for r in self.ratios):
            raise ConfigurationError("anchor ratios must be positive")

    def anchors(self) -> np.ndarray:
        """(length * ratios, 2) array of normalized (center, width)."""
        out = np.empty((self.length * len(self.ratios), 2), dtype=np.float64)
        i = 0
        for t in range(self.length):
            for r in self.ratios:
                out[i, 0] = (t + 0.5) / self.length
                out[i, 1] = r / self.length
                i += 1
        return out


# ---------------------------------------------------------- relation block


class RelationBlock:
    """Cross-view attention with a residual connection.

    For views a and b the block compares embedded rows of both maps,
    normalizes the similarity by row, mixes view a's value embeddings
    with those weights and projects back onto the feature width.
    """

    def __init__(self, channels: int, embed_dim: int, *, rng,
                 dtype=nn.DEFAULT_DTYPE):
        self.channels = channels
        self.embed_dim = embed_dim
        self.theta = nn.LinearMap(channels, embed_dim, rng=rng, dtype=dtype)
        self.phi = nn.LinearMap(channels, embed_dim, rng=rng, dtype=dtype)
        self.gamma = nn.LinearMap(channels, embed_dim, rng=rng, dtype=dtype)
        self.out_proj = nn.LinearMap(embed_dim, channels, rng=rng, dtype=dtype)

    def layers(self):
        return [self.theta, self.phi, self.gamma, self.out_proj]

    def named_layers(self, prefix: str):
        return [(f"{prefix}.theta", self.theta), (f"{prefix}.phi", self.phi),
                (f"{prefix}.gamma", self.gamma),
                (f"{prefix}.out_proj", self.out_proj)]

    def forward_stack(self, fa: np.ndarray, fb: np.ndarray):
        """Batched forward over stacked pairs, shapes (P, L, C)."""
        qa = self.theta(fa)
        kb = self.phi(fb)
        ga = self.gamma(fa)
        sim = qa @ kb.transpose(0, 2, 1)
        attn = nn.row_softmax(sim)
        mixed = attn @ ga
        out = fa + self.out_proj(mixed)
        return out, (fa, fb, qa, kb, ga, attn, mixed)

    def backward_stack(self, cache, grad_out: np.ndarray):
        fa, fb, qa, kb, ga, attn, mixed = cache
        dfa = grad_out.copy()
        dmixed = self.out_proj.backward(mixed, grad_out)
        dattn = dmixed @ ga.transpose(0, 2, 1)
        dga = attn.transpose(0, 2, 1) @ dmixed
        dsim = nn.row_softmax_backward(attn, dattn)
        dqa = dsim @ kb
        dkb = dsim.transpose(0, 2, 1) @ qa
        dfa += self.theta.backward(fa, dqa)
        dfa += self.gamma.backward(fa, dga)
        dfb = self.phi.backward(fb, dkb)
        return dfa, dfb


def mr_block_forward(fa: np.ndarray, fb: np.ndarray,
                     block: RelationBlock) -> np.ndarray:
    """Single-pair relation block spelled out with the kernel primitives."""
    sim = nn.dot_similarity(fa, fb, block.theta, block.phi)
    attn = nn.row_softmax(sim)
    mixed = nn.attend(attn, fa, block.gamma)
    return fa + block.out_proj(mixed)


# ------------------------------------------------------------- localizer


@dataclass
class LocalizerConfig:
    in_channels: int = 32
    num_views: int = 10
    channels: int = 32
    kernel: int = 3
    strides: tuple[int, ...] = (1, 1, 2, 1, 2, 1, 2, 1)
    anchor_taps: tuple[int, ...] = (2, 4, 6)  # zero-based layer indices
    ratios: tuple[float, ...] = (1.0, 1.5, 2.0)
    num_classes: int = len(EVENT_CLASSES)
    use_relation: bool = True

    @property
    def embed_dim(self) -> int:
        # half the feature width, rounded up
        return (self.channels + 1) // 2

    def __post_init__(self):
        if self.num_views < 2:
            raise ConfigurationError("localizer needs at least two views")
        if any(t >= len(self.strides) for t in self.anchor_taps):
            raise ConfigurationError("anchor tap beyond conv stack depth")


class EventLocalizer:
    """Conv pyramid with relation blocks and per-anchor detection heads."""

    def __init__(self, config: LocalizerConfig, *, rng=None,
                 dtype=nn.DEFAULT_DTYPE):
        if rng is None:
            rng = np.random.default_rng(0)
        self.config = config
        c = config.channels
        self.convs = []
        prev = config.in_channels
        for stride in config.strides:
            self.convs.append(nn.Conv1D(prev, c, config.kernel, stride=stride,
                                        padding=1, rng=rng, dtype=dtype))
            prev = c
        pair_count = config.num_views * (config.num_views - 1)
        self.blocks = [RelationBlock(c, config.embed_dim, rng=rng, dtype=dtype)
                       for _ in config.anchor_taps]
        self.reducers = [nn.Conv1D(pair_count * c, c, 1, rng=rng, dtype=dtype)
                         for _ in config.anchor_taps]
        r = len(config.ratios)
        ncls = config.num_classes + 1
        self.head_cls = nn.Conv1D(c, r * ncls, config.kernel, padding=1,
                                  rng=rng, scale=0.01, dtype=dtype)
        self.head_loc = nn.Conv1D(c, r * 2, config.kernel, padding=1,
                                  dtype=dtype)
        self.head_ovl = nn.Conv1D(c, r, config.kernel, padding=1,
                                  rng=rng, scale=0.01, dtype=dtype)
        # favor background before any training so fresh models stay quiet
        bias = self.head_cls.bias.reshape(r, ncls)
        bias[:, 0] = 3.0

    # -- bookkeeping

    def named_layers(self):
        out = [(f"conv{i}", l) for i, l in enumerate(self.convs)]
        for s, (block, reducer) in enumerate(zip(self.blocks, self.reducers)):
            out.extend(block.named_layers(f"block{s}"))
            out.append((f"reducer{s}", reducer))
        out.extend([("head_cls", self.head_cls), ("head_loc", self.head_loc),
                    ("head_ovl", self.head_ovl)])
        return out

    def layers(self):
        return [layer for _, layer in self.named_layers()]

    def parameters(self):
        return nn.collect_parameters(self.named_layers())

    def zero_grad(self):
        nn.zero_gradients(self.layers())

    def scale_lengths(self, length: int) -> list[int]:
        lens, cur = [], length
        for i, conv in enumerate(self.convs):
            cur = conv.output_length(cur)
            if i in self.config.anchor_taps:
                lens.append(cur)
        return lens

    def grids(self, length: int) -> list[AnchorGrid]:
        return [AnchorGrid(s, n, self.config.ratios)
                for s, n in enumerate(self.scale_lengths(length))]

    # -- forward / backward

    def forward(self, features: np.ndarray, *, want_cache: bool = False):
        cfg = self.config
        k, length, d = features.shape
        if k != cfg.num_views:
            raise DimensionError(
                f"model built for {cfg.num_views} views, buffer has {k}")
        if d != cfg.in_channels:
            raise DimensionError(
                f"model built for {cfg.in_channels} channels, buffer has {d}")
        pairs = [(a, b) for a in range(k) for b in range(k) if a != b]

        view_cache = []   # per view: list of (x_in, preact)
        taps = [[] for _ in cfg.anchor_taps]
        for v in range(k):
            x = features[v]
            steps = []
            for i, conv in enumerate(self.convs):
                pre = conv.forward(x)
                steps.append((x, pre))
                x = nn.relu(pre)
                if i in cfg.anchor_taps:
                    taps[cfg.anchor_taps.index(i)].append(x)
            view_cache.append(steps)

        outputs, scale_cache = [], []
        r = len(cfg.ratios)
        ncls = cfg.num_classes + 1
        for s in range(len(cfg.anchor_taps)):
            maps = taps[s]
            fa = np.stack([maps[a] for a, _ in pairs])
            fb = np.stack([maps[b] for _, b in pairs])
            if cfg.use_relation:
                enhanced, block_cache = self.blocks[s].forward_stack(fa, fb)
            else:
                enhanced, block_cache = fa, None
            l = enhanced.shape[1]
            concat = enhanced.transpose(1, 0, 2).reshape(l, -1)
            red_pre = self.reducers[s].forward(concat)
            reduced = nn.relu(red_pre)
            cls = self.head_cls.forward(reduced).reshape(l, r, ncls)
            loc = self.head_loc.forward(reduced).reshape(l, r, 2)
            ovl = self.head_ovl.forward(reduced).reshape(l, r)
            outputs.append((cls, loc, ovl))
            if want_cache:
                scale_cache.append((fa, fb, block_cache, concat,
                                    red_pre, reduced))
        if want_cache:
            return outputs, (view_cache, scale_cache, pairs)
        return outputs

    def backward(self, cache, grads) -> None:
        """Accumulate parameter gradients from per-scale head gradients."""
        cfg = self.config
        view_cache, scale_cache, pairs = cache
        k = len(view_cache)
        tap_grads: dict[int, list[Optional[np.ndarray]]] = {
            t: [None] * k for t in cfg.anchor_taps}

        for s in range(len(cfg.anchor_taps) - 1, -1, -1):
            dcls, dloc, dovl = grads[s]
            fa, fb, block_cache, concat, red_pre, reduced = scale_cache[s]
            l = reduced.shape[0]
            dreduced = self.head_cls.backward(reduced, dcls.reshape(l, -1))
            dreduced += self.head_loc.backward(reduced, dloc.reshape(l, -1))
            dreduced += self.head_ovl.backward(reduced, dovl.reshape(l, -1))
            dred_pre = nn.relu_backward(red_pre, dreduced)
            dconcat = self.reducers[s].backward(concat, dred_pre)
            denh = dconcat.reshape(l, len(pairs), cfg.channels).transpose(1, 0, 2)
            if cfg.use_relation:
                dfa, dfb = self.blocks[s].backward_stack(block_cache, denh)
            else:
                dfa, dfb = denh, None
            tap = cfg.anchor_taps[s]
            sink = tap_grads[tap]
            for pi, (a, b) in enumerate(pairs):
                sink[a] = dfa[pi] if sink[a] is None else sink[a] + dfa[pi]
                if dfb is not None:
                    sink[b] = dfb[pi] if sink[b] is None else sink[b] + dfb[pi]

        for v in range(k):
            flow = None
            for i in range(len(self.convs) - 1, -1, -1):
                x_in, pre = view_cache[v][i]
                grad_post = flow
                if i in cfg.anchor_taps:
                    tg = tap_grads[i][v]
                    if tg is not None:
                        grad_post = tg if grad_post is None else grad_post + tg
                if grad_post is None:
                    flow = None
                    continue
                dpre = nn.relu_backward(pre, grad_post)
                flow = self.convs[i].backward(x_in, dpre)

    # -- persistence

    def state(self):
        cfg = self.config
        meta = [cfg.in_channels, cfg.num_views, cfg.channels, cfg.kernel,
                cfg.num_classes, 1.0 if cfg.use_relation else 0.0,
                len(cfg.strides), *cfg.strides,
                len(cfg.anchor_taps), *cfg.anchor_taps,
                len(cfg.ratios), *cfg.ratios]
        entries = [("meta", np.asarray(meta, dtype=np.float32))]
        for prefix, layer in self.named_layers():
            for name, value, _ in layer.parameters():
                entries.append((f"{prefix}.{name}", value))
        return entries

    def save(self, path) -> None:
        nn.save_parameters(path, self.state())

    @classmethod
    def load(cls, path) -> "EventLocalizer":
        loaded = nn.load_parameters(path)
        if "meta" not in loaded:
            raise DataError(f"{path}: missing localizer metadata")
        meta = [float(v) for v in loaded["meta"]]
        pos = 0

        def take(n=1):
            nonlocal pos
            vals = meta[pos:pos + n]
            pos += n
            return vals

        in_ch, views, channels, kernel, ncls, use_rel = take(6)
        (ns,) = take(1)
        strides = tuple(int(v) for v in take(int(ns)))
        (nt,) = take(1)
        taps = tuple(int(v) for v in take(int(nt)))
        (nr,) = take(1)
        ratios = tuple(take(int(nr)))
        cfg = LocalizerConfig(in_channels=int(in_ch), num_views=int(views),
                              channels=int(channels), kernel=int(kernel),
                              strides=strides, anchor_taps=taps,
                              ratios=ratios, num_classes=int(ncls),
                              use_relation=use_rel > 0.5)
        model = cls(cfg, rng=np.random.default_rng(0))
        for prefix, layer in model.named_layers():
            for name, value, _ in layer.parameters():
                key = f"{prefix}.{name}"
                if key not in loaded:
                    raise DataError(f"{path}: missing parameter {key}")
                if loaded[key].shape != value.shape:
                    raise DataError(f"{path}: shape mismatch for {key}")
                value[...] = loaded[key]
        return model


def build_pyramid(buf: ViewBuffer, model: EventLocalizer) -> list[np.ndarray]:
    """Per-scale holistic maps after cross-view fusion and reduction."""
    outputs, cache = model.forward(buf.features, want_cache=True)
    return [reduced for *_, reduced in cache[1]]


# ------------------------------------------------------ decode / suppress


def decode_anchors(grid: AnchorGrid, cls_logits: np.ndarray,
                   offsets: np.ndarray, overlap_logits: np.ndarray, *,
                   buffer_start: float = 0.0, buffer_len: float = 1.0,
                   base_index: int = 0) -> list[EventProposal]:
    """Turn head outputs on one scale into scored proposals.

    phi_c = a_c + 0.1 * a_w * delta_c, phi_w = a_w * exp(0.1 * delta_w);
    the ranking score is the top class probability times the overlap
    score.  Emitted times are absolute seconds.
    """
    anchors = grid.anchors()
    n = anchors.shape[0]
    cls = np.asarray(cls_logits, dtype=np.float64).reshape(n, -1)
    loc = np.asarray(offsets, dtype=np.float64).reshape(n, 2)
    ovl = np.asarray(overlap_logits, dtype=np.float64).reshape(n)
    if not (np.all(np.isfinite(cls)) and np.all(np.isfinite(loc))
            and np.all(np.isfinite(ovl))):
        raise NumericError("non-finite head outputs")
    scores = nn.softmax(cls, axis=1)
    ovl_prob = nn.sigmoid(ovl)
    phi_c = anchors[:, 0] + ALPHA_CENTER * anchors[:, 1] * loc[:, 0]
    phi_w = anchors[:, 1] * np.exp(ALPHA_WIDTH * loc[:, 1])
    if not np.all(np.isfinite(phi_w)):
        raise NumericError("width decode overflow")
    top = scores.max(axis=1)
    cls_id = scores.argmax(axis=1)
    ranked = top * ovl_prob
    out = []
    for i in range(n):
        start = buffer_start + (phi_c[i] - phi_w[i] / 2.0) * buffer_len
        end = buffer_start + (phi_c[i] + phi_w[i] / 2.0) * buffer_len
        out.append(EventProposal(
            a_c=float(anchors[i, 0]), a_w=float(anchors[i, 1]),
            delta_c=float(loc[i, 0]), delta_w=float(loc[i, 1]),
            phi_c=float(phi_c[i]), phi_w=float(phi_w[i]),
            class_scores=scores[i], overlap_score=float(ovl_prob[i]),
            ranking_score=float(ranked[i]), class_id=int(cls_id[i]),
            t_start=float(start), t_end=float(end), index=base_index + i))
    return out


def encode_offsets(a_c: float, a_w: float, target_c: float,
                   target_w: float) -> tuple[float, float]:
    """Inverse of the anchor decode for regression targets."""
    if a_w <= 0 or target_w <= 0:
        raise ContractViolation("widths must be positive to encode")
    dc = (target_c - a_c) / (ALPHA_CENTER * a_w)
    dw = math.log(target_w / a_w) / ALPHA_WIDTH
    return dc, dw


def instance_from_proposal(p: EventProposal) -> EventInstance:
    return EventInstance(event_class=EVENT_CLASSES[p.class_id - 1],
                         t_start=p.t_start, t_end=p.t_end,
                         confidence=p.ranking_score)


def nms(proposals: Sequence[EventProposal],
        iou_threshold: float) -> list[EventInstance]:
    """Class-wise greedy suppression over ranked proposals.

    Background proposals are dropped first.  Ties in the ranking score
    fall back to earlier start, then lower proposal index.
    """
    order = sorted((p for p in proposals if p.class_id != BACKGROUND_ID),
                   key=lambda p: (-p.ranking_score, p.t_start, p.index))
    kept: list[EventProposal] = []
    for p in order:
        ok = True
        for q in kept:
            if q.class_id != p.class_id:
                continue
            if temporal_iou((p.t_start, p.t_end),
                            (q.t_start, q.t_end)) >= iou_threshold:
                ok = False
                break
        if ok:
            kept.append(p)
    return [instance_from_proposal(p) for p in kept]


# ------------------------------------------------------------------ loss


def _anchor_iou(anchors: np.ndarray, truths: np.ndarray) -> np.ndarray:
    """IoU matrix between (N, 2) center/width anchors and (M, 2) intervals."""
    a0 = anchors[:, 0] - anchors[:, 1] / 2.0
    a1 = anchors[:, 0] + anchors[:, 1] / 2.0
    inter = (np.minimum(a1[:, None], truths[None, :, 1])
             - np.maximum(a0[:, None], truths[None, :, 0]))
    inter = np.maximum(inter, 0.0)
    union = (a1 - a0)[:, None] + (truths[:, 1] - truths[:, 0])[None, :] - inter
    return inter / np.maximum(union, 1e-12)


@dataclass
class LossBreakdown:
    total: float
    classification: float
    localization: float
    overlap: float
    num_positive: int
    num_negative: int


def localization_loss(scale_outputs, grids: Sequence[AnchorGrid], truths,
              *, ignore=(), iou_positive: float = 0.5, neg_ratio: int = 3,
              lambda_loc: float = 1.0, lambda_ovl: float = 1.0):
    """Multi-task anchor loss; returns (breakdown, per-scale gradients).

    ``truths`` is a sequence of (class_id, start, end) with times
    normalized to [0, 1]; ``ignore`` intervals exclude anchors from the
    negative pool.  Anchors are positive when IoU with some truth
    reaches ``iou_positive``; negatives are the hardest background
    anchors at ``neg_ratio`` per positive.
    """
    anchors = np.concatenate([g.anchors() for g in grids], axis=0)
    shapes = [(o[0].shape, o[1].shape, o[2].shape) for o in scale_outputs]
    counts = [g.length * len(g.ratios) for g in grids]
    cls_all = np.concatenate(
        [np.asarray(o[0], np.float64).reshape(c, -1)
         for o, c in zip(scale_outputs, counts)])
    loc_all = np.concatenate(
        [np.asarray(o[1], np.float64).reshape(c, 2)
         for o, c in zip(scale_outputs, counts)])
    ovl_all = np.concatenate(
        [np.asarray(o[2], np.float64).reshape(c)
         for o, c in zip(scale_outputs, counts)])
    n = anchors.shape[0]

    truth_arr = np.array([(t[1], t[2]) for t in truths], dtype=np.float64)
    truth_cls = np.array([t[0] for t in truths], dtype=np.intp)
    if len(truths) == 0:
        raise DegenerateBatchError("no truth events overlap this buffer")
    iou = _anchor_iou(anchors, truth_arr)
    best_iou = iou.max(axis=1)
    best_truth = iou.argmax(axis=1)
    positive = best_iou >= iou_positive
    npos = int(positive.sum())
    if npos == 0:
        raise DegenerateBatchError("no anchors matched any truth event")

    eligible = ~positive
    if len(ignore):
        ign = np.array([(g[0], g[1]) for g in ignore], dtype=np.float64)
        ign_iou = _anchor_iou(anchors, ign).max(axis=1)
        eligible &= ign_iou < 0.3

    # hard negatives ranked by background cross-entropy
    shifted = cls_all - cls_all.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    bg_loss = logz - shifted[:, 0]
    neg_idx = np.flatnonzero(eligible)
    take = min(len(neg_idx), neg_ratio * npos)
    if take:
        hardest = np.argsort(-bg_loss[neg_idx], kind="stable")[:take]
        neg_idx = neg_idx[hardest]
    else:
        neg_idx = neg_idx[:0]

    pos_idx = np.flatnonzero(positive)
    sample_idx = np.concatenate([pos_idx, neg_idx])
    targets = np.zeros(len(sample_idx), dtype=np.intp)
    targets[:npos] = truth_cls[best_truth[pos_idx]]

    ce, dce = nn.softmax_cross_entropy(cls_all[sample_idx], targets)
    grad_cls = np.zeros_like(cls_all)
    grad_cls[sample_idx] = dce

    # localization targets on positives
    tc = (truth_arr[:, 0] + truth_arr[:, 1]) / 2.0
    tw = truth_arr[:, 1] - truth_arr[:, 0]
    ac, aw = anchors[pos_idx, 0], anchors[pos_idx, 1]
    mt = best_truth[pos_idx]
    enc = np.stack([(tc[mt] - ac) / (ALPHA_CENTER * aw),
                    np.log(tw[mt] / aw) / ALPHA_WIDTH], axis=1)
    loc_loss, dloc = nn.smooth_l1(loc_all[pos_idx], enc)
    grad_loc = np.zeros_like(loc_all)
    grad_loc[pos_idx] = lambda_loc * dloc

    # overlap regression on the sampled anchors
    ovl_prob = nn.sigmoid(ovl_all[sample_idx])
    diff = ovl_prob - best_iou[sample_idx]
    ovl_loss = float(np.mean(diff * diff))
    dovl = 2.0 * diff * ovl_prob * (1.0 - ovl_prob) / len(sample_idx)
    grad_ovl = np.zeros_like(ovl_all)
    grad_ovl[sample_idx] = lambda_ovl * dovl

    total = ce + lambda_loc * loc_loss + lambda_ovl * ovl_loss
    breakdown = LossBreakdown(total=float(total), classification=float(ce),
                              localization=float(loc_loss),
                              overlap=float(ovl_loss),
                              num_positive=npos, num_negative=len(neg_idx))

    grads, at = [], 0
    for (cshape, lshape, oshape), c in zip(shapes, counts):
        grads.append((grad_cls[at:at + c].reshape(cshape),
                      grad_loc[at:at + c].reshape(lshape),
                      grad_ovl[at:at + c].reshape(oshape)))
        at += c
    return breakdown, grads


# -------------------------------------------------------------- training


def buffer_truths(truths: Sequence[TruthEvent], start: float, length: float,
                  *, min_visible: float = 0.7):
    """Clip truths to a window; returns (trainable, ignored) normalized rows.

    Events mostly outside the window are ignored rather than treated as
    background so partially visible activity never counts as negative.
    """
    keep, ignored = [], []
    for ev in truths:
        lo = max(ev.t_start, start)
        hi = min(ev.t_end, start + length)
        if hi <= lo:
            continue
        frac = (hi - lo) / (ev.t_end - ev.t_start)
        row = ((lo - start) / length, (hi - start) / length)
        if frac >= min_visible:
            keep.append((class_id(ev.event_class), row[0], row[1]))
        else:
            ignored.append(row)
    return keep, ignored


def iter_training_buffers(stream: np.ndarray, truths: Sequence[TruthEvent],
                          *, window: int = 30, stride: int = 5,
                          min_visible: float = 0.7):
    """Slice a (T, K, D) stream into training buffers with labels."""
    total = stream.shape[0]
    for start in range(0, total - window + 1, stride):
        buf = ViewBuffer(stream[start:start + window].transpose(1, 0, 2),
                         buffer_start_time=float(start))
        keep, ignored = buffer_truths(truths, float(start), float(window),
                                      min_visible=min_visible)
        if keep:
            yield buf, keep, ignored


@dataclass
class TrainResult:
    model: EventLocalizer
    losses: list[float]


def train_localizer(samples, config: LocalizerConfig, *, epochs: int = 4,
                    lr: float = 2e-3, seed: int = 0) -> TrainResult:
    """Fit a localizer on (buffer, truths, ignored) samples with Adam."""
    samples = list(samples)
    if not samples:
        raise DegenerateBatchError("no training buffers with visible events")
    rng = np.random.default_rng(seed)
    model = EventLocalizer(config, rng=rng)
    opt = nn.Adam([(v, g) for _, v, g in model.parameters()], lr=lr)
    losses: list[float] = []
    order = np.arange(len(samples))
    for _ in range(epochs):
        rng.shuffle(order)
        for i in order:
            buf, truths, ignored = samples[i]
            outputs, cache = model.forward(buf.features, want_cache=True)
            try:
                breakdown, grads = localization_loss(outputs, model.grids(buf.length),
                                             truths, ignore=ignored)
            except DegenerateBatchError:
                continue
            model.zero_grad()
            model.backward(cache, grads)
            opt.step()
            losses.append(breakdown.total)
    return TrainResult(model=model, losses=losses)


# -------------------------------------------------------------- inference


def detect_events(buf: ViewBuffer, model: EventLocalizer, *,
                  min_confidence: float = 0.05,
                  nms_iou: float = 0.5,
                  left_guard: float = 0.0,
                  right_guard: float = 0.0) -> list[EventInstance]:
    """Run the localizer on one buffer and return suppressed instances.

    Instance times are absolute.  An event straddling a buffer edge is
    only partially visible, and the model was never trained on such
    fragments, so detections within a guard band of an edge are
    dropped; a sliding window meets every whole event far from its
    edges.  Callers set a guard to zero where the buffer edge is a true
    stream boundary rather than a window cut.
    """
    outputs = model.forward(buf.features)
    grids = model.grids(buf.length)
    proposals: list[EventProposal] = []
    base = 0
    for grid, (cls, loc, ovl) in zip(grids, outputs):
        decoded = decode_anchors(grid, cls, loc, ovl,
                                 buffer_start=buf.buffer_start_time,
                                 buffer_len=float(buf.length),
                                 base_index=base)
        base += len(decoded)
        proposals.extend(p for p in decoded
                         if p.ranking_score >= min_confidence)
    instances = nms(proposals, nms_iou)
    kept = []
    for inst in instances:
        # a zero guard marks a true stream boundary: overhang is clipped
        # into the stream there instead of discarded
        if left_guard > 0 and \
                inst.t_start < buf.buffer_start_time + left_guard - 1e-9:
            continue
        if right_guard > 0 and \
                inst.t_end > buf.end_time - right_guard + 1e-9:
            continue
        lo = max(inst.t_start, buf.buffer_start_time)
        hi = min(inst.t_end, buf.end_time)
        if hi - lo <= 1e-9:
            continue
        inst.t_start, inst.t_end = lo, hi
        kept.append(inst)
    kept.sort(key=lambda e: (e.t_start, e.t_end, e.event_class))
    return kept


# ------------------------------------------------------------------ files


def collapse_instances(instances: Sequence[EventInstance],
                       iou_threshold: float = 0.5) -> list[EventInstance]:
    """Greedy same-class suppression over already-merged instances.

    Incremental merging is append-only, so two records of one event can
    drift into overlap after both were admitted.  This pass keeps the
    higher-confidence record of any same-class pair overlapping at or
    above the threshold.  Ties prefer the earlier start.
    """
    order = sorted(instances,
                   key=lambda e: (-e.confidence, e.t_start, e.t_end))
    kept: list[EventInstance] = []
    for inst in order:
        duplicate = False
        for other in kept:
            if other.event_class != inst.event_class:
                continue
            if temporal_iou((inst.t_start, inst.t_end),
                            (other.t_start, other.t_end)) >= iou_threshold:
                duplicate = True
                break
        if not duplicate:
            kept.append(inst)
    kept.sort(key=lambda e: (e.t_start, e.t_end, e.event_class))
    return kept


def write_detections(path, instances: Sequence[EventInstance]) -> None:
    """Detected instances with confidence, one per line."""
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(f"{inst.event_class} {inst.t_start:.3f} "
                    f"{inst.t_end:.3f} {inst.confidence:.6f}\n")


def read_detections(path) -> list[tuple[str, float, float, float]]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataError(
                    f"{path}:{ln}: expected 'class start end confidence'")
            try:
                out.append((parts[0], float(parts[1]), float(parts[2]),
                            float(parts[3])))
            except ValueError:
                raise DataError(f"{path}:{ln}: malformed field") from None
    return out


def write_annotations(path, events: Sequence[TruthEvent]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ev in events:
            f.write(f"{ev.event_class} {ev.t_start:.3f} {ev.t_end:.3f}\n")


def read_annotations(path) -> list[TruthEvent]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DataError(f"{path}:{ln}: expected 'class start end'")
            try:
                ev = TruthEvent(parts[0], float(parts[1]), float(parts[2]))
            except (ValueError, InvalidEventError, ConfigurationError) as e:
                raise DataError(f"{path}:{ln}: {e}") from None
            out.append(ev)
    return out
