"""Release gate: one test per numbered acceptance criterion.

Each test is self-contained apart from the module fixtures, which build a
small training corpus and fit every model exactly once.  The whole file
runs in a few minutes on a laptop CPU; `pytest -v` prints one pass/fail
line per criterion.
"""

import math

import numpy as np
import pytest

from autodirector import nn
from autodirector.cli import _random_candidates, _random_proposals
from autodirector.events import (AnchorGrid, EventInstance, EventLocalizer,
                                 LocalizerConfig, ViewBuffer, decode_anchors,
                                 encode_offsets, instance_from_proposal,
                                 iter_training_buffers, localization_loss, nms,
                                 train_localizer)
from autodirector.highlights import (HighlightScorer, detect_highlights,
                                     highlight_training_samples,
                                     multi_view_ranking_loss,
                                     train_highlight_scorer)
from autodirector.metrics import (camera_switch_accuracy, map_at_tiou,
                                  nms_bruteforce, precision_recall_f1,
                                  ranked_average_precision,
                                  selection_bruteforce, temporal_iou)
from autodirector.pipeline import Director, DirectorModels, detect_stream
from autodirector.scheduler import (ChannelFaceEmbedder, Clip,
                                    CorrelationClassifier, EventStory,
                                    ViewClassifier, ViewCountVector,
                                    drop_replay_conflicts, mean_view_feature,
                                    schedule_buffer, select_begin_end,
                                    train_correlation_classifier,
                                    train_view_classifier)
from autodirector.streamio import EdlEntry
from autodirector.synthetic import GeneratorConfig, synthesize

TRAIN_SEEDS = range(70, 76)
HELD_OUT_SEED = 7
MATCH_SECONDS = 1800.0


# ----------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def corpus():
    """Six training matches plus one held-out match, default preset."""
    train = [synthesize(GeneratorConfig(duration=MATCH_SECONDS, seed=s))
             for s in TRAIN_SEEDS]
    held_out = synthesize(GeneratorConfig(duration=MATCH_SECONDS,
                                          seed=HELD_OUT_SEED))
    return train, held_out


@pytest.fixture(scope="module")
def localizer(corpus):
    train, _ = corpus
    samples = []
    for match in train:
        samples.extend(iter_training_buffers(match.features, match.truths))
    return train_localizer(samples, LocalizerConfig(), epochs=10, lr=2e-3,
                           seed=0).model


@pytest.fixture(scope="module")
def scorer(corpus):
    train, _ = corpus
    samples = []
    for match in train:
        samples.extend(highlight_training_samples(match.features,
                                                  match.highlight_rows))
    return train_highlight_scorer(samples, in_channels=32, seed=0)[0]


def classifier_rows(match):
    """Training/eval rows for both scheduler classifiers, one match."""
    buf = ViewBuffer(match.features.transpose(1, 0, 2), 0.0)
    embed = ChannelFaceEmbedder()
    inputs, labels = [], []
    prog_faces, pooleds = {}, {}
    for event_id, view in match.view_rows:
        t = match.truths[event_id]
        inst = EventInstance(t.event_class, t.t_start, t.t_end, 1.0)
        pooled = mean_view_feature(buf, inst)
        inputs.append(np.concatenate(
            [pooled, [(t.t_end - t.t_start) / 30.0, float(inst.priority)]]))
        labels.append(view)
        face = embed(buf, view, t.t_start, t.t_end)
        prog_faces[event_id] = face if face is not None else np.zeros(8)
        pooleds[event_id] = pooled
    rows, row_labels, row_events = [], [], []
    for event_id, view, w0, w1, label in match.correlation_rows:
        cand = embed(buf, view, w0, w1)
        if cand is None:
            continue
        rows.append(np.concatenate([cand, prog_faces[event_id],
                                    pooleds[event_id]]))
        row_labels.append(label)
        row_events.append(event_id)
    return inputs, labels, rows, row_labels, row_events


@pytest.fixture(scope="module")
def broadcast_models(corpus, localizer, scorer):
    train, _ = corpus
    view_in, view_lab, cor_rows, cor_lab = [], [], [], []
    for match in train:
        inputs, labels, rows, row_labels, _ = classifier_rows(match)
        view_in.extend(inputs)
        view_lab.extend(labels)
        cor_rows.extend(rows)
        cor_lab.extend(row_labels)
    view_clf, _ = train_view_classifier(np.asarray(view_in),
                                        np.asarray(view_lab), num_views=10,
                                        seed=0)
    cor_clf, _ = train_correlation_classifier(np.asarray(cor_rows),
                                              np.asarray(cor_lab),
                                              face_dim=8, feature_dim=32,
                                              seed=0)
    return DirectorModels(localizer=localizer, highlight_scorer=scorer,
                          view_classifier=view_clf,
                          correlation_classifier=cor_clf)


def direct_match(match, models):
    director = Director(models)
    for row in match.features:
        director.push_second(row)
    return director.finish()


# ---------------------------------------------------------- criterion 1


def test_criterion_1_formula_exactness():
    # worked anchor values: first anchor of the 15-cell grid at ratio 1
    grid = AnchorGrid(0, 15)
    first = grid.anchors()[0]
    assert abs(first[0] - 0.5 / 15.0) <= 1e-6
    assert abs(first[1] - 1.0 / 15.0) <= 1e-6

    # worked decode values on an anchor at center 0.5, width 0.1
    unit = AnchorGrid(0, 1, ratios=(0.1,))
    cls = np.zeros((1, 1, 7))
    ovl = np.zeros((1, 1))
    moved = decode_anchors(unit, cls, np.ones((1, 1, 2)), ovl)[0]
    assert abs(moved.phi_c - 0.51) <= 1e-6
    assert abs(moved.phi_w - 0.1 * math.exp(0.1)) <= 1e-6

    # zero offsets leave the anchor untouched, bit for bit
    still = decode_anchors(unit, cls, np.zeros((1, 1, 2)), ovl)[0]
    assert still.phi_c == 0.5
    assert still.phi_w == 0.1

    # encode and decode are inverse maps across a real grid
    rng = np.random.default_rng(2024)
    grid = AnchorGrid(1, 8)
    anchors = grid.anchors()
    loc = np.zeros((8, 3, 2))
    targets = []
    for i, (a_c, a_w) in enumerate(anchors):
        t_c = a_c + rng.uniform(-0.5, 0.5) * a_w
        t_w = a_w * math.exp(rng.uniform(-0.5, 0.5))
        loc[i // 3, i % 3] = encode_offsets(a_c, a_w, t_c, t_w)
        targets.append((t_c, t_w))
    decoded = decode_anchors(grid, np.zeros((8, 3, 7)), loc,
                             np.zeros((8, 3)), buffer_start=100.0,
                             buffer_len=30.0)
    for p, (t_c, t_w) in zip(decoded, targets):
        assert abs(p.phi_c - t_c) <= 1e-6
        assert abs(p.phi_w - t_w) <= 1e-6
        assert abs(p.t_start - (100.0 + (t_c - t_w / 2.0) * 30.0)) <= 1e-5
        assert abs(p.t_end - (100.0 + (t_c + t_w / 2.0) * 30.0)) <= 1e-5


# ---------------------------------------------------------- criterion 2


def test_criterion_2_gradient_suite():
    tol = 1e-4

    rng = np.random.default_rng(101)
    lin = nn.LinearMap(7, 5, rng=rng, dtype=np.float64)
    x = rng.normal(size=(9, 7))
    w = rng.normal(size=(9, 5))

    def lin_loss():
        y = lin(x)
        lin.backward(x, w)
        return float((y * w).sum())

    assert nn.backward_check(lin_loss, [lin], num_points=100,
                             rng=np.random.default_rng(102)) < tol

    conv = nn.Conv1D(4, 3, 3, stride=2, padding=1, rng=rng, dtype=np.float64)
    xc = rng.normal(size=(11, 4))
    wc = rng.normal(size=(conv.output_length(11), 3))

    def conv_loss():
        y = conv(xc)
        conv.backward(xc, wc)
        return float((y * wc).sum())

    assert nn.backward_check(conv_loss, [conv], num_points=100,
                             rng=np.random.default_rng(103)) < tol

    # full multi-task localization loss through a small two-view model
    rng = np.random.default_rng(104)
    model = EventLocalizer(LocalizerConfig(in_channels=6, num_views=2,
                                           channels=6),
                           rng=rng, dtype=np.float64)
    feats = rng.normal(size=(2, 30, 6))
    truths = [(2, 0.2, 0.45), (5, 0.6, 0.75)]

    def localizer_loss():
        outputs, cache = model.forward(feats, want_cache=True)
        breakdown, grads = localization_loss(outputs, model.grids(30), truths,
                                     ignore=[(0.9, 1.0)])
        model.zero_grad()
        model.backward(cache, grads)
        return breakdown.total

    assert nn.backward_check(localizer_loss, [model], num_points=100,
                             rng=np.random.default_rng(105)) < tol

    # hinge ranking loss through the highlight scorer
    rng = np.random.default_rng(106)
    ranker = HighlightScorer(12, rng=rng, dtype=np.float64)
    clips = rng.normal(size=(6, 12))

    def hinge_loss():
        scores = ranker.score_batch(clips)
        loss, dpos, dnegs = multi_view_ranking_loss(scores[0], scores[1:])
        ranker.zero_grad()
        ranker.backward_batch(clips, np.asarray([dpos] + dnegs))
        return loss

    assert nn.backward_check(hinge_loss, [ranker], num_points=100,
                             rng=np.random.default_rng(107)) < tol

    # softmax cross-entropy through the view classifier
    rng = np.random.default_rng(108)
    view_clf = ViewClassifier(10, 4, hidden=8, rng=rng, dtype=np.float64)
    view_rows = rng.normal(size=(12, 12))
    view_labels = rng.integers(0, 4, 12)

    def view_loss():
        pre = view_clf.l1(view_rows)
        hid = nn.relu(pre)
        loss, dlogits = nn.softmax_cross_entropy(view_clf.l2(hid),
                                                 view_labels)
        view_clf.zero_grad()
        dhid = view_clf.l2.backward(hid, dlogits)
        view_clf.l1.backward(view_rows, nn.relu_backward(pre, dhid))
        return loss

    assert nn.backward_check(view_loss, [view_clf], num_points=100,
                             rng=np.random.default_rng(109)) < tol

    # binary cross-entropy through the correlation classifier
    rng = np.random.default_rng(110)
    cor_clf = CorrelationClassifier(4, 6, hidden=8, hidden2=6, rng=rng,
                                    dtype=np.float64)
    cor_rows = rng.normal(size=(14, 14))
    cor_labels = rng.integers(0, 2, 14).astype(np.float64)

    def correlation_loss():
        pre1 = cor_clf.l1(cor_rows)
        h1 = nn.relu(pre1)
        pre2 = cor_clf.l2(h1)
        h2 = nn.relu(pre2)
        p = nn.sigmoid(cor_clf.l3(h2)[:, 0])
        eps = 1e-12
        loss = float(-np.mean(cor_labels * np.log(p + eps)
                              + (1 - cor_labels) * np.log(1 - p + eps)))
        cor_clf.zero_grad()
        dh2 = cor_clf.l3.backward(h2, ((p - cor_labels)
                                       / len(cor_rows))[:, None])
        dh1 = cor_clf.l2.backward(h1, nn.relu_backward(pre2, dh2))
        cor_clf.l1.backward(cor_rows, nn.relu_backward(pre1, dh1))
        return loss

    assert nn.backward_check(correlation_loss, [cor_clf], num_points=100,
                             rng=np.random.default_rng(111)) < tol


# ---------------------------------------------------------- criterion 3


def test_criterion_3_oracle_equivalence():
    rng = np.random.default_rng(20240816)
    for _ in range(1000):
        proposals = _random_proposals(rng, int(rng.integers(1, 25)))
        threshold = float(rng.choice([0.3, 0.5, 0.7]))
        fast = nms(proposals, threshold)
        slow = [instance_from_proposal(p)
                for p in nms_bruteforce(proposals, threshold)]
        assert [(i.event_class, i.t_start, i.t_end, i.confidence)
                for i in fast] == \
            [(i.event_class, i.t_start, i.t_end, i.confidence) for i in slow]

    for _ in range(1000):
        candidates = _random_candidates(rng, 6)
        tallies = [int(v) for v in rng.integers(0, 5, 5)]
        counts = ViewCountVector(6)
        counts.counts[:] = tallies
        fast = select_begin_end(candidates, counts)
        slow = selection_bruteforce(candidates, tallies)
        assert fast[0] is slow[0] and fast[1] is slow[1]


# ---------------------------------------------------------- criterion 4


def test_criterion_4_localization_beats_its_ablation(corpus, localizer):
    _, held_out = corpus
    truths = [(t.event_class, t.t_start, t.t_end) for t in held_out.truths]

    def evaluate():
        found = detect_stream(held_out.features, localizer,
                              min_confidence=0.25, nms_iou=0.5,
                              edge_guard=2.0)
        return map_at_tiou([(i.event_class, i.t_start, i.t_end, i.confidence)
                            for i in found], truths)

    full = evaluate()
    localizer.config.use_relation = False
    try:
        ablated = evaluate()
    finally:
        localizer.config.use_relation = True
    assert full >= 0.90
    assert full >= ablated


# ---------------------------------------------------------- criterion 5


def test_criterion_5_highlight_argmax_accuracy(corpus, scorer):
    _, held_out = corpus
    buf = ViewBuffer(held_out.features.transpose(1, 0, 2), 0.0)
    hits = 0
    events = held_out.script.events
    for ev in events:
        inst = EventInstance(ev.event_class, ev.t_start, ev.t_end, 1.0)
        _, replay = detect_highlights(buf, inst, scorer)
        hits += int(replay.view == ev.highlight_view
                    and int(replay.t_start) == ev.highlight_second)
    assert hits / len(events) >= 0.95

    # worked ranking-loss example, exact
    loss, dpos, dnegs = multi_view_ranking_loss(2.0, [0.5, 1.5])
    assert loss == 0.5
    assert dpos == -1.0
    assert dnegs == [0.0, 1.0]


# ---------------------------------------------------------- criterion 6


def test_criterion_6_scheduler_classifiers(corpus, broadcast_models):
    _, held_out = corpus
    inputs, labels, rows, row_labels, row_events = classifier_rows(held_out)

    logits = broadcast_models.view_classifier.logits(
        np.asarray(inputs, dtype=np.float32))
    view_accuracy = float(np.mean(np.argmax(logits, axis=1)
                                  == np.asarray(labels)))
    assert view_accuracy >= 0.90

    scores = nn.sigmoid(broadcast_models.correlation_classifier.logit_batch(
        np.asarray(rows, dtype=np.float32)))
    row_labels = np.asarray(row_labels)
    per_event = []
    for event_id in sorted(set(row_events)):
        mask = np.asarray([e == event_id for e in row_events])
        if row_labels[mask].sum() > 0:
            per_event.append(ranked_average_precision(scores[mask],
                                                      row_labels[mask]))
    assert float(np.mean(per_event)) >= 0.90

    sweep = [precision_recall_f1(scores, row_labels, tau)
             for tau in np.arange(0.1, 0.95, 0.1)]
    assert all(pr.precision_defined for pr in sweep)
    for lo, hi in zip(sweep, sweep[1:]):
        assert hi.precision >= lo.precision - 1e-12
        assert hi.recall <= lo.recall + 1e-12


# ---------------------------------------------------------- criterion 7


def test_criterion_7_pipeline_properties(broadcast_models):
    for seed in range(300, 350):
        match = synthesize(GeneratorConfig(duration=240.0, seed=seed,
                                           noise_sigma=0.05, margin=6.0))
        result = direct_match(match, broadcast_models)
        result.edl.validate(0.0, float(match.features.shape[0]))
        for truth in match.truths:
            hits = [i for i in result.instances
                    if i.event_class == truth.event_class
                    and temporal_iou((i.t_start, i.t_end),
                                     (truth.t_start, truth.t_end)) >= 0.5]
            assert len(hits) == 1, (seed, truth.event_class, truth.t_start)
        if seed < 305:
            again = direct_match(match, broadcast_models)
            assert again.edl.entries == result.edl.entries

    # scripted: a replay that would run into the next urgent story is cut
    def story(cls, t0, t1, replay=None):
        ev = EventInstance(cls, t0, t1, 0.9)
        return EventStory(event=ev, in_progress=Clip(1, t0, t1),
                          replay=replay)

    blocked = story("shooting", 10.0, 14.0, replay=Clip(2, 12.0, 13.0))
    urgent = story("free_kick", 15.0, 18.0, replay=Clip(2, 16.0, 17.0))
    drop_replay_conflicts([blocked, urgent])
    assert blocked.replay is None and urgent.replay is not None

    clear = story("shooting", 10.0, 14.0, replay=Clip(2, 12.0, 13.0))
    distant = story("free_kick", 16.5, 19.0, replay=Clip(2, 17.0, 18.0))
    drop_replay_conflicts([clear, distant])
    assert clear.replay is not None

    # scripted: overlapping stories resolve by priority, then onset
    timeline = schedule_buffer([story("goal_kick", 12.0, 16.0),
                                story("shooting", 10.0, 14.0)], 0.0, 30.0)
    tags = {seg.tags for seg in timeline}
    assert ("in_progress", "shooting") in tags
    assert ("in_progress", "goal_kick") not in tags
    assert timeline[0].out_start == 0.0
    assert timeline[-1].out_end == 30.0
    for prev, cur in zip(timeline, timeline[1:]):
        assert cur.out_start == pytest.approx(prev.out_end)


# ---------------------------------------------------------- criterion 8


def test_criterion_8_throughput_budget(broadcast_models):
    match = synthesize(GeneratorConfig(duration=600.0, seed=42))
    result = direct_match(match, broadcast_models)
    assert len(result.timing.step_seconds) == 600
    assert result.timing.max_step < 1.0


# ---------------------------------------------------------- criterion 9


def reference_map(detections, truths, threshold):
    """Greedy-matching mAP computed from scratch for cross-checking."""
    aps = []
    for cls in sorted({t[0] for t in truths}):
        gts = [(t[1], t[2]) for t in truths if t[0] == cls]
        dets = sorted([d for d in detections if d[0] == cls],
                      key=lambda d: (-d[3], d[1], d[2]))
        if not dets:
            aps.append(0.0)
            continue
        taken = set()
        flags = []
        for d in dets:
            best, best_iou = None, threshold
            for j, g in enumerate(gts):
                if j in taken:
                    continue
                inter = min(d[2], g[1]) - max(d[1], g[0])
                union = max(d[2], g[1]) - min(d[1], g[0])
                iou = inter / union if inter > 0 else 0.0
                if iou >= best_iou:
                    best, best_iou = j, iou
            if best is None:
                flags.append(0)
            else:
                taken.add(best)
                flags.append(1)
        tp = 0
        points = []
        for rank, flag in enumerate(flags, start=1):
            tp += flag
            points.append((tp / len(gts), tp / rank))
        ap, prev_recall = 0.0, 0.0
        for recall, _ in points:
            if recall > prev_recall:
                ap += (recall - prev_recall) * max(
                    p for r, p in points if r >= recall)
                prev_recall = recall
        aps.append(ap)
    return sum(aps) / len(aps)


def test_criterion_9_metric_self_tests():
    def entry(t0, t1, view):
        return EdlEntry(t0, t1, view, t0, t1, 1.0)

    reference = [entry(0.0, 10.0, 0), entry(10.0, 12.0, 1),
                 entry(12.0, 20.0, 0), entry(20.0, 23.0, 2),
                 entry(23.0, 30.0, 0)]
    produced = [entry(0.0, 10.2, 0), entry(10.2, 14.5, 1),
                entry(14.5, 20.3, 0), entry(20.3, 23.8, 2),
                entry(23.8, 30.0, 0)]
    # switches to views 1, 2 and the final cut home are matched within
    # a second; the cut back at 12 is 2.5s late, so 3 of 4 hits
    assert camera_switch_accuracy(produced, reference) == 0.75
    assert camera_switch_accuracy(reference, reference) == 1.0

    rng = np.random.default_rng(99)
    classes = ["goal_kick", "shooting", "free_kick"]
    for _ in range(100):
        truths, detections = [], []
        for cls in classes[:int(rng.integers(1, 4))]:
            for _ in range(int(rng.integers(1, 5))):
                start = float(rng.uniform(0.0, 100.0))
                width = float(rng.uniform(1.0, 8.0))
                truths.append((cls, start, start + width))
                if rng.random() < 0.8:       # a jittered detection
                    jitter = float(rng.uniform(-2.0, 2.0))
                    detections.append((cls, start + jitter,
                                       start + width + jitter,
                                       float(rng.uniform(0.1, 1.0))))
                if rng.random() < 0.4:       # an unrelated false alarm
                    s = float(rng.uniform(0.0, 100.0))
                    detections.append((cls, s, s + float(rng.uniform(1, 6)),
                                       float(rng.uniform(0.1, 1.0))))
        got = map_at_tiou(detections, truths, threshold=0.5)
        want = reference_map(detections, truths, threshold=0.5)
        assert abs(got - want) < 1e-10
