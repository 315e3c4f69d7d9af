"""Command line front end.

Subcommands: generate a synthetic match, train each model, direct a
stream into an edit decision list, evaluate outputs against ground
truth, and run the suppression/selection oracle equivalence checks.

Exit codes: 0 success, 1 usage error, 2 data or runtime failure,
3 failed check.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import config as config_mod
from . import events, highlights, metrics, pipeline, scheduler, streamio
from . import synthetic
from .errors import DirectorError


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="autodirector",
                description="event-driven automatic sports broadcast director")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic match directory")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--config", help="key=value config file")
    g.add_argument("--seed", type=int, help="override generator seed")
    g.add_argument("--duration", type=float, help="override match length")
    g.add_argument("--noise-sigma", type=float, dest="noise_sigma",
                   help="override noise level")

    t = sub.add_parser("train", help="fit one model on a match directory")
    t.add_argument("target", choices=("localizer", "highlights", "views", "correlation"),
                   help="which model to train")
    t.add_argument("--data", required=True, help="match directory")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, help="override training epochs")
    t.add_argument("--lr", type=float, help="override learning rate")
    t.add_argument("--no-relation", action="store_true",
                   help="localizer only: drop the cross-view relation blocks")

    d = sub.add_parser("direct", help="turn a stream into an EDL")
    d.add_argument("--stream", required=True, help="stream file")
    d.add_argument("--models", required=True,
                   help="directory with localizer/highlights/views/"
                        "correlation .bin files")
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--config", help="key=value config file")

    e = sub.add_parser("evaluate", help="score outputs against ground truth")
    e.add_argument("--match", required=True, help="truth match directory")
    e.add_argument("--edl", required=True, help="produced EDL file")
    e.add_argument("--detections", help="produced detections file")
    e.add_argument("--reference", help="reference EDL for switch accuracy")
    e.add_argument("--out", help="write a key=value report here")

    o = sub.add_parser("oracle-check",
                       help="compare fast paths against brute-force oracles")
    o.add_argument("--trials", type=int, default=1000)
    o.add_argument("--seed", type=int, default=0)
    return p


def _load_cfg(args):
    if getattr(args, "config", None):
        return config_mod.load_config(args.config)
    return config_mod.default_config()


# ---------------------------------------------------------------- generate


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.duration is not None:
        cfg["duration"] = args.duration
    if args.noise_sigma is not None:
        cfg["noise_sigma"] = args.noise_sigma
    gen = synthetic.GeneratorConfig(
        num_views=cfg["views"], channels=cfg["channels"],
        buffer_len=cfg["window"], duration=cfg["duration"],
        seed=cfg["seed"], noise_sigma=cfg["noise_sigma"],
        margin=cfg["margin"], highlight_gain=cfg["highlight_gain"],
        events_per_minute=cfg["events_per_minute"], min_gap=cfg["min_gap"])
    match = synthetic.synthesize(gen)
    synthetic.write_match(args.out, match)
    by_class: dict[str, int] = {}
    for ev in match.script.events:
        by_class[ev.event_class] = by_class.get(ev.event_class, 0) + 1
    print(f"wrote {args.out}: {len(match.script.events)} events over "
          f"{gen.duration:.0f}s, {len(match.correlation_rows)} candidate rows")
    for name in sorted(by_class):
        print(f"  {name:<16} {by_class[name]}")
    return 0


# ------------------------------------------------------------------- train


def _write_losses(path, losses) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, loss in enumerate(losses):
            f.write(f"{i} {loss:.6f}\n")


def _match_inputs(data_dir):
    src = streamio.StreamSource(os.path.join(data_dir, "stream.sdfs"))
    return src.read_all(), src


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    parent = os.path.dirname(args.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    epochs = args.epochs if args.epochs is not None else (
        cfg["epochs"] if cfg["epochs"] > 0 else None)
    lr = args.lr if args.lr is not None else (
        cfg["lr"] if cfg["lr"] > 0 else None)
    features, _ = _match_inputs(args.data)
    total, k, dch = features.shape

    if args.target == "localizer":
        truths = events.read_annotations(os.path.join(args.data, "events.txt"))
        samples = list(events.iter_training_buffers(
            features, truths, window=cfg["window"]))
        lconf = events.LocalizerConfig(in_channels=dch, num_views=k,
                                       use_relation=not args.no_relation)
        result = events.train_localizer(
            samples, lconf, epochs=epochs if epochs else 4,
            lr=lr if lr else 2e-3, seed=args.seed)
        result.model.save(args.out)
        losses = result.losses
    elif args.target == "highlights":
        labels = highlights.read_highlight_labels(
            os.path.join(args.data, "highlights.txt"))
        samples = highlights.highlight_training_samples(features, labels)
        scorer, losses = highlights.train_highlight_scorer(
            samples, in_channels=dch, epochs=epochs if epochs else 30,
            lr=lr if lr else 5e-3, seed=args.seed)
        scorer.save(args.out)
    elif args.target == "views":
        truths = events.read_annotations(os.path.join(args.data, "events.txt"))
        view_rows = scheduler.read_view_labels(
            os.path.join(args.data, "views.txt"))
        buf = events.ViewBuffer(features.transpose(1, 0, 2), 0.0)
        horizon = float(cfg["window"])
        inputs, labels = [], []
        for event_id, view in view_rows:
            ev = truths[event_id]
            inst = events.EventInstance(ev.event_class, ev.t_start,
                                        ev.t_end, 1.0)
            pooled = scheduler.mean_view_feature(buf, inst)
            rel = (inst.t_end - inst.t_start) / horizon
            inputs.append(np.concatenate(
                [pooled, [rel, float(inst.priority)]]))
            labels.append(view)
        model, losses = scheduler.train_view_classifier(
            np.asarray(inputs), np.asarray(labels), num_views=k,
            epochs=epochs if epochs else 200, lr=lr if lr else 5e-3,
            seed=args.seed)
        model.save(args.out)
    else:   # correlation
        truths = events.read_annotations(os.path.join(args.data, "events.txt"))
        view_rows = dict(scheduler.read_view_labels(
            os.path.join(args.data, "views.txt")))
        cor_rows = scheduler.read_correlation_labels(
            os.path.join(args.data, "correlation.txt"))
        buf = events.ViewBuffer(features.transpose(1, 0, 2), 0.0)
        embed = scheduler.ChannelFaceEmbedder()
        prog_faces, pooleds = {}, {}
        for event_id, view in view_rows.items():
            ev = truths[event_id]
            inst = events.EventInstance(ev.event_class, ev.t_start,
                                        ev.t_end, 1.0)
            face = embed(buf, view, ev.t_start, ev.t_end)
            prog_faces[event_id] = face if face is not None else \
                np.zeros(embed.dim, dtype=np.float32)
            pooleds[event_id] = scheduler.mean_view_feature(buf, inst)
        rows, labels = [], []
        for event_id, view, w0, w1, label in cor_rows:
            cand = embed(buf, view, w0, w1)
            if cand is None:
                continue
            rows.append(np.concatenate([cand, prog_faces[event_id],
                                        pooleds[event_id]]))
            labels.append(label)
        model, losses = scheduler.train_correlation_classifier(
            np.asarray(rows), np.asarray(labels), face_dim=embed.dim,
            feature_dim=dch, epochs=epochs if epochs else 300,
            lr=lr if lr else 5e-3, seed=args.seed)
        model.save(args.out)

    _write_losses(args.out + ".loss.txt", losses)
    print(f"trained {args.target}: {len(losses)} loss points, "
          f"final {losses[-1]:.4f}, wrote {args.out}")
    return 0


# ------------------------------------------------------------------ direct


MODEL_FILES = {"localizer": "localizer.bin", "highlights": "highlights.bin",
               "views": "views.bin", "correlation": "correlation.bin"}


def load_models(models_dir) -> pipeline.DirectorModels:
    paths = {k: os.path.join(models_dir, v) for k, v in MODEL_FILES.items()}
    return pipeline.DirectorModels(
        localizer=events.EventLocalizer.load(paths["localizer"]),
        highlight_scorer=highlights.HighlightScorer.load(paths["highlights"]),
        view_classifier=scheduler.ViewClassifier.load(paths["views"]),
        correlation_classifier=scheduler.CorrelationClassifier.load(
            paths["correlation"]))


def cmd_direct(args) -> int:
    cfg = _load_cfg(args)
    models = load_models(args.models)
    settings = pipeline.DirectorSettings(
        window=cfg["window"], stride=cfg["stride"],
        min_confidence=cfg["min_confidence"], nms_iou=cfg["nms_iou"],
        tau=cfg["tau"], min_quality=cfg["min_quality"],
        step_budget=cfg["step_budget"])
    source = streamio.StreamSource(args.stream)
    result = pipeline.run_stream(source, models, settings)

    os.makedirs(args.out, exist_ok=True)
    streamio.write_edl(os.path.join(args.out, "edl.txt"), result.edl)
    events.write_detections(os.path.join(args.out, "detections.txt"),
                            result.instances)
    timing = result.timing
    with open(os.path.join(args.out, "timing.txt"), "w",
              encoding="utf-8") as f:
        f.write(f"steps {len(timing.step_seconds)}\n")
        f.write(f"mean_step {timing.mean_step:.6f}\n")
        f.write(f"max_step {timing.max_step:.6f}\n")
        f.write(f"budget {timing.budget:.3f}\n")
        f.write(f"violations {timing.violations}\n")
    print(f"directed {result.duration:.0f}s: {len(result.instances)} events, "
          f"{len(result.stories)} stories, {len(result.edl.entries)} EDL "
          f"entries, max step {timing.max_step * 1000:.1f}ms")
    return 0


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    truths = events.read_annotations(os.path.join(args.match, "events.txt"))
    truth_tuples = [(t.event_class, t.t_start, t.t_end) for t in truths]
    report: list[tuple[str, str]] = [("events_truth", str(len(truths)))]

    edl = streamio.read_edl(args.edl)
    entries = edl.entries
    span = (entries[0].out_start, entries[-1].out_end) if entries else (0, 0)
    edl.validate(*span)
    report.append(("edl_entries", str(len(entries))))
    report.append(("edl_span", f"{span[0]:.3f}..{span[1]:.3f}"))
    report.append(("edl_valid", "1"))

    if args.detections:
        dets = events.read_detections(args.detections)
        report.append(("events_detected", str(len(dets))))
        ap = metrics.map_at_tiou(dets, truth_tuples, threshold=0.5)
        report.append(("detection_map", f"{ap:.4f}"))

    if args.reference:
        ref = streamio.read_edl(args.reference)
        acc = metrics.camera_switch_accuracy(entries, ref.entries)
        report.append(("switch_accuracy", f"{acc:.4f}"))

    width = max(len(k) for k, _ in report)
    for key, val in report:
        print(f"{key:<{width}}  {val}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            for key, val in report:
                f.write(f"{key}={val}\n")
    return 0


# ------------------------------------------------------------ oracle-check


def _random_proposals(rng, n):
    out = []
    for i in range(n):
        start = float(rng.integers(0, 40)) * 0.5
        width = float(rng.integers(1, 9)) * 0.5
        out.append(events.EventProposal(
            a_c=0.5, a_w=0.1, delta_c=0.0, delta_w=0.0,
            phi_c=0.0, phi_w=0.0, class_scores=np.zeros(7),
            overlap_score=1.0,
            ranking_score=float(rng.integers(0, 21)) * 0.05,
            class_id=int(rng.integers(0, 7)),
            t_start=start, t_end=start + width, index=i))
    return out


def _random_candidates(rng, num_views):
    cands = []
    for kind in ("begin", "end"):
        for _ in range(int(rng.integers(0, 4))):
            w0 = float(rng.integers(0, 20))
            cands.append(scheduler.CandidateClip(
                clip=scheduler.Clip(int(rng.integers(0, num_views)),
                                    w0, w0 + 3.0),
                kind=kind, quality=1.0,
                face_feature=np.ones(8, dtype=np.float32),
                correlation_score=float(rng.integers(0, 11)) / 10.0))
    return cands


def cmd_oracle_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    for trial in range(args.trials):
        props = _random_proposals(rng, int(rng.integers(1, 25)))
        thr = float(rng.choice([0.3, 0.5, 0.7]))
        fast = events.nms(props, thr)
        slow = [events.instance_from_proposal(p)
                for p in metrics.nms_bruteforce(props, thr)]
        if [(f.event_class, f.t_start, f.t_end, f.confidence) for f in fast] \
                != [(s.event_class, s.t_start, s.t_end, s.confidence)
                    for s in slow]:
            print(f"suppression mismatch on trial {trial}", file=sys.stderr)
            return 3
    print(f"suppression: {args.trials} trials match the oracle")

    num_views = 6
    for trial in range(args.trials):
        cands = _random_candidates(rng, num_views)
        tallies = [int(v) for v in rng.integers(0, 5, num_views - 1)]
        counts = scheduler.ViewCountVector(num_views)
        counts.counts[:] = tallies
        fast = scheduler.select_begin_end(cands, counts)
        slow = metrics.selection_bruteforce(cands, tallies)
        if (fast[0] is not slow[0]) or (fast[1] is not slow[1]):
            print(f"selection mismatch on trial {trial}", file=sys.stderr)
            return 3
    print(f"selection: {args.trials} trials match the oracle")
    return 0


# -------------------------------------------------------------------- main


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"generate": cmd_generate, "train": cmd_train,
                "direct": cmd_direct, "evaluate": cmd_evaluate,
                "oracle-check": cmd_oracle_check}
    try:
        return handlers[args.command](args)
    except DirectorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
