"""Command-line interface: ``vidphase <command> [options]``.

Every command exits with status 0 on success. On failure it prints one
machine-readable line to stderr and exits with status 1::

    error: {"type": "FormatError", "message": "..."}
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio, features, flow, frameclf, motion, pipeline, synth, tcn, transition
from .config import PipelineConfig
from .evaluate import EvalReport, cumulative_svg, reports_to_csv, reports_to_json

logger = logging.getLogger("vidphase")


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["pipeline.threads"] = args.threads
    merged = dict(cfg.values)
    merged.update(overrides)
    return PipelineConfig.from_overrides(merged)


def _named_files(directory, suffixes) -> dict:
    """Map video name to file for every file in ``directory`` ending in one of ``suffixes``."""
    out = {}
    for path in sorted(Path(directory).iterdir()):
        for suffix in suffixes:
            if path.name.endswith(suffix):
                out.setdefault(path.name[: -len(suffix)], path)
                break
    return out


def _paired(feats_dir, labels_dir):
    feats = _named_files(feats_dir, [".ptns"])
    labels = _named_files(labels_dir, [".labels.csv", ".csv"])
    names = sorted(set(feats) & set(labels))
    if not names:
        raise FileNotFoundError(f"no matching <video>.ptns / <video>.labels.csv pairs in {feats_dir}, {labels_dir}")
    X = [dataio.load_tensor(feats[n]).astype(np.float64) for n in names]
    y = [dataio.load_signal(labels[n]).values.astype(np.int64) for n in names]
    return names, X, y


def _out_file(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(obj, path) -> None:
    path = _out_file(path)
    dataio.atomic_write_bytes(path, (json.dumps(obj, indent=2) + "\n").encode("utf-8"))


# ----------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg):
    sc = cfg.synth
    changes = {k: v for k, v in (("n_videos", args.videos), ("total_frames", args.frames)) if v is not None}
    sc = sc.replace(**changes)
    if args.write_flow:
        sc = sc.replace(write_flow=True)
    names = pipeline.synthesize_corpus(sc, args.out, cfg.pipeline.threads)
    print(f"wrote {len(names)} videos to {args.out}")


def cmd_flow(args, cfg):
    flows = flow.estimate_flow_sequence(args.frames, cfg.flow, cfg.pipeline.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(flows):
        dataio.store_flow(f, out / f"flow_{i:06d}.flo")
    print(f"wrote {len(flows)} flow fields to {out}")


def cmd_motion(args, cfg):
    paths = sorted(Path(args.flow).glob("*.flo"))
    if not paths:
        raise FileNotFoundError(f"no .flo files in {args.flow}")
    params = cfg.motion
    d = motion.direction_series((dataio.load_flow(p) for p in paths), params)
    dataio.store_signal(dataio.SignalSeries.from_values(d), _out_file(args.out))
    print(f"wrote {len(d)} direction values to {args.out}")


def cmd_segment(args, cfg):
    d = dataio.load_signal(args.direction).values
    s = motion.cumulative_signal(d)
    b = motion.boundary_estimate(s)
    labels = motion.weak_labels(len(s), b)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or Path(args.direction).stem
    dataio.store_signal(dataio.SignalSeries.from_values(s), out / f"{name}.cumulative.csv")
    dataio.store_signal(dataio.SignalSeries.from_values(labels.astype(np.float64)), out / f"{name}.labels.csv")
    _write_json({"boundary": b, "total_frames": len(s)}, out / f"{name}.json")
    if args.plot:
        _out_file(args.plot).write_text(cumulative_svg(s, b, title=name), encoding="utf-8")
    print(json.dumps({"boundary": b, "total_frames": len(s)}))


def cmd_featurize(args, cfg):
    feats = features.extract_video_features(dataio.load_frames(args.frames))
    dataio.store_tensor(feats.astype(np.float32), _out_file(args.out))
    print(f"wrote features of shape {feats.shape} to {args.out}")


def cmd_train_frame(args, cfg):
    names, X, y = _paired(args.feats, args.labels)
    norm = features.fit_normalizer(np.concatenate(X))
    clf = frameclf.train([norm.transform(x) for x in X], y, cfg.frameclf)
    out = Path(args.out)
    clf.model_.save(out)
    dataio.store_tensor(norm.to_tensor().astype(np.float32), out / "normalizer.ptns")
    summary = {"videos": len(names), "final_loss": clf.loss_curve_[-1] if clf.loss_curve_ else None,
               "accuracy_vs_weak_labels": clf.train_accuracy_}
    _write_json(summary, out / "train.json")
    print(json.dumps(summary))


def cmd_embed(args, cfg):
    model = frameclf.MlpModel.load(args.model)
    x = dataio.load_tensor(args.feats).astype(np.float64)
    norm_path = Path(args.model) / "normalizer.ptns"
    if norm_path.exists():
        x = features.FeatureNormalizer.from_tensor(dataio.load_tensor(norm_path)).transform(x)
    emb = frameclf.embed(model, x)
    dataio.store_tensor(emb.astype(np.float32), _out_file(args.out))
    print(f"wrote embeddings of shape {emb.shape} to {args.out}")


def cmd_train_tcn(args, cfg):
    names, X, y = _paired(args.emb, args.labels)
    tc = cfg.tcn
    tc = tcn.TcnConfig(args.stages or tc.stages, args.layers or tc.layers, tc.channels, tc.classes,
                       tc.kernel, tc.smoothing, tc.truncation, tc.learning_rate,
                       args.epochs if args.epochs is not None else tc.epochs, tc.seed)
    model = tcn.init_tcn(tc, X[0].shape[1], tc.seed)
    model, history = tcn.train_tcn(model, X, y, tc)
    model.save(args.out)
    summary = {"videos": len(names), "receptive_field": tcn.receptive_field(tc.layers, tc.kernel),
               "loss_per_epoch": history}
    _write_json(summary, Path(args.out) / "train.json")
    print(json.dumps({k: summary[k] for k in ("videos", "receptive_field")}))


def cmd_infer(args, cfg):
    model = tcn.MsTcnModel.load(args.model)
    probs = tcn.forward(model, dataio.load_tensor(args.emb).astype(np.float64))[-1]
    dataio.store_tensor(probs.astype(np.float32), _out_file(args.out))
    print(f"wrote probabilities of shape {probs.shape} to {args.out}")


def cmd_detect(args, cfg):
    fps = args.fps if args.fps is not None else cfg.eval.fps
    probs = dataio.load_tensor(args.probs).astype(np.float64)
    tr = transition.detect_transition(probs, fps)
    result = {"transition_frame": tr.frame, "transition_seconds": tr.seconds, "score": tr.score}
    if args.out:
        _write_json(result, args.out)
    print(json.dumps(result))


def cmd_eval(args, cfg):
    fps = args.fps if args.fps is not None else cfg.eval.fps
    preds = _named_files(args.pred, [".json"])
    videos = sorted(preds)
    if not videos:
        raise FileNotFoundError(f"no <video>.json transitions in {args.pred}")
    truth = pipeline.require_truth(args.corpus, videos)
    pred = [json.loads(preds[v].read_text(encoding="utf-8"))["transition_frame"] for v in videos]
    report = EvalReport(args.method, videos, pred, [truth[v] for v in videos], fps, cfg.digest()[:16], cfg.seed)
    _emit(report_dir=args.out, reports=[report])


def _emit(report_dir, reports, csv_text=None, json_text=None):
    csv_text = csv_text or reports_to_csv(reports)
    json_text = json_text or reports_to_json(reports)
    if report_dir:
        out = Path(report_dir)
        out.mkdir(parents=True, exist_ok=True)
        dataio.atomic_write_bytes(out / "report.csv", csv_text.encode("utf-8"))
        dataio.atomic_write_bytes(out / "report.json", json_text.encode("utf-8"))
    sys.stdout.write(csv_text)


def cmd_ablate(args, cfg):
    result = pipeline.run_ablation(args.corpus, cfg, args.work or cfg.pipeline.work_dir)
    sys.stdout.write(result.csv)


def cmd_pipeline(args, cfg):
    result = pipeline.run_pipeline(cfg, args.work or cfg.pipeline.work_dir)
    sys.stdout.write(result.csv)


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vidphase", description="Weakly supervised two-phase video parsing.")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--threads", type=int, help="worker threads for per-video stages")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--videos", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--write-flow", action="store_true", help="also store ideal noisy flow fields")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("flow", help="estimate optical flow between consecutive frames")
    s.add_argument("--frames", required=True, help="directory of frame_XXXXXX.pgm/.ppm")
    s.add_argument("--out", required=True, help="output directory for .flo files")
    s.set_defaults(func=cmd_flow)

    s = sub.add_parser("motion", help="motion direction signal from flow fields")
    s.add_argument("--flow", required=True, help="directory of .flo files")
    s.add_argument("--out", required=True, help="output signal CSV")
    s.set_defaults(func=cmd_motion)

    s = sub.add_parser("segment", help="cumulative signal, boundary and weak labels")
    s.add_argument("--direction", required=True, help="direction signal CSV")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--name", help="file stem (default: the direction file stem)")
    s.add_argument("--plot", help="optional SVG plot of the cumulative signal")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("featurize", help="per-frame appearance descriptors")
    s.add_argument("--frames", required=True)
    s.add_argument("--out", required=True, help="output tensor (.ptns)")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train-frame", help="train the frame classifier on weak labels")
    s.add_argument("--feats", required=True, help="directory of <video>.ptns")
    s.add_argument("--labels", required=True, help="directory of <video>.labels.csv")
    s.add_argument("--out", required=True, help="model directory")
    s.set_defaults(func=cmd_train_frame)

    s = sub.add_parser("embed", help="frame embeddings from a trained classifier")
    s.add_argument("--model", required=True)
    s.add_argument("--feats", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("train-tcn", help="train the temporal model")
    s.add_argument("--emb", required=True, help="directory of <video>.ptns")
    s.add_argument("--labels", required=True, help="directory of <video>.labels.csv")
    s.add_argument("--out", required=True)
    s.add_argument("--stages", type=int)
    s.add_argument("--layers", type=int)
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train_tcn)

    s = sub.add_parser("infer", help="final-stage phase probabilities")
    s.add_argument("--model", required=True)
    s.add_argument("--emb", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("detect", help="transition point of a probability series")
    s.add_argument("--probs", required=True)
    s.add_argument("--fps", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", help="MAE and MedAE of detected transitions")
    s.add_argument("--pred", required=True, help="directory of <video>.json transitions")
    s.add_argument("--corpus", required=True)
    s.add_argument("--method", default="d")
    s.add_argument("--fps", type=float)
    s.add_argument("--out", help="report directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="all five methods on an existing corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--work", help="work directory (default: pipeline.work_dir)")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("pipeline", help="run the full pipeline from the configuration")
    s.add_argument("--work", help="work directory (default: pipeline.work_dir)")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        args.func(args, cfg)
    except Exception as exc:  # noqa: BLE001 - top-level error reporting
        line = json.dumps({"type": type(exc).__name__, "message": str(exc)})
        print(f"error: {line}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
