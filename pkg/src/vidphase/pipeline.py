"""On-disk training and inference pipeline with resumable stages.

Layout of the work directory::

    corpus/video_XXX/{frames/, truth.csv, truth.json}   (when synthesized)
    motion/video_XXX.csv           per-pair motion direction
    segment/video_XXX.*            cumulative signal, boundary, weak labels
    features/video_XXX.ptns        raw descriptors
    normalize/normalizer.ptns      mean and scale, shape (2, D)
    frame_model/                   frame classifier
    embed/video_XXX.ptns           penultimate-layer embeddings
    tcn_<m>/                       temporal model of method m
    infer_<m>/video_XXX.ptns       final-stage probabilities
    detect_<m>/video_XXX.json      detected transition
    report/                        report.csv, report.json, SVG plots

Every stage directory holds a ``stage.json`` marker with a hash of the
configuration keys and upstream stages it depends on. A stage whose marker
matches is skipped; a mismatch raises :class:`StaleArtifactError`. Stages are
built in a ``.partial`` directory and renamed on completion, so an
interrupted run leaves no half-written stage behind.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import dataclass
from multiprocessing.pool import ThreadPool
from pathlib import Path

import numpy as np

from . import dataio, features, frameclf, motion, synth, tcn, transition
from .config import METHODS, PipelineConfig
from .evaluate import EvalReport, cumulative_svg, reports_to_csv, reports_to_json
from .flow import estimate_flow_sequence

logger = logging.getLogger(__name__)

TCN_METHODS = ("b", "c", "d", "e")


class StaleArtifactError(RuntimeError):
    """A stage output exists but was produced under a different configuration."""


class CorpusError(RuntimeError):
    """The corpus is missing, empty or lacks ground truth."""


def _hash(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode("utf-8")).hexdigest()


def run_stage(directory: Path, name: str, stage_hash: str, build) -> bool:
    """Run ``build(tmp_dir)`` unless a matching completed stage exists; returns True if built."""
    directory = Path(directory)
    marker = directory / "stage.json"
    if marker.exists():
        recorded = json.loads(marker.read_text(encoding="utf-8"))
        if recorded.get("hash") == stage_hash:
            logger.info("stage %s: up to date, skipped", name)
            return False
        raise StaleArtifactError(
            f"stage '{name}' in {directory} was produced with a different configuration "
            f"(hash {recorded.get('hash', '?')[:12]} != {stage_hash[:12]}); delete {directory} "
            "and its downstream stages, or use a fresh work directory, to recompute"
        )
    if directory.exists():
        shutil.rmtree(directory)
    tmp = directory.with_name(directory.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    logger.info("stage %s: building", name)
    build(tmp)
    (tmp / "stage.json").write_text(json.dumps({"stage": name, "hash": stage_hash}) + "\n", encoding="utf-8")
    tmp.rename(directory)
    return True


def parallel_map(fn, items, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPool(threads) as pool:
        return pool.map(fn, items)


# ----------------------------------------------------------------------------
# corpus


def list_videos(corpus_dir) -> list:
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise CorpusError(f"corpus directory {corpus_dir} does not exist")
    videos = sorted(p.name for p in corpus_dir.iterdir() if p.is_dir() and (p / "frames").is_dir())
    if not videos:
        raise CorpusError(f"no videos (subdirectories with frames/) in {corpus_dir}")
    return videos


def require_truth(corpus_dir, videos) -> dict:
    """Annotated transition frame per video; raises if any video lacks ground truth."""
    out = {}
    for v in videos:
        path = Path(corpus_dir) / v / "truth.json"
        if not path.exists():
            raise CorpusError(f"corpus is missing ground truth for {v} ({path})")
        out[v] = int(json.loads(path.read_text(encoding="utf-8"))["transition_frame"])
    return out


def synthesize_corpus(config: synth.SynthConfig, out_dir, threads: int = 1) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    parallel_map(lambda v: synth.write_video(config, v, out_dir), range(config.n_videos), threads)
    meta = {"generator": "vidphase.synth", "config": repr(config)}
    (out_dir / "synth.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return [synth.video_name(v) for v in range(config.n_videos)]


def _corpus_fingerprint(corpus_dir, videos) -> str:
    parts = []
    for v in videos:
        truth = Path(corpus_dir) / v / "truth.json"
        n = len(dataio.frame_paths(Path(corpus_dir) / v / "frames"))
        parts.append([v, n, truth.read_text(encoding="utf-8") if truth.exists() else ""])
    meta = Path(corpus_dir) / "synth.json"
    return _hash("corpus", parts, meta.read_text(encoding="utf-8") if meta.exists() else "")


# ----------------------------------------------------------------------------
# per-video steps, also used by the command line


def video_index(name: str) -> int:
    try:
        return int(name.rsplit("_", 1)[1])
    except (IndexError, ValueError):
        raise CorpusError(f"cannot derive a video index from {name!r}") from None


def video_direction(video_dir, cfg: PipelineConfig, synth_config: synth.SynthConfig | None = None) -> np.ndarray:
    """Motion direction per consecutive frame pair, from the configured flow source."""
    video_dir = Path(video_dir)
    source = cfg.pipeline.flow_source
    params = cfg.motion
    if source == "synth":
        if synth_config is None:
            raise CorpusError("flow source 'synth' needs a corpus generated by the synth stage")
        idx = video_index(video_dir.name)
        schedule, _ = synth.make_schedule(synth_config, idx)
        flows = synth.iter_flow_fields(schedule, synth_config, idx)
    elif source == "files":
        paths = sorted((video_dir / "flow").glob("flow_*.flo"))
        if not paths:
            raise CorpusError(f"no flow files in {video_dir / 'flow'}")
        flows = (dataio.load_flow(p) for p in paths)
    else:
        flows = estimate_flow_sequence(video_dir / "frames", cfg.flow)
    return motion.direction_series(flows, params)


def method_inputs(method: str, direction, normalized, embedding) -> np.ndarray:
    """Per-frame TCN input of a method; the direction is padded with a leading zero to T frames."""
    d = None if direction is None else np.concatenate([[0.0], np.asarray(direction, dtype=np.float64)])[:, None]
    if method == "b":
        return d
    if method == "c":
        return np.asarray(normalized, dtype=np.float64)
    if method == "d":
        return np.asarray(embedding, dtype=np.float64)
    if method == "e":
        return np.hstack([np.asarray(embedding, dtype=np.float64), d])
    raise ValueError(f"method {method!r} has no temporal model")


# ----------------------------------------------------------------------------
# orchestration


@dataclass
class PipelineResult:
    work_dir: Path
    reports: list
    csv: str
    json: str
    built: list  # stages built in this run (others were resumed)


def run_pipeline(config: PipelineConfig, work_dir=None) -> PipelineResult:
    """Run every stage needed for the configured methods and write the report."""
    p = config.pipeline
    threads = p.threads
    work = Path(work_dir if work_dir is not None else p.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    built = []

    def stage(name, h, build, directory=None):
        if run_stage(directory or work / name, name, h, build):
            built.append(name)

    # corpus
    synth_config = None
    if p.corpus_dir:
        corpus = Path(p.corpus_dir)
        videos = list_videos(corpus)
        meta = corpus / "synth.json"
        if p.flow_source == "synth":
            if not meta.exists() or json.loads(meta.read_text())["config"] != repr(config.synth):
                raise CorpusError(
                    f"{corpus} was not generated with the configured synth settings; "
                    "set pipeline.flow_source = estimate (or files) for external corpora"
                )
            synth_config = config.synth
        h_corpus = _corpus_fingerprint(corpus, videos)
    else:
        corpus = work / "corpus"
        synth_config = config.synth
        h_corpus = _hash("synth", config.digest("synth"))
        stage("corpus", h_corpus, lambda d: synthesize_corpus(synth_config, d, threads))
        videos = list_videos(corpus)
    truth = require_truth(corpus, videos)
    fps = config.eval.fps

    # motion and weak labels
    h_motion = _hash("motion", h_corpus, config.digest("motion", "flow", "pipeline.flow_source"))

    def build_motion(d):
        def one(v):
            dirn = video_direction(corpus / v, config, synth_config)
            dataio.store_signal(dataio.SignalSeries.from_values(dirn), d / f"{v}.csv")
        parallel_map(one, videos, threads)

    stage("motion", h_motion, build_motion)
    h_segment = _hash("segment", h_motion)

    def build_segment(d):
        for v in videos:
            dirn = dataio.load_signal(work / "motion" / f"{v}.csv").values
            s = motion.cumulative_signal(dirn)
            b = motion.boundary_estimate(s)
            labels = motion.weak_labels(len(s), b)
            dataio.store_signal(dataio.SignalSeries.from_values(s), d / f"{v}.cumulative.csv")
            dataio.store_signal(dataio.SignalSeries.from_values(labels.astype(np.float64)), d / f"{v}.labels.csv")
            (d / f"{v}.json").write_text(json.dumps({"boundary": b, "total_frames": len(s)}) + "\n")

    stage("segment", h_segment, build_segment)

    def labels_of(v):
        return dataio.load_signal(work / "segment" / f"{v}.labels.csv").values.astype(np.int64)

    def boundary_of(v):
        return json.loads((work / "segment" / f"{v}.json").read_text())["boundary"]

    methods = config.eval.methods
    need_features = any(m in methods for m in ("c", "d", "e"))
    need_embed = any(m in methods for m in ("d", "e"))

    # appearance
    h_features = _hash("features", h_corpus)
    h_norm = _hash("normalize", h_features)
    h_frame = _hash("frame_model", h_norm, h_segment, config.digest("frameclf"))
    h_embed = _hash("embed", h_frame)
    if need_features:
        def build_features(d):
            def one(v):
                feats = features.extract_video_features(dataio.load_frames(corpus / v / "frames"))
                dataio.store_tensor(feats.astype(np.float32), d / f"{v}.ptns")
            parallel_map(one, videos, threads)

        stage("features", h_features, build_features)

        def build_norm(d):
            allf = np.concatenate([dataio.load_tensor(work / "features" / f"{v}.ptns") for v in videos])
            norm = features.fit_normalizer(allf.astype(np.float64))
            dataio.store_tensor(norm.to_tensor().astype(np.float32), d / "normalizer.ptns")

        stage("normalize", h_norm, build_norm)
    norm = None

    def normalized_of(v):
        nonlocal norm
        if norm is None:
            norm = features.FeatureNormalizer.from_tensor(dataio.load_tensor(work / "normalize" / "normalizer.ptns"))
        return norm.transform(dataio.load_tensor(work / "features" / f"{v}.ptns").astype(np.float64))

    if need_embed:
        def build_frame(d):
            clf = frameclf.train([normalized_of(v) for v in videos], [labels_of(v) for v in videos],
                                 config.frameclf)
            clf.model_.save(d)
            summary = {"final_loss": clf.loss_curve_[-1] if clf.loss_curve_ else None,
                       "accuracy_vs_weak_labels": clf.train_accuracy_}
            (d / "train.json").write_text(json.dumps(summary) + "\n")

        stage("frame_model", h_frame, build_frame)

        def build_embed(d):
            model = frameclf.MlpModel.load(work / "frame_model")
            for v in videos:
                dataio.store_tensor(frameclf.embed(model, normalized_of(v)).astype(np.float32), d / f"{v}.ptns")

        stage("embed", h_embed, build_embed)

    def inputs_of(m, v):
        dirn = dataio.load_signal(work / "motion" / f"{v}.csv").values if m in ("b", "e") else None
        nrm = normalized_of(v) if m == "c" else None
        emb = dataio.load_tensor(work / "embed" / f"{v}.ptns") if m in ("d", "e") else None
        return method_inputs(m, dirn, nrm, emb)

    # temporal models, inference and detection per method
    upstream = {"b": [h_motion], "c": [h_norm], "d": [h_embed], "e": [h_embed, h_motion]}
    predictions = {}
    for m in methods:
        if m == "a":
            predictions[m] = [boundary_of(v) for v in videos]
            continue
        h_tcn = _hash("tcn", m, upstream[m], h_segment, config.digest("tcn"))

        def build_tcn(d, m=m):
            cfg = config.tcn
            seqs = [inputs_of(m, v) for v in videos]
            model = tcn.init_tcn(cfg, seqs[0].shape[1], cfg.seed)
            model, history = tcn.train_tcn(model, seqs, [labels_of(v) for v in videos], cfg)
            model.save(d)
            (d / "train.json").write_text(json.dumps({"loss_per_epoch": history}) + "\n")

        stage(f"tcn_{m}", h_tcn, build_tcn)
        h_infer = _hash("infer", h_tcn)

        def build_infer(d, m=m):
            model = tcn.MsTcnModel.load(work / f"tcn_{m}")

            def one(v):
                probs = tcn.forward(model, inputs_of(m, v))[-1]
                dataio.store_tensor(probs.astype(np.float32), d / f"{v}.ptns")
            parallel_map(one, videos, threads)

        stage(f"infer_{m}", h_infer, build_infer)
        h_detect = _hash("detect", h_infer, fps)

        def build_detect(d, m=m):
            for v in videos:
                probs = dataio.load_tensor(work / f"infer_{m}" / f"{v}.ptns").astype(np.float64)
                tr = transition.detect_transition(probs, fps)
                (d / f"{v}.json").write_text(json.dumps(
                    {"transition_frame": tr.frame, "transition_seconds": tr.seconds, "score": tr.score}) + "\n")

        stage(f"detect_{m}", h_detect, build_detect)
        predictions[m] = [json.loads((work / f"detect_{m}" / f"{v}.json").read_text())["transition_frame"]
                          for v in videos]

    # report, always regenerated
    config_hash = config.digest()[:16]
    reports = [EvalReport(m, videos, predictions[m], [truth[v] for v in videos], fps, config_hash, config.seed)
               for m in METHODS if m in methods]
    csv_text = reports_to_csv(reports)
    json_text = reports_to_json(reports)
    rdir = work / "report"
    rdir.mkdir(exist_ok=True)
    dataio.atomic_write_bytes(rdir / "report.csv", csv_text.encode("utf-8"))
    dataio.atomic_write_bytes(rdir / "report.json", json_text.encode("utf-8"))
    for v in videos[: config.eval.plots]:
        s = dataio.load_signal(work / "segment" / f"{v}.cumulative.csv").values
        svg = cumulative_svg(s, boundary_of(v), truth[v], title=f"{v}: cumulative motion direction")
        dataio.atomic_write_bytes(rdir / f"{v}.cumulative.svg", svg.encode("utf-8"))
    for r in reports:
        logger.info("method %s: MAE %.4f min, MedAE %.4f min", r.method, r.mae, r.medae)
    return PipelineResult(work, reports, csv_text, json_text, built)


def run_ablation(corpus_dir, config: PipelineConfig, work_dir=None) -> PipelineResult:
    """All five methods on an existing corpus, sharing one set of weak labels."""
    corpus_dir = Path(corpus_dir)
    require_truth(corpus_dir, list_videos(corpus_dir))
    cfg = config.replace(pipeline__corpus_dir=str(corpus_dir), eval__methods=METHODS)
    return run_pipeline(cfg, work_dir)
