"""Run the curation stages over a source list and keep the manifest current.

One source is one unit of work: it is probed, decoded once for the motion
trace, split into spans, and every span is classified, sampled, scored,
filtered and optionally captioned. Workers return records; the parent
process writes them in source order, so the manifest does not depend on
the number of workers.
"""
from __future__ import annotations

import logging
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional

from . import __version__
from .camera_motion import ClassifierClient, MotionLabel, classify_clip, classify_remote
from .captions import CaptionClient, CaptionConfig, load_vocabulary, request_caption, validate_caption
from .config import PipelineConfig
from .manifest import (IOFailure, existing_clip_ids, make_clip_id, new_record,
                       repair_tail, write_records)
from .media import DecoderCommand, MediaError, open_stream, probe, read_frames, read_source_list
from .quality import Decision, Reason, ScorerClient, decide, score_builtin, score_remote
from .sampler import InsufficientFrames, plan_samples, sample_indices, subsample
from .segmenter import ClipSpan, MotionTrace, TooFewFrames, build_trace, extract_spans
from .services import ServiceError

log = logging.getLogger(__name__)


class SinkFailure(Exception):
    pass


@dataclass
class SourceResult:
    source_id: str
    records: list = field(default_factory=list)
    clips_found: int = 0
    skipped: int = 0
    error: Optional[str] = None
    seconds: float = 0.0


@dataclass
class RunReport:
    sources: int = 0
    sources_failed: int = 0
    clips_found: int = 0
    skipped_existing: int = 0
    written: int = 0
    kept: int = 0
    dropped_by_reason: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    interrupted: bool = False
    seconds: float = 0.0

    @property
    def clips_per_source_avg(self) -> float:
        return self.clips_found / self.sources if self.sources else 0.0

    def to_dict(self) -> dict:
        return {
            "sources": self.sources,
            "sources_failed": self.sources_failed,
            "clips_found": self.clips_found,
            "clips_per_source_avg": round(self.clips_per_source_avg, 6),
            "skipped_existing": self.skipped_existing,
            "written": self.written,
            "kept": self.kept,
            "dropped_by_reason": dict(sorted(self.dropped_by_reason.items())),
            "errors": dict(self.errors),
            "interrupted": self.interrupted,
            "seconds": round(self.seconds, 3),
        }


class _Clients:
    """Service clients built from the config, one set per process."""

    def __init__(self, cfg: PipelineConfig):
        c = cfg.classifier_service
        self.classifier = ClassifierClient(c.url, timeout_s=c.timeout_s, attempts=c.attempts,
                                           fallback=c.fallback, rps_limit=c.rps_limit) if c.url else None
        s = cfg.scoring
        self.scorer = ScorerClient(s.url, timeout_s=s.timeout_s, attempts=s.attempts,
                                   fallback=s.fallback, rps_limit=s.rps_limit) if s.url else None
        k = cfg.caption
        self.captioner = CaptionClient(k.url, timeout_s=k.timeout_s, attempts=k.attempts,
                                       rps_limit=k.rps_limit) if k.url else None


_CLIENTS: dict = {}


def _clients(cfg: PipelineConfig) -> _Clients:
    key = (cfg.classifier_service, cfg.scoring, cfg.caption)
    if key not in _CLIENTS:
        _CLIENTS[key] = _Clients(cfg)
    return _CLIENTS[key]


def _decoder(cfg: PipelineConfig) -> Optional[DecoderCommand]:
    return DecoderCommand(cfg.media.decoder_cmd, cfg.media.decoder_fmt) if cfg.media.decoder_cmd else None


def source_trace(source: str, cfg: PipelineConfig):
    decoder = _decoder(cfg)
    meta = probe(source, decoder=decoder)
    stream = open_stream(meta, cfg.media.target_height, decoder=decoder)
    trace = build_trace(stream, cfg.flow, queue_size=cfg.media.queue_size)
    return meta, trace


def _span_frames(span: ClipSpan, plan, k: int) -> list[int]:
    """Absolute frame indices used for scoring/captioning: ``k`` of the MAG
    sample frames, or a uniform pick over the span when there is no plan."""
    if plan is not None:
        rel = subsample(plan.indices, k)
    else:
        rel = sample_indices(span.n_frames, min(k, span.n_frames), 0.0)
    return [span.start_frame + i for i in rel]


def process_source(source: str, cfg: PipelineConfig, skip_ids: frozenset = frozenset()) -> SourceResult:
    t0 = time.perf_counter()
    res = SourceResult(source)
    try:
        meta, trace = source_trace(source, cfg)
        spans = extract_spans(trace, cfg.segmenter)
        res.clips_found = len(spans)
        todo = [s for s in spans if make_clip_id(source, s.start_frame, s.end_frame) not in skip_ids]
        res.skipped = len(spans) - len(todo)
        res.records = _process_spans(meta, trace, todo, cfg)
    except (MediaError, TooFewFrames, OSError) as e:
        res.error = f"{type(e).__name__}: {e}"
        res.records = []
    res.seconds = time.perf_counter() - t0
    return res


def _process_spans(meta, trace: MotionTrace, spans: list, cfg: PipelineConfig) -> list:
    stages = set(cfg.stages)
    clients = _clients(cfg)
    fps = float(meta.fps)

    plans = {}
    for span in spans:
        plans[span] = None
        if "sample" in stages:
            try:
                plans[span] = plan_samples(span.n_frames, cfg.sampler.N, cfg.sampler.trim_fraction, fps)
            except InsufficientFrames:
                pass

    need_frames = {"score", "caption"} & stages or ("classify" in stages and clients.classifier)
    wanted: dict = {}
    if need_frames:
        for span in spans:
            k = max(cfg.scoring.frames, cfg.caption.frames if "caption" in stages else 0)
            wanted[span] = _span_frames(span, plans[span], k)
        all_idx = sorted({i for v in wanted.values() for i in v})
        frames = {fb.index: fb for fb in read_frames(meta, all_idx, cfg.media.target_height,
                                                      with_color=True, decoder=_decoder(cfg))}

    cap_cfg = CaptionConfig(min_words=cfg.caption.min_words, target_language=cfg.caption.target_language,
                            vocabulary=load_vocabulary(cfg.caption.vocabulary) if cfg.caption.vocabulary else (),
                            template_id=cfg.caption.template_id, max_frames=max(32, cfg.caption.frames))
    out = []
    for span in spans:
        cid = make_clip_id(meta.source_id, span.start_frame, span.end_frame)
        plan = plans[span]
        idx = wanted.get(span, [])
        motions = trace.motions(span.start_frame, span.end_frame)
        deltas = trace.luma_deltas(span.start_frame, span.end_frame)

        label: Optional[MotionLabel] = None
        if "classify" in stages:
            if clients.classifier is not None:
                label = classify_remote([frames[i] for i in subsample(idx, cfg.scoring.frames)],
                                        clients.classifier, motions, cfg.classifier, deltas)
            else:
                label = classify_clip(motions, cfg.classifier, deltas)

        score = None
        if "score" in stages:
            sframes = [frames[i] for i in subsample(idx, cfg.scoring.frames)]
            if clients.scorer is not None:
                score = score_remote(sframes, clients.scorer, cid)
            else:
                score = score_builtin(sframes, cid)

        decision: Optional[Decision] = None
        if "filter" in stages:
            decision = decide(score, label, cfg.filter)
            if decision.keep and "sample" in stages and plan is None:
                decision = Decision(cid, False, Reason.insufficient_frames)

        caption = None
        flags: tuple = ()
        if "caption" in stages and (decision is None or decision.keep):
            cframes = [frames[i] for i in subsample(idx, cfg.caption.frames)]
            try:
                caption = request_caption(clients.captioner, cframes, cfg.caption.template_id, cid, cap_cfg)
                caption_report = validate_caption(caption, cap_cfg)
                flags = caption_report.flags
            except (ServiceError, ValueError) as e:
                log.warning("caption failed for %s: %s", cid, e)
                flags = ("caption_error",)

        out.append(new_record(
            meta.source_id, span, fps, motion_label=label, scores=score, sampling_plan=plan,
            caption=caption, caption_flags=flags, decision=decision,
            pipeline_version=__version__,
        ))
    return out


def _results(sources: list, cfg: PipelineConfig, skip: frozenset) -> Iterator[SourceResult]:
    """Per-source results in source order; at most ``2 * workers`` in flight."""
    if cfg.workers <= 1 or len(sources) <= 1:
        for s in sources:
            yield process_source(s, cfg, skip)
        return
    window = 2 * cfg.workers
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        pending = []
        it = iter(sources)
        for s in it:
            pending.append(pool.submit(process_source, s, cfg, skip))
            if len(pending) >= window:
                break
        while pending:
            fut = pending.pop(0)
            nxt = next(it, None)
            if nxt is not None:
                pending.append(pool.submit(process_source, nxt, cfg, skip))
            yield fut.result()


def run(cfg: PipelineConfig, *, max_records: Optional[int] = None) -> RunReport:
    """Process every source in ``cfg.paths.sources`` into ``cfg.paths.manifest``.

    Clips already present in the manifest are skipped, so an interrupted run
    resumes where it stopped. ``max_records`` stops after that many new
    records (used to simulate interruption).
    """
    cfg.validate()
    t0 = time.perf_counter()
    sources = read_source_list(cfg.paths.sources)
    manifest = cfg.paths.manifest
    try:
        repair_tail(manifest)
        skip = frozenset(existing_clip_ids(manifest))
    except OSError as e:
        raise SinkFailure(f"cannot prepare manifest {manifest}: {e}") from e

    report = RunReport(sources=len(sources))
    dropped: Counter = Counter()
    for res in _results(sources, cfg, skip):
        if res.error:
            report.sources_failed += 1
            report.errors[res.source_id] = res.error
            log.warning("source %s failed: %s", res.source_id, res.error)
        report.clips_found += res.clips_found
        report.skipped_existing += res.skipped
        records = res.records
        if max_records is not None:
            records = records[: max(0, max_records - report.written)]
        try:
            write_records(records, manifest)
        except IOFailure as e:
            raise SinkFailure(str(e)) from e
        report.written += len(records)
        for r in records:
            if r.kept:
                report.kept += 1
            else:
                dropped[r.decision.reason.value] += 1
        if max_records is not None and report.written >= max_records:
            report.interrupted = True
            break
    report.dropped_by_reason = dict(dropped)
    report.seconds = time.perf_counter() - t0
    return report
