from __future__ import annotations

import dataclasses
import os
import shutil
import time

import numpy as np
import pytest

from clipcurate import synth
from clipcurate.config import PipelineConfig, config_from_dict
from clipcurate.media import FrameBuffer

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def textured(rng, height=180, width=320):
    """Periodic color texture: integer ``np.roll`` shifts are exact translations."""
    return synth.texture(rng, height, width, brightness=128.0)


def gray_texture(rng, height=180, width=320):
    from clipcurate.media import rgb_to_luma

    return rgb_to_luma(textured(rng, height, width))


def fb(luma, index=0, fps=30.0, rgb=None) -> FrameBuffer:
    h, w = luma.shape
    return FrameBuffer(index, index / fps, w, h, luma, rgb)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --------------------------------------------------------------------------
# pipeline corpus shared by the pipeline and acceptance tests


def corpus_config(directory, manifest="manifest.jsonl", **over) -> PipelineConfig:
    data = {
        "paths": {"sources": "sources.txt", "manifest": manifest},
        "media": {"target_height": 180},
    }
    cfg = config_from_dict(data, base_dir=str(directory))
    return dataclasses.replace(cfg, **over) if over else cfg


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    synth.write_corpus(d)
    return d


@dataclasses.dataclass
class PipelineRuns:
    directory: str
    single: str
    parallel: str
    resumed: str
    reports: dict
    seconds: dict


@pytest.fixture(scope="session")
def pipeline_runs(corpus_dir) -> PipelineRuns:
    """Uninterrupted single-worker run, eight-worker run, and an interrupted
    run (stopped after 3 records, then a torn line appended) resumed to the end."""
    from clipcurate.pipeline import run

    reports, seconds = {}, {}
    paths = {}
    for name, workers in (("single", 1), ("parallel", 8)):
        cfg = corpus_config(corpus_dir, f"{name}.jsonl", workers=workers)
        t0 = time.perf_counter()
        reports[name] = run(cfg)
        seconds[name] = time.perf_counter() - t0
        paths[name] = cfg.paths.manifest

    cfg = corpus_config(corpus_dir, "resumed.jsonl")
    t0 = time.perf_counter()
    reports["interrupted"] = run(cfg, max_records=3)
    with open(cfg.paths.manifest, "ab") as f:
        f.write(b'{"schema_version":1,"clip_id":"dead')
    shutil.copy(cfg.paths.manifest, os.path.join(corpus_dir, "interrupted_copy.jsonl"))
    reports["resumed"] = run(cfg)
    seconds["resume"] = time.perf_counter() - t0
    paths["resumed"] = cfg.paths.manifest
    return PipelineRuns(str(corpus_dir), paths["single"], paths["parallel"], paths["resumed"], reports, seconds)
