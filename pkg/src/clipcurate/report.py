"""Corpus reports from a manifest: stats JSON plus CSV histograms."""
from __future__ import annotations

import csv
import json
import os

from .manifest import HIST_KEYS, ManifestError, compute_stats, q, read_records
from .quality import histogram, write_histogram_csv

SCORE_BINS = 20
WORD_BIN = 25


class MalformedManifest(ManifestError):
    pass


def frac_at_least(values, threshold: float) -> float:
    values = list(values)
    return sum(v >= threshold for v in values) / len(values) if values else 0.0


def write_report(manifest_path: str, out_dir: str, aes_mark: float = 3.5, qual_mark: float = 4.0) -> dict:
    """Write ``stats.json`` and histogram CSVs into ``out_dir``; returns the stats dict.

    Score histograms cover kept clips (``*_hist.csv``) and every scored
    record (``*_hist_all.csv``).
    """
    try:
        records = read_records(manifest_path, strict=True)
    except ManifestError as e:
        raise MalformedManifest(str(e)) from e
    except OSError as e:
        raise MalformedManifest(f"cannot read {manifest_path}: {e}") from e
    os.makedirs(out_dir, exist_ok=True)

    stats = compute_stats(records)
    kept = [r for r in records if r.kept]
    scored_kept = [r.scores for r in kept if r.scores is not None]
    scored_all = [r.scores for r in records if r.scores is not None]

    for name, pool in (("", scored_kept), ("_all", scored_all)):
        write_histogram_csv(os.path.join(out_dir, f"aesthetic_hist{name}.csv"),
                            histogram([s.aesthetic for s in pool], SCORE_BINS))
        write_histogram_csv(os.path.join(out_dir, f"quality_hist{name}.csv"),
                            histogram([s.quality for s in pool], SCORE_BINS))

    with open(os.path.join(out_dir, "labels.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["label", "count"])
        for k in HIST_KEYS:
            w.writerow([k, stats.label_histogram.get(k, 0)])

    words = [r.caption.word_count for r in kept if r.caption is not None]
    top = max([WORD_BIN * SCORE_BINS] + words)
    top = -(-top // WORD_BIN) * WORD_BIN
    write_histogram_csv(os.path.join(out_dir, "caption_words_hist.csv"),
                        histogram(words, bins=top // WORD_BIN, lo=0.0, hi=float(top)))

    out = stats.to_dict()
    out["aesthetic_frac_at_least"] = {str(aes_mark): q(frac_at_least((s.aesthetic for s in scored_kept), aes_mark))}
    out["quality_frac_at_least"] = {str(qual_mark): q(frac_at_least((s.quality for s in scored_kept), qual_mark))}
    out["dropped_by_reason"] = {}
    for r in records:
        if not r.kept:
            key = r.decision.reason.value
            out["dropped_by_reason"][key] = out["dropped_by_reason"].get(key, 0) + 1
    out["dropped_by_reason"] = dict(sorted(out["dropped_by_reason"].items()))
    with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as f:
        json.dump(out, f, indent=2, sort_keys=False)
        f.write("\n")
    return out
