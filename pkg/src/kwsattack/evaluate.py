"""
Evaluation protocol: for every selected correctly-classified clip, attack
every other label (targeted) or just leave the source label (untargeted),
then aggregate into a source x target success matrix.

Per-attack seeds derive from (master seed, clip id, target), so the set of
results does not depend on job ordering or worker count.

CSV schemas
-----------
attacks.csv   mode,source,target,clip_id,seed,success,iterations,queries,
              changed_sample_count,changed_fraction,max_abs_delta,rms_delta,
              snr_db,wav_path
              (target is empty for untargeted rows; wav_path is relative to
              the output directory; wall time is deliberately excluded so
              reruns are byte-identical)
matrix.csv    source,target,attempts,successes,success_rate,mean_iterations
              (one row per ordered off-diagonal pair, source-major label
              order; mean_iterations averages over all attempts, nan when
              there were none)
"""
from __future__ import annotations

import csv
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .attack import AttackConfig, AttackResult, run_targeted_attack, run_untargeted_attack
from .audio_io import write_wav
from .corpus import CorpusEntry
from .errors import EmptyRecords, InsufficientCorpus
from .noise import NoiseReport, noise_metrics  # noqa: F401  (re-exported)
from .victim import LabelSet, VictimModel, model_from_bytes, model_to_bytes

log = logging.getLogger(__name__)

ATTACK_COLUMNS = [
    "mode", "source", "target", "clip_id", "seed", "success", "iterations", "queries",
    "changed_sample_count", "changed_fraction", "max_abs_delta", "rms_delta", "snr_db",
    "wav_path",
]
MATRIX_COLUMNS = ["source", "target", "attempts", "successes", "success_rate", "mean_iterations"]


@dataclass(frozen=True)
class AttackRecord:
    mode: str  # "targeted" | "untargeted"
    source: str
    target: str  # "" for untargeted
    clip_id: str
    seed: int
    success: bool
    iterations: int
    queries: int
    noise: NoiseReport
    wav_path: str = ""
    wall_time: float = 0.0

    def row(self) -> List[str]:
        n = self.noise
        return [self.mode, self.source, self.target, self.clip_id, str(self.seed),
                str(int(self.success)), str(self.iterations), str(self.queries),
                str(n.changed_sample_count), repr(n.changed_fraction), str(n.max_abs_delta),
                repr(n.rms_delta), repr(n.snr_db), self.wav_path]


@dataclass
class AttackMatrix:
    labels: LabelSet
    success_rate: np.ndarray  # K x K, nan on the diagonal
    attempts: np.ndarray
    successes: np.ndarray
    mean_iterations: np.ndarray

    def overall_success_rate(self) -> float:
        off = ~np.eye(len(self.labels), dtype=bool)
        total = int(self.attempts[off].sum())
        return float(self.successes[off].sum()) / total if total else float("nan")

    def __eq__(self, other):
        if not isinstance(other, AttackMatrix):
            return NotImplemented
        same = lambda a, b: np.array_equal(a, b, equal_nan=True)  # noqa: E731
        return (self.labels == other.labels and same(self.success_rate, other.success_rate)
                and same(self.attempts, other.attempts)
                and same(self.successes, other.successes)
                and same(self.mean_iterations, other.mean_iterations))


def attack_seed(master_seed: int, clip_id: str, target: Optional[int]) -> int:
    key = [int(master_seed), zlib.crc32(clip_id.encode()), 0 if target is None else target + 1]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def select_clips(corpus: Sequence[CorpusEntry], model: VictimModel, clips_per_label: int,
                 seed: int) -> Dict[str, List[CorpusEntry]]:
    """Draw ``clips_per_label`` correctly classified clips per label in seeded random order.

    Misclassified clips are logged and replaced by the next draw.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5E1EC7]))
    picked = {}
    for label in model.label_set.labels:
        pool = [e for e in corpus if e.label == label]
        chosen = []
        for i in rng.permutation(len(pool)):
            if len(chosen) == clips_per_label:
                break
            e = pool[i]
            if model.classify(e.clip) == label:
                chosen.append(e)
            else:
                log.info("skipping misclassified clip %s", e.clip_id)
        if len(chosen) < clips_per_label:
            raise InsufficientCorpus(
                f"label {label!r}: only {len(chosen)} correctly classified clips, "
                f"need {clips_per_label}")
        picked[label] = chosen
    return picked


# process-pool plumbing: the model is shipped once per worker as bytes
_worker_model: Optional[VictimModel] = None


def _init_worker(model_bytes: bytes):
    global _worker_model
    _worker_model = model_from_bytes(model_bytes)


def _attack_job(job) -> Tuple[AttackResult, float]:
    clip, source, target, config = job
    t0 = time.perf_counter()
    if target is None:
        res = run_untargeted_attack(clip, _worker_model, config, source=source)
    else:
        res = run_targeted_attack(clip, target, _worker_model, config)
    return res, time.perf_counter() - t0


def _run_jobs(model: VictimModel, jobs: list, n_workers: int):
    global _worker_model
    if n_workers <= 1 or len(jobs) <= 1:
        previous, _worker_model = _worker_model, model
        try:
            return [_attack_job(j) for j in jobs]
        finally:
            _worker_model = previous
    with ProcessPoolExecutor(max_workers=n_workers, initializer=_init_worker,
                             initargs=(model_to_bytes(model),)) as pool:
        return list(pool.map(_attack_job, jobs))


def _wav_name(source: str, target: str, clip_id: str) -> str:
    return f"{source}_{target or 'any'}_{clip_id.replace('/', '-')}.wav"


def _records(entries_jobs, results, model: VictimModel, mode: str,
             out_dir: Optional[Path]) -> List[AttackRecord]:
    labels = model.label_set.labels
    records = []
    for (entry, target, seed), (res, wall) in zip(entries_jobs, results):
        tname = labels[target] if target is not None else ""
        wav = ""
        if out_dir is not None:
            wav = _wav_name(entry.label, tname, entry.clip_id)
            write_wav(res.adversarial, out_dir / wav)
        records.append(AttackRecord(
            mode=mode, source=entry.label, target=tname, clip_id=entry.clip_id, seed=seed,
            success=res.success, iterations=res.iterations_used, queries=res.queries_used,
            noise=res.noise, wav_path=wav, wall_time=wall))
    return records


def run_targeted_evaluation(corpus: Sequence[CorpusEntry], model: VictimModel,
                            config: AttackConfig = AttackConfig(), clips_per_label: int = 50,
                            jobs: int = 1, out_dir=None) -> List[AttackRecord]:
    """Attack every selected clip towards each of the K-1 other labels.

    ``config.seed`` is the master seed. Adversarial clips (including failed
    attempts' best candidates) are written to ``out_dir`` when given.
    """
    picked = select_clips(corpus, model, clips_per_label, config.seed)
    plan, job_args = [], []
    for src_label, entries in picked.items():
        s = model.label_set.index(src_label)
        for e in entries:
            for t in range(len(model.label_set)):
                if t == s:
                    continue
                seed = attack_seed(config.seed, e.clip_id, t)
                plan.append((e, t, seed))
                job_args.append((e.clip, s, t, replace(config, seed=seed)))
    out = _prepare(out_dir)
    return _records(plan, _run_jobs(model, job_args, jobs), model, "targeted", out)


def run_untargeted_evaluation(corpus: Sequence[CorpusEntry], model: VictimModel,
                              config: AttackConfig = AttackConfig(), clips_per_label: int = 5,
                              jobs: int = 1, out_dir=None) -> List[AttackRecord]:
    picked = select_clips(corpus, model, clips_per_label, config.seed)
    plan, job_args = [], []
    for src_label, entries in picked.items():
        s = model.label_set.index(src_label)
        for e in entries:
            seed = attack_seed(config.seed, e.clip_id, None)
            plan.append((e, None, seed))
            job_args.append((e.clip, s, None, replace(config, seed=seed)))
    out = _prepare(out_dir)
    return _records(plan, _run_jobs(model, job_args, jobs), model, "untargeted", out)


def _prepare(out_dir) -> Optional[Path]:
    if out_dir is None:
        return None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def matrix_from_records(labels: LabelSet, records: Sequence[AttackRecord]) -> AttackMatrix:
    k = len(labels)
    attempts = np.zeros((k, k), dtype=np.int64)
    successes = np.zeros((k, k), dtype=np.int64)
    iters = np.zeros((k, k))
    for r in records:
        if r.mode != "targeted":
            continue
        i, j = labels.index(r.source), labels.index(r.target)
        attempts[i, j] += 1
        successes[i, j] += int(r.success)
        iters[i, j] += r.iterations
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(attempts > 0, successes / np.maximum(attempts, 1), np.nan)
        mean_it = np.where(attempts > 0, iters / np.maximum(attempts, 1), np.nan)
    np.fill_diagonal(rate, np.nan)
    np.fill_diagonal(mean_it, np.nan)
    return AttackMatrix(labels, rate, attempts, successes, mean_it)


def build_attack_matrix(corpus: Sequence[CorpusEntry], model: VictimModel,
                        config: AttackConfig = AttackConfig(), clips_per_label: int = 50,
                        jobs: int = 1) -> AttackMatrix:
    records = run_targeted_evaluation(corpus, model, config, clips_per_label, jobs)
    return matrix_from_records(model.label_set, records)


def export_matrix_csv(matrix: AttackMatrix, path) -> None:
    labels = matrix.labels.labels
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MATRIX_COLUMNS)
        for i, s in enumerate(labels):
            for j, t in enumerate(labels):
                if i == j:
                    continue
                w.writerow([s, t, int(matrix.attempts[i, j]), int(matrix.successes[i, j]),
                            repr(float(matrix.success_rate[i, j])),
                            repr(float(matrix.mean_iterations[i, j]))])


def read_matrix_csv(path) -> AttackMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    order: List[str] = []
    for r in rows:
        for lab in (r["source"], r["target"]):
            if lab not in order:
                order.append(lab)
    labels = LabelSet(tuple(order))
    k = len(labels)
    attempts = np.zeros((k, k), dtype=np.int64)
    successes = np.zeros((k, k), dtype=np.int64)
    rate = np.full((k, k), np.nan)
    mean_it = np.full((k, k), np.nan)
    for r in rows:
        i, j = labels.index(r["source"]), labels.index(r["target"])
        attempts[i, j] = int(r["attempts"])
        successes[i, j] = int(r["successes"])
        rate[i, j] = float(r["success_rate"])
        mean_it[i, j] = float(r["mean_iterations"])
    return AttackMatrix(labels, rate, attempts, successes, mean_it)


def export_attacks_csv(records: Sequence[AttackRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ATTACK_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_attacks_csv(path) -> List[AttackRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [AttackRecord(
        mode=r["mode"], source=r["source"], target=r["target"], clip_id=r["clip_id"],
        seed=int(r["seed"]), success=r["success"] == "1", iterations=int(r["iterations"]),
        queries=int(r["queries"]),
        noise=NoiseReport(int(r["changed_sample_count"]), float(r["changed_fraction"]),
                          int(r["max_abs_delta"]), float(r["rms_delta"]), float(r["snr_db"])),
        wav_path=r["wav_path"]) for r in rows]


def _lower_median(values):
    s = sorted(values)
    return s[(len(s) - 1) // 2]


def summarize(records: Sequence[AttackRecord]) -> dict:
    """Aggregate success rate, lower medians of iterations and wall time, mean finite SNR."""
    if not records:
        raise EmptyRecords("cannot summarize an empty record list")
    snrs = [r.noise.snr_db for r in records if math.isfinite(r.noise.snr_db)]
    return {
        "attacks": len(records),
        "overall_success_rate": sum(r.success for r in records) / len(records),
        "median_iterations": _lower_median([r.iterations for r in records]),
        "median_wall_time": _lower_median([r.wall_time for r in records]),
        "mean_snr_db": float(np.mean(snrs)) if snrs else float("nan"),
    }


def write_summary(summary: dict, path) -> None:
    with open(path, "w") as fh:
        for key, value in summary.items():
            fh.write(f"{key}: {value}\n")
