"""Buffer statistics and the training-curve scenario classifier."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from demoforge.replay import INDEX_FILE, ReplayBuffer, index_nbytes

SCENARIO_A = "A_erroneous_samples"
SCENARIO_B = "B_ineffective_keyframes"
SCENARIO_C = "C_generalization_gap"
STABLE = "stable"

REMEDIES = {
    SCENARIO_A: "clean erroneous samples: motion-saliency filter, boundary retreat, height clearance",
    SCENARIO_B: "respecify keyframes: curvature via-points, defensive via-points",
    SCENARIO_C: "sampling is sound; improve model generalization",
    STABLE: "no action",
}


@dataclass
class BufferStats:
    sample_count: int
    bytes_on_disk: int
    redundancy_ratio: float
    temporal_histogram: dict[int, int]
    entropy: float
    unique_count: int = 0
    type_counts: dict[str, int] = field(default_factory=dict)
    strategy: str = "unknown"
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["temporal_histogram"] = {str(k): v for k, v in sorted(self.temporal_histogram.items())}
        return d


def compute_stats(buffer: ReplayBuffer, path=None) -> BufferStats:
    """Statistics over ``buffer``.

    ``bytes_on_disk`` is the size of ``buffer_index.jsonl`` under ``path`` when
    given, else the size the index would have when written.
    """
    n = len(buffer)
    if n == 0:
        return BufferStats(0, 0, 0.0, {}, 0.0, strategy=buffer.strategy, warnings=["empty buffer"])
    freq = Counter(s.key for s in buffer.samples)
    p = np.array(list(freq.values()), dtype=np.float64) / n
    entropy = float(-(p * np.log2(p)).sum()) + 0.0
    hist: dict[int, int] = defaultdict(int)
    for s in buffer.samples:
        hist[s.transition] += 1
    if path is not None:
        index = Path(path)
        index = index / INDEX_FILE if index.is_dir() else index
        nbytes = index.stat().st_size
    else:
        nbytes = index_nbytes(buffer.samples)
    return BufferStats(
        sample_count=n,
        bytes_on_disk=nbytes,
        redundancy_ratio=1.0 - len(freq) / n,
        temporal_histogram=dict(sorted(hist.items())),
        entropy=entropy,
        unique_count=len(freq),
        type_counts=dict(sorted(Counter(s.sample_type for s in buffer.samples).items())),
        strategy=buffer.strategy,
    )


def ascii_histogram(hist: dict[int, int], width: int = 50) -> str:
    if not hist:
        return "(empty)\n"
    top = max(hist.values()) or 1
    lines = []
    for k in sorted(hist):
        bar = "#" * max(0, round(width * hist[k] / top))
        lines.append(f"transition {k:>3} | {bar} {hist[k]}")
    return "\n".join(lines) + "\n"


# --- scenario classifier -----------------------------------------------------


@dataclass(frozen=True)
class Checkpoint:
    step: int
    train_sr: float
    test_sr: float | None = None


@dataclass(frozen=True)
class SuccessCurve:
    task_instance: str
    checkpoints: tuple[Checkpoint, ...]

    def __post_init__(self):
        steps = [c.step for c in self.checkpoints]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"{self.task_instance}: steps must strictly increase")
        for c in self.checkpoints:
            for r in (c.train_sr, c.test_sr):
                if r is not None and not 0.0 <= r <= 1.0:
                    raise ValueError(f"{self.task_instance}: rate {r} outside [0, 1]")


@dataclass(frozen=True)
class ClassifierConfig:
    decline_threshold: float = 0.15
    stability_eps: float = 0.02
    gap_threshold: float = 0.15
    near_zero: float = 0.04
    min_checkpoints: int = 4


@dataclass
class ScenarioVerdict:
    scenario: str
    evidence: dict

    @property
    def remedy(self) -> str:
        return REMEDIES[self.scenario]

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "remedy": self.remedy, "evidence": self.evidence}


def _slope(y: Sequence[float]) -> float:
    """Least-squares slope against checkpoint ordinal (per checkpoint window)."""
    if len(y) < 2:
        return 0.0
    x = np.arange(len(y), dtype=np.float64)
    return float(np.polyfit(x, np.asarray(y, dtype=np.float64), 1)[0])


def _aggregate(curves: Sequence[SuccessCurve]):
    steps = sorted({c.step for cur in curves for c in cur.checkpoints})
    train: dict[int, list[float]] = defaultdict(list)
    test: dict[int, list[float]] = defaultdict(list)
    for cur in curves:
        for c in cur.checkpoints:
            train[c.step].append(c.train_sr)
            if c.test_sr is not None:
                test[c.step].append(c.test_sr)
    agg_train = [float(np.mean(train[s])) for s in steps]
    agg_test = [float(np.mean(test[s])) if test[s] else None for s in steps]
    return steps, agg_train, agg_test


def classify_scenario(curves: Sequence[SuccessCurve], cfg: ClassifierConfig = ClassifierConfig()) -> ScenarioVerdict:
    """Rules are evaluated in order A, B, C; the first match wins."""
    if not curves:
        raise ValueError("no curves given")
    for cur in curves:
        if len(cur.checkpoints) < cfg.min_checkpoints:
            raise ValueError(
                f"{cur.task_instance}: need >= {cfg.min_checkpoints} checkpoints, got {len(cur.checkpoints)}"
            )
    steps, train, test = _aggregate(curves)
    n = len(train)
    final_third = int(math.ceil(2 * n / 3))
    final_half = n // 2
    peak_idx = int(np.argmax(train))
    peak = train[peak_idx]
    tail_slope = _slope(train[final_half:])
    ev: dict = {
        "checkpoints": n,
        "aggregate_train_sr": [round(v, 6) for v in train],
        "peak_train_sr": peak,
        "peak_index": peak_idx,
        "final_third_start": final_third,
        "final_train_sr": train[-1],
        "decline": peak - train[-1],
        "final_half_slope": tail_slope,
    }

    rule_a = peak_idx < final_third and train[-1] <= peak - cfg.decline_threshold and tail_slope < 0
    ev["rule_A"] = rule_a
    if rule_a:
        return ScenarioVerdict(SCENARIO_A, ev)

    stable = abs(tail_slope) < cfg.stability_eps
    zero_instances = sorted(
        cur.task_instance
        for cur in curves
        if all(c.train_sr < cfg.near_zero for c in cur.checkpoints)
    )
    ev["aggregate_stable"] = stable
    ev["near_zero_instances"] = zero_instances
    rule_b = stable and bool(zero_instances)
    ev["rule_B"] = rule_b
    if rule_b:
        return ScenarioVerdict(SCENARIO_B, ev)

    tail = [(tr, te) for tr, te in zip(train[final_third:], test[final_third:])]
    if not tail or any(te is None for _, te in tail):
        ev["rule_C"] = None
        ev["rule_C_note"] = "skipped: test_sr missing in the final third"
        return ScenarioVerdict(STABLE, ev)
    gap = float(np.mean([tr - te for tr, te in tail]))
    ev["final_third_gap"] = gap
    rule_c = stable and gap > cfg.gap_threshold
    ev["rule_C"] = rule_c
    if rule_c:
        return ScenarioVerdict(SCENARIO_C, ev)
    return ScenarioVerdict(STABLE, ev)


def read_curves_csv(path) -> list[SuccessCurve]:
    """Read ``step,instance,train_sr,test_sr`` rows; an empty test_sr means missing."""
    rows: dict[str, list[Checkpoint]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"step", "instance", "train_sr"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            te = (row.get("test_sr") or "").strip()
            rows[row["instance"]].append(
                Checkpoint(int(row["step"]), float(row["train_sr"]), float(te) if te else None)
            )
    return [
        SuccessCurve(name, tuple(sorted(cps, key=lambda c: c.step))) for name, cps in rows.items()
    ]


def write_curves_csv(curves: Iterable[SuccessCurve], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "instance", "train_sr", "test_sr"])
        for cur in curves:
            for c in cur.checkpoints:
                w.writerow([c.step, cur.task_instance, c.train_sr, "" if c.test_sr is None else c.test_sr])


def format_report(verdict: ScenarioVerdict) -> str:
    ev = verdict.evidence
    lines = [
        f"scenario: {verdict.scenario}",
        f"remedy:   {verdict.remedy}",
        "",
        f"checkpoints        {ev['checkpoints']}",
        f"peak train_sr      {ev['peak_train_sr']:.3f} at checkpoint {ev['peak_index']}",
        f"final train_sr     {ev['final_train_sr']:.3f} (decline {ev['decline']:.3f})",
        f"final-half slope   {ev['final_half_slope']:+.4f} per checkpoint",
    ]
    if "near_zero_instances" in ev:
        lines.append(f"near-zero          {', '.join(ev['near_zero_instances']) or '-'}")
    if "final_third_gap" in ev:
        lines.append(f"train-test gap     {ev['final_third_gap']:.3f}")
    elif ev.get("rule_C_note"):
        lines.append(f"rule C             {ev['rule_C_note']}")
    return "\n".join(lines) + "\n"
