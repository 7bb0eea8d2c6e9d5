"""Task-guided mixup.

Intra-task: two samples with the same instruction; clouds are concatenated
and heatmaps summed, giving multi-peak supervision.

Cross-task: a primary sample plus distractors with other instructions;
clouds are concatenated and only the primary's heatmaps and action are kept.
"""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from demoforge.demo import ActionRecord, PointCloud
from demoforge.heatmap import Heatmap


@dataclass(eq=False)
class SupervisedSample:
    cloud: PointCloud
    instruction: str
    heatmaps: list[Heatmap]
    action: ActionRecord
    sample_id: str = ""
    views: object | None = None  # the ViewSet the heatmaps align to, when known
    sources: tuple[str, ...] = ()
    mix_type: str = "none"

    def __post_init__(self):
        for h in self.heatmaps:
            if np.any(h.scores < 0) or not np.all(np.isfinite(h.scores)):
                raise ValueError(f"sample {self.sample_id}: heatmaps must be finite and non-negative")
        if self.views is not None and len(self.views) != len(self.heatmaps):
            raise ValueError(f"sample {self.sample_id}: {len(self.heatmaps)} heatmaps for {len(self.views)} views")
        if not self.sources:
            self.sources = (self.sample_id,)


@dataclass(frozen=True)
class MixupPolicy:
    intra_rate: float = 0.25
    cross_rate: float = 0.25
    max_distractors: int = 2  # samples per cross mix, primary included
    renormalize: bool = False

    def __post_init__(self):
        for r in (self.intra_rate, self.cross_rate):
            if not 0.0 <= r <= 1.0:
                raise ValueError("mix rates must lie in [0, 1]")
        if self.max_distractors < 1:
            raise ValueError("max_distractors must be >= 1")


def _same_views(a: SupervisedSample, b: SupervisedSample) -> None:
    if len(a.heatmaps) != len(b.heatmaps) or any(
        x.scores.shape != y.scores.shape for x, y in zip(a.heatmaps, b.heatmaps)
    ):
        raise ValueError(f"samples {a.sample_id!r} and {b.sample_id!r} use different view layouts")
    if a.views is not None and b.views is not None and a.views != b.views:
        raise ValueError(f"samples {a.sample_id!r} and {b.sample_id!r} use different view sets")


def mixup_intra(a: SupervisedSample, b: SupervisedSample, renormalize: bool = False) -> SupervisedSample:
    if a.instruction != b.instruction:
        raise ValueError(f"intra mixup needs one instruction, got {a.instruction!r} and {b.instruction!r}")
    _same_views(a, b)
    heat = [Heatmap(x.scores + y.scores) for x, y in zip(a.heatmaps, b.heatmaps)]
    if renormalize:
        heat = [Heatmap(h.scores / h.mass) if h.mass > 0 else h for h in heat]
    return SupervisedSample(
        cloud=PointCloud.concat([a.cloud, b.cloud]),
        instruction=a.instruction,
        heatmaps=heat,
        action=a.action,
        sample_id=f"{a.sample_id}+{b.sample_id}",
        views=a.views,
        sources=a.sources + b.sources,
        mix_type="intra",
    )


def mixup_cross(primary: SupervisedSample, distractors: Sequence[SupervisedSample]) -> SupervisedSample:
    for d in distractors:
        if d.instruction == primary.instruction:
            raise ValueError(f"distractor {d.sample_id!r} shares the primary instruction {primary.instruction!r}")
        _same_views(primary, d)
    if not distractors:
        return primary
    return SupervisedSample(
        cloud=PointCloud.concat([primary.cloud, *(d.cloud for d in distractors)]),
        instruction=primary.instruction,
        heatmaps=[Heatmap(h.scores.copy()) for h in primary.heatmaps],
        action=primary.action,
        sample_id="x".join([primary.sample_id, *(d.sample_id for d in distractors)]),
        views=primary.views,
        sources=primary.sources + tuple(s for d in distractors for s in d.sources),
        mix_type="cross",
    )


def augment_buffer(
    samples: Sequence[SupervisedSample],
    policy: MixupPolicy = MixupPolicy(),
    seed: int = 0,
) -> Iterator[SupervisedSample]:
    """One output per input sample, in input order.

    Sample ``i`` draws from its own RNG substream, so outputs do not depend on
    how the stream is partitioned. With probability ``intra_rate`` the sample
    is mixed with a uniformly drawn same-instruction partner; otherwise with
    probability ``cross_rate`` it receives up to ``max_distractors - 1``
    distractors, one per distinct other instruction.
    """
    by_instr: dict[str, list[int]] = defaultdict(list)
    slot: list[int] = []
    for i, s in enumerate(samples):
        slot.append(len(by_instr[s.instruction]))
        by_instr[s.instruction].append(i)
    instructions = sorted(by_instr)
    if policy.cross_rate > 0 and len(instructions) < 2:
        warnings.warn("single-instruction buffer: cross-task mixup skipped", stacklevel=2)
    streams = np.random.SeedSequence(seed).spawn(len(samples))

    for i, s in enumerate(samples):
        rng = np.random.default_rng(streams[i])
        u_intra, u_cross = rng.random(2)
        same = by_instr[s.instruction]
        if u_intra < policy.intra_rate and len(same) > 1:
            r = int(rng.integers(len(same) - 1))
            j = same[r + (r >= slot[i])]  # uniform over same-instruction samples other than i
            yield mixup_intra(s, samples[j], policy.renormalize)
            continue
        others = [ins for ins in instructions if ins != s.instruction]
        if u_cross < policy.cross_rate and others and policy.max_distractors > 1:
            k = min(policy.max_distractors - 1, len(others))
            picks = rng.choice(len(others), size=k, replace=False)
            chosen = []
            for p in sorted(picks):
                pool = by_instr[others[p]]
                chosen.append(samples[pool[int(rng.integers(len(pool)))]])
            yield mixup_cross(s, chosen)
            continue
        yield s
