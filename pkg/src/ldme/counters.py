"""Instrumentation counters threaded through a run."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass
class RunCounters:
    spectrum_calls: int = 0
    power_iterations: int = 0
    sift_iterations: int = 0
    mmw_steps: int = 0
    max_mmw_steps: int = 0
    bicriteria_passes: int = 0
    max_bicriteria_passes: int = 0
    good_tuple_calls: int = 0
    max_good_tuple_calls: int = 0
    k_reductions: int = 0
    retries: int = 0
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)
