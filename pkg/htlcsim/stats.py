"""Post-processing: from raw per-payment records to performance measures, by batch means.

Records (in start time order) are cut into equal-count contiguous batches.
The first ``warmup_batches`` are dropped, each measure is computed on each of
the remaining batches, and the per-batch values are summarised by their mean,
sample variance and Student-t 95% confidence interval.

>>> m = MeasureStats.from_batches([0.8, 0.9, 1.0], clamp=(0.0, 1.0))
>>> round(m.mean, 10), round(m.variance, 10), round(m.ci95_low, 4), m.ci95_high
(0.9, 0.01, 0.6516, 1.0)
"""

import math
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import t as student_t

from htlcsim.model import FailReason, PaymentRecord, PaymentResult

DFLT_N_BATCHES = 30
DFLT_WARMUP_BATCHES = 1
CONFIDENCE = 0.95


class Outcome(str, Enum):
    success = "success"
    fail_no_route = "fail_no_route"
    fail_unbalanced = "fail_unbalanced"
    fail_uncooperative = "fail_uncooperative"
    fail_timeout = "fail_timeout"
    unknown = "unknown"


_fail_outcomes = {
    FailReason.no_route: Outcome.fail_no_route,
    FailReason.unbalanced: Outcome.fail_unbalanced,
    FailReason.uncooperative: Outcome.fail_uncooperative,
    FailReason.timeout: Outcome.fail_timeout,
}


def classify(record: PaymentRecord) -> Outcome:
    """The performance category a finalized payment falls in."""
    if record.result == PaymentResult.success:
        return Outcome.success
    if record.result == PaymentResult.unknown:
        return Outcome.unknown
    if record.result == PaymentResult.fail:
        try:
            return _fail_outcomes[FailReason(record.fail_reason)]
        except KeyError:
            raise ValueError(f"payment {record.id} failed without a reason")
    raise ValueError(f"payment {record.id} is still {record.result.value}: not finalized")


@dataclass(frozen=True)
class MeasureStats:
    mean: float
    variance: float
    ci95_low: float
    ci95_high: float
    n_batches: int

    @classmethod
    def from_batches(
        cls,
        values: Sequence[float],
        *,
        clamp: Optional[Tuple[float, float]] = None,
    ) -> "MeasureStats":
        """Mean, sample variance and Student-t 95% interval of per-batch ``values``.

        NaN values (batches where the measure is undefined) are left out.
        """
        v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
        n = len(v)
        if n == 0:
            return cls(math.nan, math.nan, math.nan, math.nan, 0)
        mean = float(np.mean(v))
        if n == 1:
            return cls(mean, 0.0, mean, mean, 1)
        variance = float(np.var(v, ddof=1))
        half_width = float(student_t.ppf((1 + CONFIDENCE) / 2, n - 1)) * math.sqrt(
            variance / n
        )
        low, high = mean - half_width, mean + half_width
        if clamp is not None:
            low, high = max(low, clamp[0]), min(high, clamp[1])
        return cls(mean, variance, low, high, n)


@dataclass(frozen=True)
class SimStatistics:
    p_success: MeasureStats
    p_fail_no_route: MeasureStats
    p_fail_unbalanced: MeasureStats
    p_fail_uncooperative: MeasureStats
    p_fail_timeout: MeasureStats
    p_unknown: MeasureStats
    payment_time: MeasureStats  # ms, successful payments only
    attempts: MeasureStats
    route_length: MeasureStats  # successful payments only

    probability_fields = (
        "p_success",
        "p_fail_no_route",
        "p_fail_unbalanced",
        "p_fail_uncooperative",
        "p_fail_timeout",
        "p_unknown",
    )

    def to_dict(self) -> Dict[str, dict]:
        return {f.name: asdict(getattr(self, f.name)) for f in fields(self)}

    def probability_sum(self) -> float:
        return math.fsum(getattr(self, name).mean for name in self.probability_fields)


_outcome_of_field = dict(zip(SimStatistics.probability_fields, Outcome))


def split_batches(
    records: Sequence[PaymentRecord],
    n_batches: int = DFLT_N_BATCHES,
    warmup_batches: int = DFLT_WARMUP_BATCHES,
) -> List[List[PaymentRecord]]:
    """``n_batches`` equal-count batches after dropping ``warmup_batches`` leading ones.

    Records that do not fill a whole batch at the end are left out. With fewer than
    ``n_batches + warmup_batches`` records, batches hold one record and the warm-up
    gets what the ``n_batches`` batches leave.

    >>> [len(b) for b in split_batches(list(range(5)), n_batches=4, warmup_batches=2)]
    [1, 1, 1, 1]
    """
    if n_batches < 2:
        raise ValueError(f"batch means needs at least 2 batches, got {n_batches}")
    if warmup_batches < 0:
        raise ValueError(f"warmup_batches must be >= 0, got {warmup_batches}")
    if len(records) < n_batches:
        raise ValueError(f"fewer records ({len(records)}) than batches ({n_batches})")
    batch_size = max(1, len(records) // (n_batches + warmup_batches))
    start = min(warmup_batches * batch_size, len(records) - n_batches * batch_size)
    return [
        list(records[start + b * batch_size : start + (b + 1) * batch_size])
        for b in range(n_batches)
    ]


def outcome_counts(batch: Sequence[PaymentRecord]) -> Dict[Outcome, int]:
    counts = dict.fromkeys(Outcome, 0)
    for record in batch:
        counts[classify(record)] += 1
    return counts


def _mean_or_nan(values: List[float]) -> float:
    return float(np.mean(values)) if values else math.nan


def batch_means(
    records: Sequence[PaymentRecord],
    n_batches: int = DFLT_N_BATCHES,
    warmup_batches: int = DFLT_WARMUP_BATCHES,
    *,
    attempts_over: str = "all",
) -> SimStatistics:
    """Payment performance measures with 95% confidence intervals.

    :param records: Finalized payment records, ordered by start time
    :param n_batches: Number of batches the measures are computed on
    :param warmup_batches: Number of leading batches dropped as transient
    :param attempts_over: 'all' to average attempts over every payment, 'success'
        to average them over successful payments only
    """
    if attempts_over not in ("all", "success"):
        raise ValueError(f"attempts_over must be 'all' or 'success', got {attempts_over}")
    starts = [r.start_time for r in records]
    if any(a > b for a, b in zip(starts, starts[1:])):
        raise ValueError("records must be ordered by start time")

    per_batch = {name: [] for name in SimStatistics.probability_fields}
    payment_times, attempts, route_lengths = [], [], []
    for batch in split_batches(records, n_batches, warmup_batches):
        counts = outcome_counts(batch)
        for name, outcome in _outcome_of_field.items():
            per_batch[name].append(counts[outcome] / len(batch))
        successes = [r for r in batch if r.result == PaymentResult.success]
        payment_times.append(_mean_or_nan([r.end_time - r.start_time for r in successes]))
        route_lengths.append(_mean_or_nan([r.route_length for r in successes]))
        counted = batch if attempts_over == "all" else successes
        attempts.append(_mean_or_nan([r.attempts for r in counted]))

    unit = (0.0, 1.0)
    return SimStatistics(
        **{
            name: MeasureStats.from_batches(values, clamp=unit)
            for name, values in per_batch.items()
        },
        payment_time=MeasureStats.from_batches(payment_times),
        attempts=MeasureStats.from_batches(attempts),
        route_length=MeasureStats.from_batches(route_lengths),
    )
