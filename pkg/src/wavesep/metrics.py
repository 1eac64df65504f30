"""Source-separation metrics: SDR / SIR / SAR by orthogonal projection.

An estimate is split into target, interference, and artifact parts:
target is its projection onto the true source, interference is the rest
of its projection onto the span of all references, artifacts are what
falls outside that span. Ratios of those energies, in dB, give the
three metrics. Slots whose reference is silence get no ratios (they
are undefined there); their report is the estimate's own RMS level,
which is how quiet-on-absent behavior stays visible.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .audio import rms_dbfs
from .errors import DataError

DB_CAP = 100.0
SILENCE_EPS_DBFS = -60.0


def _energy(x: np.ndarray) -> float:
    return float(np.dot(x, x))


def _db_ratio(num: float, den: float) -> float:
    """10 log10(num/den) with degenerate cases capped at +-100 dB."""
    if num == 0.0:
        return -DB_CAP
    if den == 0.0:
        return DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def decompose(
    estimate: np.ndarray, references: Sequence[np.ndarray], target_index: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split an estimate into (s_target, e_interf, e_artif).

    s_target is the projection onto the target reference; the span
    projection uses a Gram-matrix least-squares solve. Linearly
    dependent references are dropped greedily (with a warning) until
    the Gram matrix is well conditioned; the target itself is never
    dropped. The three parts sum to the estimate exactly.
    """
    est = np.asarray(estimate, dtype=np.float64)
    refs = [np.asarray(r, dtype=np.float64) for r in references]
    if not 0 <= target_index < len(refs):
        raise DataError(f"target index {target_index} out of range for {len(refs)} references")
    n = est.shape[0]
    if any(r.shape != (n,) for r in refs):
        raise DataError("estimate and references must share one length")
    target = refs[target_index]
    t_energy = _energy(target)
    if t_energy == 0.0:
        raise DataError("target reference is silent; metrics are undefined")

    s_target = (float(np.dot(est, target)) / t_energy) * target

    # keep only references that add rank, target first so it survives
    order = [target_index] + [i for i in range(len(refs)) if i != target_index]
    kept: list[int] = []
    for i in order:
        trial = kept + [i]
        basis = np.stack([refs[j] for j in trial])
        gram = basis @ basis.T
        if np.linalg.matrix_rank(gram) < len(trial):
            warnings.warn(
                f"reference {i} is linearly dependent on the others; dropped "
                f"from the projection span"
            )
            continue
        kept.append(i)
    basis = np.stack([refs[j] for j in kept])
    gram = basis @ basis.T
    coef = np.linalg.solve(gram, basis @ est)
    p_span = coef @ basis

    e_interf = p_span - s_target
    e_artif = est - p_span
    return s_target, e_interf, e_artif


def sdr_sir_sar(
    s_target: np.ndarray, e_interf: np.ndarray, e_artif: np.ndarray
) -> tuple[float, float, float]:
    sdr = _db_ratio(_energy(s_target), _energy(e_interf + e_artif))
    sir = _db_ratio(_energy(s_target), _energy(e_interf))
    sar = _db_ratio(_energy(s_target + e_interf), _energy(e_artif))
    return sdr, sir, sar


@dataclass(frozen=True)
class MetricsRecord:
    piece_id: str
    instrument: str
    n_active: int
    sdr_db: float | None  # None marks an absent (silent-reference) slot
    sir_db: float | None
    sar_db: float | None
    est_rms_dbfs: float

    @property
    def absent(self) -> bool:
        return self.sdr_db is None


def evaluate_slots(
    piece_id: str,
    estimates: np.ndarray,
    references: np.ndarray,
    instruments: Sequence[str],
    segment_length: int | None = None,
    silence_eps_dbfs: float = SILENCE_EPS_DBFS,
) -> list[MetricsRecord]:
    """Per-slot metrics for one piece: [K, N] estimates vs references.

    Audio is scored in segments (default: one segment spanning the whole
    piece) and each slot's ratios are averaged over the segments where
    its reference is audible; slots silent throughout report only their
    estimate RMS. Segments where every reference is silent are skipped.
    """
    est = np.asarray(estimates, dtype=np.float64)
    ref = np.asarray(references, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 2:
        raise DataError(f"estimates {est.shape} and references {ref.shape} must match as [K, N]")
    k, n = est.shape
    if len(instruments) != k:
        raise DataError("one instrument name per slot is required")
    seg = segment_length or n
    n_active = sum(1 for i in range(k) if rms_dbfs(ref[i]) > silence_eps_dbfs)

    sums = np.zeros((k, 3))
    counts = np.zeros(k, dtype=int)
    for lo in range(0, n - seg + 1, seg):
        window = slice(lo, lo + seg)
        audible = [i for i in range(k) if rms_dbfs(ref[i, window]) > silence_eps_dbfs]
        if not audible:
            continue
        refs = [ref[i, window] for i in audible]
        for pos, slot in enumerate(audible):
            parts = decompose(est[slot, window], refs, pos)
            sums[slot] += sdr_sir_sar(*parts)
            counts[slot] += 1

    records = []
    for i in range(k):
        level = rms_dbfs(est[i])
        if counts[i]:
            sdr, sir, sar = sums[i] / counts[i]
            records.append(MetricsRecord(piece_id, instruments[i], n_active,
                                         float(sdr), float(sir), float(sar), level))
        else:
            records.append(MetricsRecord(piece_id, instruments[i], n_active,
                                         None, None, None, level))
    return records


@dataclass(frozen=True)
class AggregateRow:
    group: str
    count: int
    absent_count: int
    mean_sdr_db: float | None
    mean_sir_db: float | None
    mean_sar_db: float | None
    mean_est_rms_dbfs: float | None


def aggregate(records: Iterable[MetricsRecord], group_by: str = "overall") -> list[AggregateRow]:
    """Mean metrics per group; absent slots are counted, never averaged in.

    group_by: 'overall', 'instrument', or 'n_active'.
    """
    if group_by == "overall":
        key = lambda r: "overall"
    elif group_by == "instrument":
        key = lambda r: r.instrument
    elif group_by == "n_active":
        key = lambda r: str(r.n_active)
    else:
        raise DataError(f"unknown group_by {group_by!r}")

    groups: dict[str, list[MetricsRecord]] = {}
    for r in records:
        groups.setdefault(key(r), []).append(r)

    rows = []
    for name in sorted(groups):
        members = groups[name]
        present = [r for r in members if not r.absent]
        absent = [r for r in members if r.absent]

        def mean(vals):
            vals = list(vals)
            return float(np.mean(vals)) if vals else None

        rows.append(AggregateRow(
            group=name,
            count=len(present),
            absent_count=len(absent),
            mean_sdr_db=mean(r.sdr_db for r in present),
            mean_sir_db=mean(r.sir_db for r in present),
            mean_sar_db=mean(r.sar_db for r in present),
            mean_est_rms_dbfs=mean(r.est_rms_dbfs for r in members),
        ))
    return rows


def _fmt(x) -> str:
    if x is None:
        return "absent"
    return repr(float(x))


def write_records_csv(path, records: Sequence[MetricsRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["piece_id", "instrument", "n_active", "sdr_db", "sir_db",
                    "sar_db", "est_rms_dbfs"])
        for r in records:
            w.writerow([r.piece_id, r.instrument, r.n_active, _fmt(r.sdr_db),
                        _fmt(r.sir_db), _fmt(r.sar_db), _fmt(r.est_rms_dbfs)])


def write_report_json(path, records: Sequence[MetricsRecord]) -> None:
    doc = {
        "records": [
            {
                "piece_id": r.piece_id,
                "instrument": r.instrument,
                "n_active": r.n_active,
                "sdr_db": r.sdr_db,
                "sir_db": r.sir_db,
                "sar_db": r.sar_db,
                "est_rms_dbfs": r.est_rms_dbfs,
            }
            for r in records
        ],
        "aggregates": {
            by: [vars(row) for row in aggregate(records, by)]
            for by in ("overall", "instrument", "n_active")
        },
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
