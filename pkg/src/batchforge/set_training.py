"""Sample-efficient training: the easy/hard sample state machine.

Each epoch every active sample gets one prediction record (was it
classified correctly, and with what confidence). A sample whose last
``window`` consecutive epochs were all correct with confidence strictly
above ``tau`` is easy and is removed from training. Removed samples keep
being evaluated forward-only; as soon as their latest evaluation is wrong
or under-confident they rejoin the active set, with a fresh window so one
lucky epoch cannot re-remove them immediately.

Setting ``tau`` to 1.0 disables removal entirely (confidence never
exceeds 1), which makes the no-filtering baseline a special case rather
than a separate code path.

Optimizer updates and forward passes are tracked separately: filtering
cuts updates, but monitoring removed samples still costs forward passes.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1


class SetError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class SetConfig:
    """Filtering thresholds.

    start_epoch is the first epoch at which filtering may act; it
    defaults to ``window`` so no sample is judged before a full window
    of evidence exists. Removal at epoch e additionally requires
    e >= start_epoch + window - 1. reeval_stride controls how often
    removed samples are re-checked (1 = every epoch).
    """

    tau: float
    window: int
    start_epoch: int | None = None
    reeval_stride: int = 1

    def __post_init__(self):
        if not (0.0 <= self.tau <= 1.0):
            raise SetError("TAU_OUT_OF_RANGE", f"tau must be in [0, 1], got {self.tau}")
        if self.window < 1:
            raise SetError("ZERO_WINDOW", "window must be >= 1")
        if self.start_epoch is None:
            object.__setattr__(self, "start_epoch", self.window)
        if self.start_epoch < 0:
            raise SetError("NEGATIVE_START", "start_epoch must be >= 0")
        if self.reeval_stride < 1:
            raise SetError("ZERO_STRIDE", "reeval_stride must be >= 1")


class SampleStatus(str, Enum):
    ACTIVE = "active"
    REMOVED = "removed"


@dataclass
class SampleRecord:
    """Rolling evidence for one sample: (epoch, correct, confidence)."""

    sample_id: int
    history: deque
    status: SampleStatus = SampleStatus.ACTIVE

    def latest(self) -> tuple[int, bool, float] | None:
        return self.history[-1] if self.history else None


@dataclass(frozen=True)
class EpochTransition:
    """What finalize_epoch decided."""

    epoch: int
    newly_removed: np.ndarray
    readded: np.ndarray
    active_count: int  # samples that trained this epoch
    active_next: int  # samples active for the next epoch
    forward_passes: int  # cumulative

    def __eq__(self, other) -> bool:
        if not isinstance(other, EpochTransition):
            return NotImplemented
        return (
            self.epoch == other.epoch
            and self.active_count == other.active_count
            and self.active_next == other.active_next
            and self.forward_passes == other.forward_passes
            and np.array_equal(self.newly_removed, other.newly_removed)
            and np.array_equal(self.readded, other.readded)
        )


class SetState:
    """Per-sample histories plus the active/removed partition.

    Not internally locked: concurrent evaluation workers may call
    record_prediction only if calls are externally ordered per sample id,
    and finalize_epoch requires exclusive access.
    """

    def __init__(self, num_samples: int, config: SetConfig):
        self.config = config
        self.num_samples = num_samples
        self.epoch = 0
        self.records = {
            i: SampleRecord(i, deque(maxlen=config.window)) for i in range(num_samples)
        }
        self.removed_count = 0
        self.readded_count = 0
        self.forward_passes = 0

    # -- recording ---------------------------------------------------

    def record_prediction(self, sample_id: int, correct: bool, confidence: float) -> None:
        if sample_id not in self.records:
            raise SetError("UNKNOWN_SAMPLE", f"sample {sample_id} not tracked")
        if not (0.0 <= confidence <= 1.0):
            raise SetError(
                "CONFIDENCE_OUT_OF_RANGE", f"confidence {confidence} outside [0, 1]"
            )
        self.records[sample_id].history.append((self.epoch, bool(correct), float(confidence)))
        self.forward_passes += 1

    def record_batch(
        self, sample_ids: Iterable[int], correct: Sequence[bool], confidence: Sequence[float]
    ) -> None:
        for sid, ok, conf in zip(sample_ids, correct, confidence):
            self.record_prediction(int(sid), bool(ok), float(conf))

    # -- queries -----------------------------------------------------

    def active_samples(self) -> np.ndarray:
        """Sorted ids currently in the training set."""
        return np.asarray(
            sorted(i for i, r in self.records.items() if r.status is SampleStatus.ACTIVE),
            dtype=np.int64,
        )

    def removed_samples(self) -> np.ndarray:
        return np.asarray(
            sorted(i for i, r in self.records.items() if r.status is SampleStatus.REMOVED),
            dtype=np.int64,
        )

    def reevaluation_plan(self) -> np.ndarray:
        """Removed ids due a forward-only evaluation this epoch."""
        if self.epoch % self.config.reeval_stride != 0:
            return np.empty(0, dtype=np.int64)
        return self.removed_samples()

    # -- epoch transition ----------------------------------------------

    def _is_easy(self, entry: tuple[int, bool, float]) -> bool:
        _, correct, confidence = entry
        return correct and confidence > self.config.tau

    def finalize_epoch(self) -> EpochTransition:
        """Apply the removal/re-add rules and advance to the next epoch."""
        cfg = self.config
        epoch = self.epoch
        active_now = 0
        missing = []
        newly_removed = []
        readded = []
        removal_open = epoch >= cfg.start_epoch + cfg.window - 1
        for sid, rec in self.records.items():
            if rec.status is SampleStatus.ACTIVE:
                active_now += 1
                last = rec.latest()
                if last is None or last[0] != epoch:
                    missing.append(sid)
                    continue
                if (
                    removal_open
                    and len(rec.history) == cfg.window
                    and all(self._is_easy(entry) for entry in rec.history)
                ):
                    newly_removed.append(sid)
            else:
                last = rec.latest()
                if last is not None and not self._is_easy(last):
                    readded.append(sid)
        if missing:
            shown = ", ".join(str(i) for i in missing[:10])
            more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
            raise SetError(
                "MISSING_RECORDS", f"active samples without epoch-{epoch} records: {shown}{more}"
            )
        for sid in newly_removed:
            self.records[sid].status = SampleStatus.REMOVED
        for sid in readded:
            rec = self.records[sid]
            rec.status = SampleStatus.ACTIVE
            rec.history.clear()  # fresh window after re-adding
        self.removed_count += len(newly_removed)
        self.readded_count += len(readded)
        self.epoch += 1
        active_next = active_now - len(newly_removed) + len(readded)
        return EpochTransition(
            epoch=epoch,
            newly_removed=np.asarray(sorted(newly_removed), dtype=np.int64),
            readded=np.asarray(sorted(readded), dtype=np.int64),
            active_count=active_now,
            active_next=active_next,
            forward_passes=self.forward_passes,
        )

    # -- serialization -------------------------------------------------

    def to_payload(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "set_state",
            "epoch": self.epoch,
            "num_samples": self.num_samples,
            "config": {
                "tau": self.config.tau,
                "window": self.config.window,
                "start_epoch": self.config.start_epoch,
                "reeval_stride": self.config.reeval_stride,
            },
            "counters": {
                "removed_count": self.removed_count,
                "readded_count": self.readded_count,
                "forward_passes": self.forward_passes,
            },
            "samples": [
                {
                    "id": sid,
                    "status": rec.status.value,
                    "history": [[e, c, conf] for (e, c, conf) in rec.history],
                }
                for sid, rec in sorted(self.records.items())
            ],
        }

    def dump(self, fp: IO[str]) -> None:
        json.dump(self.to_payload(), fp, separators=(",", ":"))

    @classmethod
    def from_payload(cls, payload: dict) -> "SetState":
        version = payload.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SetError("BAD_SCHEMA", f"unsupported set_state schema_version {version!r}")
        cfg = payload["config"]
        state = cls(
            payload["num_samples"],
            SetConfig(
                tau=cfg["tau"],
                window=cfg["window"],
                start_epoch=cfg["start_epoch"],
                reeval_stride=cfg["reeval_stride"],
            ),
        )
        state.epoch = payload["epoch"]
        counters = payload["counters"]
        state.removed_count = counters["removed_count"]
        state.readded_count = counters["readded_count"]
        state.forward_passes = counters["forward_passes"]
        for sample in payload["samples"]:
            rec = state.records[sample["id"]]
            rec.status = SampleStatus(sample["status"])
            for epoch, correct, confidence in sample["history"]:
                rec.history.append((epoch, bool(correct), float(confidence)))
        return state

    @classmethod
    def load(cls, fp: IO[str]) -> "SetState":
        return cls.from_payload(json.load(fp))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SetState):
            return NotImplemented
        return self.to_payload() == other.to_payload()


def write_epoch_report_csv(fp: IO[str], transitions: Iterable[EpochTransition]) -> None:
    """Per-epoch CSV: epoch, active, removed, readded, forward_passes."""
    writer = csv.writer(fp)
    writer.writerow(["epoch", "active", "removed", "readded", "forward_passes"])
    for t in transitions:
        writer.writerow([t.epoch, t.active_count, len(t.newly_removed), len(t.readded), t.forward_passes])
