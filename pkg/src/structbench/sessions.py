"""Experiment session engine: trial schedules, response intake, scoring.

A schedule interleaves standard odd-one-out trials with catch trials
(one catch after every ten standard trials) and marks a break after
every hundred standard trials. Responses are valid only when a key
arrived within the 2000 ms window measured from stimulus onset; catch
trials are scored separately and never enter the headline accuracy.
Each session persists as an append-only JSONL file: one header line,
then one line per response record.
"""

from __future__ import annotations

import hashlib
import json
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dataset import DatasetManifest

RESPONSE_WINDOW_MS = 2000
CATCH_EVERY = 10
BREAK_EVERY = 100
CLIENT_CLOCK_SLACK_MS = 500


class ScheduleError(Exception):
    """Schedule construction failed (insufficient assets, bad parameters)."""


class ProtocolError(Exception):
    """A response arrived out of order, twice, or after finalization."""


@dataclass(frozen=True)
class Trial:
    """One presentation: three images in canonical order plus a display permutation.

    ``image_paths`` keeps the canonical order (the correct image at
    ``correct_index``); subjects see ``display_paths()``, the seeded
    permutation, so the canonical layout never leaks into the answer key.
    """
    kind: str                      # "standard" | "catch"
    image_paths: Tuple[str, str, str]
    correct_index: int             # index into image_paths
    permutation: Tuple[int, int, int]

    def __post_init__(self):
        if self.kind not in ("standard", "catch"):
            raise ScheduleError(f"unknown trial kind {self.kind!r}")
        if sorted(self.permutation) != [0, 1, 2]:
            raise ScheduleError(f"bad permutation {self.permutation}")
        if self.correct_index not in (0, 1, 2):
            raise ScheduleError(f"bad correct index {self.correct_index}")

    def display_paths(self) -> Tuple[str, str, str]:
        return tuple(self.image_paths[p] for p in self.permutation)

    def correct_position(self) -> int:
        """0-based display position of the correct image."""
        return self.permutation.index(self.correct_index)

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "image_paths": list(self.image_paths),
                "correct_index": self.correct_index,
                "permutation": list(self.permutation)}

    @staticmethod
    def from_json_dict(d: dict) -> "Trial":
        return Trial(kind=d["kind"], image_paths=tuple(d["image_paths"]),
                     correct_index=d["correct_index"],
                     permutation=tuple(d["permutation"]))


@dataclass(frozen=True)
class TrialSchedule:
    trials: Tuple[Trial, ...]
    break_after: Tuple[int, ...]   # 0-based trial indices followed by a break
    n_standard: int
    seed: int

    def schedule_hash(self) -> str:
        doc = {"trials": [t.to_json_dict() for t in self.trials],
               "break_after": list(self.break_after),
               "n_standard": self.n_standard, "seed": self.seed}
        blob = json.dumps(doc, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_json_dict(self) -> dict:
        return {"trials": [t.to_json_dict() for t in self.trials],
                "break_after": list(self.break_after),
                "n_standard": self.n_standard, "seed": self.seed}

    @staticmethod
    def from_json_dict(d: dict) -> "TrialSchedule":
        return TrialSchedule(
            trials=tuple(Trial.from_json_dict(t) for t in d["trials"]),
            break_after=tuple(d["break_after"]),
            n_standard=d["n_standard"], seed=d["seed"])


def build_schedule(manifest: DatasetManifest, n_standard: int,
                   seed: int) -> TrialSchedule:
    """Interleave standard and catch trials deterministically for a seed.

    One catch trial follows every block of ten standard trials; a break
    is marked after every hundredth standard trial. Standard trials use
    the manifest's triplets (correct answer: the original); catch trials
    use the reserved catch assets (correct answer: the disrupted image).
    Display order per trial comes from the schedule RNG, which makes the
    answer position uniform over the three slots.
    """
    if n_standard < 1:
        raise ScheduleError(f"n_standard must be positive, got {n_standard}")
    n_catch = n_standard // CATCH_EVERY
    if len(manifest.records) < n_standard:
        raise ScheduleError(
            f"need {n_standard} triplets, manifest has {len(manifest.records)}")
    if len(manifest.catch_records) < n_catch:
        raise ScheduleError(
            f"need {n_catch} catch assets, manifest has {len(manifest.catch_records)}")

    rng = np.random.default_rng(seed)
    standard_order = rng.permutation(len(manifest.records))[:n_standard]
    catch_order = rng.permutation(len(manifest.catch_records))[:n_catch]

    trials: List[Trial] = []
    break_after: List[int] = []
    catch_used = 0
    for k, rec_idx in enumerate(standard_order, start=1):
        rec = manifest.records[int(rec_idx)]
        perm = tuple(int(p) for p in rng.permutation(3))
        trials.append(Trial(kind="standard",
                            image_paths=(rec.original_path,
                                         rec.variant_paths[0],
                                         rec.variant_paths[1]),
                            correct_index=0, permutation=perm))
        if k % BREAK_EVERY == 0:
            break_after.append(len(trials) - 1)
        if k % CATCH_EVERY == 0:
            cat = manifest.catch_records[int(catch_order[catch_used])]
            catch_used += 1
            perm = tuple(int(p) for p in rng.permutation(3))
            trials.append(Trial(kind="catch",
                                image_paths=(cat.original_path,
                                             cat.mirrored_path,
                                             cat.disrupted_path),
                                correct_index=2, permutation=perm))
    return TrialSchedule(trials=tuple(trials), break_after=tuple(break_after),
                         n_standard=n_standard, seed=seed)


@dataclass(frozen=True)
class ResponseRecord:
    session_id: str
    trial_index: int
    key: Optional[int]             # 1..3 or None (timeout)
    elapsed_ms: float
    valid: bool
    correct: bool
    timing_suspect: bool = False   # client clock ahead of the server window
    advanced_ms: Optional[float] = None

    def to_json_dict(self) -> dict:
        return {"session_id": self.session_id, "trial_index": self.trial_index,
                "key": self.key, "elapsed_ms": self.elapsed_ms,
                "valid": self.valid, "correct": self.correct,
                "timing_suspect": self.timing_suspect,
                "advanced_ms": self.advanced_ms}

    @staticmethod
    def from_json_dict(d: dict) -> "ResponseRecord":
        return ResponseRecord(
            session_id=d["session_id"], trial_index=d["trial_index"],
            key=d["key"], elapsed_ms=d["elapsed_ms"], valid=d["valid"],
            correct=d["correct"], timing_suspect=d.get("timing_suspect", False),
            advanced_ms=d.get("advanced_ms"))


@dataclass
class SessionScore:
    accuracy: Optional[float]      # None when no valid standard trials exist
    catch_accuracy: Optional[float]
    n_standard_valid: int
    n_standard_total: int
    n_catch_total: int
    timeouts: int
    undefined_accuracy: bool

    def to_json_dict(self) -> dict:
        return {"accuracy": self.accuracy, "catch_accuracy": self.catch_accuracy,
                "n_standard_valid": self.n_standard_valid,
                "n_standard_total": self.n_standard_total,
                "n_catch_total": self.n_catch_total, "timeouts": self.timeouts,
                "undefined_accuracy": self.undefined_accuracy}


class Session:
    """Serialized state machine over one schedule with an append-only log.

    Responses must arrive in trial order, one per trial; the log on disk
    (when a path is given) gets a header line at creation and one line
    per response, never rewritten.
    """

    def __init__(self, schedule: TrialSchedule, session_id: Optional[str] = None,
                 log_path: Optional[Path] = None, _resuming: bool = False):
        self.session_id = session_id or uuid.uuid4().hex[:12]
        self.schedule = schedule
        self.records: List[ResponseRecord] = []
        self.finalized = False
        self.log_path = Path(log_path) if log_path is not None else None
        if self.log_path is not None and not _resuming:
            header = {"type": "header", "session_id": self.session_id,
                      "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                      "schedule_hash": schedule.schedule_hash(),
                      "schedule": schedule.to_json_dict()}
            with open(self.log_path, "w", encoding="utf-8") as fh:
                fh.write(json.dumps(header, sort_keys=True) + "\n")

    @property
    def current_trial_index(self) -> int:
        return len(self.records)

    @property
    def complete(self) -> bool:
        return len(self.records) == len(self.schedule.trials)

    def trial(self, index: int) -> Trial:
        if not 0 <= index < len(self.schedule.trials):
            raise ProtocolError(f"trial index {index} out of range")
        return self.schedule.trials[index]

    def submit_response(self, trial_index: int, key: Optional[int],
                        elapsed_ms: float,
                        server_elapsed_ms: Optional[float] = None,
                        advanced_ms: Optional[float] = None) -> ResponseRecord:
        """Record one response; the session advances to the next trial.

        Validity is decided by the client-measured ``elapsed_ms`` against
        the 2000 ms window. When the server-side round-trip window is
        supplied and the client claims more time than it plus the slack
        allowance, the record is flagged as timing-suspect but kept.
        """
        if self.finalized:
            raise ProtocolError("session already finalized")
        if trial_index < self.current_trial_index:
            raise ProtocolError(f"duplicate response for trial {trial_index}")
        if trial_index != self.current_trial_index:
            raise ProtocolError(
                f"out-of-order response: got trial {trial_index}, "
                f"expected {self.current_trial_index}")
        if key is not None and key not in (1, 2, 3):
            raise ProtocolError(f"key must be 1, 2, 3 or absent, got {key!r}")
        if elapsed_ms < 0:
            raise ProtocolError(f"negative elapsed_ms {elapsed_ms}")

        trial = self.schedule.trials[trial_index]
        valid = key is not None and elapsed_ms <= RESPONSE_WINDOW_MS
        correct = valid and (key - 1) == trial.correct_position()
        suspect = (server_elapsed_ms is not None
                   and elapsed_ms > server_elapsed_ms + CLIENT_CLOCK_SLACK_MS)
        record = ResponseRecord(
            session_id=self.session_id, trial_index=trial_index, key=key,
            elapsed_ms=float(elapsed_ms), valid=valid, correct=correct,
            timing_suspect=suspect, advanced_ms=advanced_ms)
        self.records.append(record)
        if self.log_path is not None:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_json_dict(), sort_keys=True) + "\n")
        return record

    def score(self) -> SessionScore:
        """Headline accuracy over valid standard trials; catch kept apart."""
        std = [r for r in self.records
               if self.schedule.trials[r.trial_index].kind == "standard"]
        cat = [r for r in self.records
               if self.schedule.trials[r.trial_index].kind == "catch"]
        std_valid = [r for r in std if r.valid]
        timeouts = sum(1 for r in self.records if r.key is None)
        accuracy = (sum(r.correct for r in std_valid) / len(std_valid)
                    if std_valid else None)
        catch_valid = [r for r in cat if r.valid]
        catch_accuracy = (sum(r.correct for r in catch_valid) / len(catch_valid)
                          if catch_valid else None)
        return SessionScore(
            accuracy=accuracy, catch_accuracy=catch_accuracy,
            n_standard_valid=len(std_valid), n_standard_total=len(std),
            n_catch_total=len(cat), timeouts=timeouts,
            undefined_accuracy=not std_valid)

    def finalize(self) -> SessionScore:
        self.finalized = True
        return self.score()

    @staticmethod
    def load(log_path) -> "Session":
        """Rebuild a session from its JSONL log (header + response lines)."""
        log_path = Path(log_path)
        lines = log_path.read_text(encoding="utf-8").splitlines()
        if not lines:
            raise ProtocolError(f"empty session log {log_path}")
        header = json.loads(lines[0])
        if header.get("type") != "header":
            raise ProtocolError(f"first line of {log_path} is not a session header")
        schedule = TrialSchedule.from_json_dict(header["schedule"])
        session = Session(schedule, session_id=header["session_id"],
                          log_path=log_path, _resuming=True)
        for line in lines[1:]:
            record = ResponseRecord.from_json_dict(json.loads(line))
            if record.trial_index != session.current_trial_index:
                raise ProtocolError(
                    f"log {log_path} has records out of order at trial "
                    f"{record.trial_index}")
            session.records.append(record)
        return session
