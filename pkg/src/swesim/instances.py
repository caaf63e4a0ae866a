"""SWE task instances: schema, validation, loading, deduplication."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .diffs import DiffParseError, parse_unified_diff

SCHEMA_KEYS = (
    "repo",
    "instance_id",
    "base_commit",
    "hints_text",
    "problem_statement",
    "FAIL_TO_PASS",
    "PASS_TO_PASS",
    "gold_patch",
    "test_patch",
)

_COMMIT_RE = re.compile(r"^[0-9a-fA-F]{7,40}$")


class InstanceError(Exception):
    """Base class for instance-schema violations."""


class MissingKey(InstanceError):
    def __init__(self, name: str):
        super().__init__(f"missing required key: {name}")
        self.name = name


class MalformedDiff(InstanceError):
    def __init__(self, fieldname: str, line_no: int | None, detail: str = ""):
        loc = f" at line {line_no}" if line_no is not None else ""
        super().__init__(f"{fieldname} is not a valid unified diff{loc}" + (f": {detail}" if detail else ""))
        self.field = fieldname
        self.line = line_no


class EmptyProblemStatement(InstanceError):
    def __init__(self) -> None:
        super().__init__("problem_statement is empty")


class IoFailure(Exception):
    """Dataset file could not be read."""


class EmptyDataset(Exception):
    """Dataset file contained zero parseable instances."""


@dataclass(frozen=True)
class Instance:
    """One SWE task: repository snapshot, problem statement, validation tests."""

    repo: str
    instance_id: str
    base_commit: str
    problem_statement: str
    fail_to_pass: tuple[str, ...]
    pass_to_pass: tuple[str, ...]
    gold_patch: str
    test_patch: str
    hints_text: str = ""

    @property
    def evaluable(self) -> bool:
        """An instance is evaluable only when it has fail-to-pass tests."""
        return len(self.fail_to_pass) > 0

    def to_record(self) -> dict:
        return {
            "repo": self.repo,
            "instance_id": self.instance_id,
            "base_commit": self.base_commit,
            "hints_text": self.hints_text,
            "problem_statement": self.problem_statement,
            "FAIL_TO_PASS": list(self.fail_to_pass),
            "PASS_TO_PASS": list(self.pass_to_pass),
            "gold_patch": self.gold_patch,
            "test_patch": self.test_patch,
        }


@dataclass
class DatasetReport:
    """Acceptance funnel for a loaded or mined dataset."""

    total: int = 0
    accepted: int = 0
    rejected_by_reason: dict[str, int] = field(default_factory=dict)

    def reject(self, reason: str) -> None:
        self.total += 1
        self.rejected_by_reason[reason] = self.rejected_by_reason.get(reason, 0) + 1

    def accept(self) -> None:
        self.total += 1
        self.accepted += 1

    def counts_conserved(self) -> bool:
        return self.accepted + sum(self.rejected_by_reason.values()) == self.total

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "accepted": self.accepted,
            "rejected_by_reason": dict(self.rejected_by_reason),
        }


def parse_instance(record: dict) -> Instance:
    """Validate a raw key-value record against the instance schema.

    Raises MissingKey, MalformedDiff, or EmptyProblemStatement. Test lists
    are stored as opaque strings; fail_to_pass may be empty, which marks the
    instance non-evaluable rather than rejecting it.
    """
    for key in SCHEMA_KEYS:
        if key == "hints_text":
            continue  # optional per schema
        if key not in record:
            raise MissingKey(key)
    problem = str(record["problem_statement"])
    if not problem.strip():
        raise EmptyProblemStatement()
    base_commit = str(record["base_commit"])
    if not _COMMIT_RE.match(base_commit):
        raise InstanceError(f"base_commit is not a 7-40 char hex hash: {base_commit!r}")
    instance_id = str(record["instance_id"])
    if not instance_id.strip():
        raise InstanceError("instance_id is empty")
    for fieldname in ("gold_patch", "test_patch"):
        try:
            parse_unified_diff(str(record[fieldname]))
        except DiffParseError as exc:
            raise MalformedDiff(fieldname, exc.line_no, exc.message) from exc
    hints = record.get("hints_text") or ""
    return Instance(
        repo=str(record["repo"]),
        instance_id=instance_id,
        base_commit=base_commit,
        problem_statement=problem,
        fail_to_pass=tuple(str(t) for t in record["FAIL_TO_PASS"]),
        pass_to_pass=tuple(str(t) for t in record["PASS_TO_PASS"]),
        gold_patch=str(record["gold_patch"]),
        test_patch=str(record["test_patch"]),
        hints_text=str(hints),
    )


def load_dataset(path: str | Path) -> tuple[list[Instance], DatasetReport]:
    """Load a JSONL dataset, one instance per line, order preserved.

    Every line either yields an Instance or increments a rejection reason in
    the report. Raises IoFailure if the file cannot be read and EmptyDataset
    if no line parses.
    """
    report = DatasetReport()
    instances: list[Instance] = []
    seen_ids: set[str] = set()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read dataset {path}: {exc}") from exc
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            report.reject("InvalidJson")
            continue
        try:
            instance = parse_instance(record)
        except MissingKey:
            report.reject("MissingKey")
            continue
        except MalformedDiff:
            report.reject("MalformedDiff")
            continue
        except EmptyProblemStatement:
            report.reject("EmptyProblemStatement")
            continue
        except InstanceError:
            report.reject("InvalidField")
            continue
        if instance.instance_id in seen_ids:
            report.reject("DuplicateId")
            continue
        seen_ids.add(instance.instance_id)
        report.accept()
        instances.append(instance)
    if not instances:
        raise EmptyDataset(f"no parseable instances in {path}")
    return instances, report


_ID_NUMBER_RE = re.compile(r"^(?P<repo>.+?)[-#](?P<number>\d+)$")


def dedup_key(instance_id: str) -> str:
    """Normalized "repo#number" key for cross-dataset deduplication.

    instance_id conventions "owner__name-123" and "owner/name#123" both map
    to "owner/name#123" lowercased; ids without a trailing number fall back
    to the lowercased id itself.
    """
    m = _ID_NUMBER_RE.match(instance_id.strip())
    if not m:
        return instance_id.strip().lower()
    repo = m.group("repo").replace("__", "/").lower()
    return f"{repo}#{m.group('number')}"


def dedup_instances(candidates: list[Instance], reference_keys: set[str]) -> list[Instance]:
    """Drop candidates whose key is already known, keeping first occurrences.

    reference_keys holds normalized "repo#number" keys; order of survivors
    is stable and the operation is idempotent.
    """
    survivors: list[Instance] = []
    seen: set[str] = set(reference_keys)
    for cand in candidates:
        key = dedup_key(cand.instance_id)
        if key in seen:
            continue
        seen.add(key)
        survivors.append(cand)
    return survivors
