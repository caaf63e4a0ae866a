"""Issue/PR candidate mining with heuristic quality filters."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from .instances import DatasetReport

BOT_AUTHOR_RE = re.compile(r"(\[bot\]$|dependabot|renovate|github-actions)", re.IGNORECASE)
BUG_KEYWORD_RE = re.compile(
    r"\b(bug|error|fail|crash|exception|regression|broken|incorrect)", re.IGNORECASE
)

MIN_COMMENT_LENGTH = 30  # a "high-quality" comment: non-bot and at least this long


@dataclass(frozen=True)
class MiningRules:
    min_title_chars: int = 20  # exclusive: title must exceed this
    min_body_chars: int = 200  # exclusive: body must exceed this
    min_comments: int = 3  # inclusive
    min_files: int = 1
    max_files: int = 20
    min_churn: int = 1
    max_churn: int = 2000
    max_patch_chars: int = 10_000


@dataclass(frozen=True)
class MinedCandidate:
    """One crawled issue-PR pair with its filter statistics."""

    repo: str
    number: int
    title: str
    body: str
    author: str = ""
    comment_count: int = 0
    files_changed: int = 0
    churn_lines: int = 0
    patch_chars: int = 0
    linked_patch: str = ""
    base_commit: str = ""
    hints_text: str = ""

    @property
    def key(self) -> str:
        return f"{self.repo.lower()}#{self.number}"


def parse_candidate(record: dict) -> MinedCandidate:
    """Build a candidate from a raw archive record.

    When a full comment list is present, comment_count becomes the number of
    high-quality (non-bot, non-trivial) comments; otherwise the precomputed
    count is trusted.
    """
    patch = str(record.get("linked_patch", record.get("patch", "")))
    if "comments" in record and isinstance(record["comments"], list):
        count = 0
        for comment in record["comments"]:
            author = str(comment.get("author", ""))
            body = str(comment.get("body", ""))
            if BOT_AUTHOR_RE.search(author):
                continue
            if len(body) >= MIN_COMMENT_LENGTH:
                count += 1
    else:
        count = int(record.get("comment_count", 0))
    churn = record.get("churn_lines")
    if churn is None:
        churn = int(record.get("additions", 0)) + int(record.get("deletions", 0))
    return MinedCandidate(
        repo=str(record["repo"]),
        number=int(record["number"]),
        title=str(record.get("title", "")),
        body=str(record.get("body", "")),
        author=str(record.get("author", "")),
        comment_count=count,
        files_changed=int(record.get("files_changed", 0)),
        churn_lines=int(churn),
        patch_chars=int(record.get("patch_chars", len(patch))),
        linked_patch=patch,
        base_commit=str(record.get("base_commit", "")),
        hints_text=str(record.get("hints_text", "")),
    )


def rejection_reason(candidate: MinedCandidate, reference_keys: set[str], rules: MiningRules) -> str | None:
    """First failing rule, or None when the candidate is accepted."""
    if BOT_AUTHOR_RE.search(candidate.author):
        return "bot_author"
    if len(candidate.title) <= rules.min_title_chars:
        return "title_too_short"
    if len(candidate.body) <= rules.min_body_chars:
        return "body_too_short"
    if candidate.comment_count < rules.min_comments:
        return "too_few_comments"
    if not (BUG_KEYWORD_RE.search(candidate.title) or BUG_KEYWORD_RE.search(candidate.body)):
        return "no_bug_keyword"
    if not (rules.min_files <= candidate.files_changed <= rules.max_files):
        return "file_count"
    if not (rules.min_churn <= candidate.churn_lines <= rules.max_churn):
        return "churn"
    if candidate.patch_chars > rules.max_patch_chars:
        return "patch_size"
    if candidate.key in reference_keys:
        return "duplicate"
    return None


def mine_instances(
    records: Iterable[MinedCandidate | dict],
    reference_keys: set[str],
    rules: MiningRules = MiningRules(),
) -> tuple[list[MinedCandidate], DatasetReport]:
    """Filter crawled records down to usable task candidates.

    The accept set depends only on each record and the reference keys, so it
    is invariant under permutation of the input; the report counts every
    record under its first failing rule.
    """
    report = DatasetReport()
    accepted: list[MinedCandidate] = []
    keys = set(reference_keys)
    for record in records:
        if isinstance(record, dict):
            try:
                candidate = parse_candidate(record)
            except (KeyError, TypeError, ValueError):
                report.reject("malformed_record")
                continue
        else:
            candidate = record
        reason = rejection_reason(candidate, keys, rules)
        if reason is not None:
            report.reject(reason)
            continue
        report.accept()
        accepted.append(candidate)
    return accepted, report


def candidate_to_instance_record(candidate: MinedCandidate) -> dict:
    """Emit the accepted candidate in the task-instance dataset schema.

    Mined instances carry no validation tests yet, so they load as
    non-evaluable (transition-data only) until tests are attached.
    """
    return {
        "repo": candidate.repo,
        "instance_id": f"{candidate.repo.replace('/', '__')}-{candidate.number}",
        "base_commit": candidate.base_commit,
        "hints_text": candidate.hints_text,
        "problem_statement": f"{candidate.title}\n\n{candidate.body}",
        "FAIL_TO_PASS": [],
        "PASS_TO_PASS": [],
        "gold_patch": candidate.linked_patch,
        "test_patch": "",
    }
