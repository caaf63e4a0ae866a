"""Unified diff parsing, application, and generation."""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field
from typing import Mapping


class DiffParseError(Exception):
    """A diff could not be parsed as unified-diff text."""

    def __init__(self, message: str, line_no: int | None = None):
        super().__init__(message if line_no is None else f"line {line_no}: {message}")
        self.message = message
        self.line_no = line_no


class DiffApplyError(Exception):
    """Base class for patch-application failures."""


class TargetMissing(DiffApplyError):
    """The file a diff modifies does not exist."""

    def __init__(self, path: str):
        super().__init__(f"target file missing: {path}")
        self.path = path


class HunkContextMismatch(DiffApplyError):
    """A hunk's context lines disagree with the target file."""

    def __init__(self, path: str, hunk_index: int, detail: str = ""):
        msg = f"hunk #{hunk_index + 1} does not apply to {path}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.path = path
        self.hunk_index = hunk_index


# A diff body line: (op, text, has_newline). op is one of ' ', '+', '-'.
# has_newline=False marks the "\ No newline at end of file" case.
DiffLine = tuple[str, str, bool]


@dataclass
class Hunk:
    old_start: int
    old_count: int
    new_start: int
    new_count: int
    lines: list[DiffLine] = field(default_factory=list)

    def source_lines(self) -> list[str]:
        """Lines the hunk expects in the pre-image, with line endings."""
        out = []
        for op, text, nl in self.lines:
            if op in (" ", "-"):
                out.append(text + ("\n" if nl else ""))
        return out

    def target_lines(self) -> list[str]:
        """Lines the hunk produces in the post-image, with line endings."""
        out = []
        for op, text, nl in self.lines:
            if op in (" ", "+"):
                out.append(text + ("\n" if nl else ""))
        return out


@dataclass
class FileDiff:
    """One file's worth of a unified diff.

    old_path/new_path are None for /dev/null (file creation/deletion).
    Paths are stored without the a/ b/ prefixes.
    """

    old_path: str | None
    new_path: str | None
    hunks: list[Hunk] = field(default_factory=list)
    is_binary: bool = False

    @property
    def path(self) -> str:
        p = self.new_path if self.new_path is not None else self.old_path
        assert p is not None
        return p


_GIT_HEADER_PREFIXES = (
    "diff --git ",
    "index ",
    "new file mode",
    "deleted file mode",
    "old mode",
    "new mode",
    "similarity index",
    "dissimilarity index",
    "rename from",
    "rename to",
    "copy from",
    "copy to",
)


def _parse_diff_path(raw: str) -> str | None:
    # Strip GNU timestamps ("--- a/f\t2024-01-02 ...") and a/ b/ prefixes.
    path = raw.split("\t", 1)[0].strip()
    if path == "/dev/null":
        return None
    if path.startswith(("a/", "b/")):
        path = path[2:]
    return path


def _parse_hunk_header(line: str, line_no: int) -> tuple[int, int, int, int]:
    if not line.startswith("@@ "):
        raise DiffParseError(f"expected hunk header, got {line!r}", line_no)
    try:
        body = line[3 : line.index(" @@", 3)]
        old_part, new_part = body.split(" ")
        if not (old_part.startswith("-") and new_part.startswith("+")):
            raise ValueError(body)

        def span(part: str) -> tuple[int, int]:
            nums = part[1:].split(",")
            start = int(nums[0])
            count = int(nums[1]) if len(nums) > 1 else 1
            return start, count

        old_start, old_count = span(old_part)
        new_start, new_count = span(new_part)
    except ValueError as exc:
        raise DiffParseError(f"malformed hunk header {line!r}", line_no) from exc
    return old_start, old_count, new_start, new_count


def parse_unified_diff(text: str) -> list[FileDiff]:
    """Parse unified-diff text into per-file structures.

    Accepts GNU-style diffs with a/ b/ prefixes; git extended header lines
    are tolerated and skipped. Raises DiffParseError on malformed input.
    """
    if text.strip() == "":
        return []
    lines = text.split("\n")
    # split("\n") leaves one trailing "" when the text ends with a newline.
    if lines and lines[-1] == "":
        lines.pop()

    diffs: list[FileDiff] = []
    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]
        if line.startswith(_GIT_HEADER_PREFIXES) or line == "":
            i += 1
            continue
        if line.startswith("Binary files ") and line.endswith(" differ"):
            body = line[len("Binary files ") : -len(" differ")]
            parts = body.split(" and ")
            old = _parse_diff_path(parts[0]) if len(parts) == 2 else None
            new = _parse_diff_path(parts[1]) if len(parts) == 2 else old
            diffs.append(FileDiff(old_path=old, new_path=new, is_binary=True))
            i += 1
            continue
        if not line.startswith("--- "):
            raise DiffParseError(f"expected '--- ' file header, got {line!r}", i + 1)
        old_path = _parse_diff_path(line[4:])
        i += 1
        if i >= n or not lines[i].startswith("+++ "):
            raise DiffParseError("missing '+++ ' file header", i + 1)
        new_path = _parse_diff_path(lines[i][4:])
        if old_path is None and new_path is None:
            raise DiffParseError("both sides of a file diff are /dev/null", i + 1)
        i += 1

        fdiff = FileDiff(old_path=old_path, new_path=new_path)
        while i < n and lines[i].startswith("@@ "):
            old_start, old_count, new_start, new_count = _parse_hunk_header(lines[i], i + 1)
            i += 1
            hunk = Hunk(old_start, old_count, new_start, new_count)
            seen_old = seen_new = 0
            while i < n and (seen_old < old_count or seen_new < new_count):
                body = lines[i]
                if body.startswith("\\"):
                    if not hunk.lines:
                        raise DiffParseError("'\\ No newline' with no preceding line", i + 1)
                    op, text_, _ = hunk.lines[-1]
                    hunk.lines[-1] = (op, text_, False)
                    i += 1
                    continue
                op, text_ = (body[0], body[1:]) if body else (" ", "")
                if op not in (" ", "+", "-"):
                    raise DiffParseError(f"unexpected line inside hunk: {body!r}", i + 1)
                if op in (" ", "-"):
                    seen_old += 1
                if op in (" ", "+"):
                    seen_new += 1
                if seen_old > old_count or seen_new > new_count:
                    raise DiffParseError("hunk is longer than its header declares", i + 1)
                hunk.lines.append((op, text_, True))
                i += 1
            if seen_old != old_count or seen_new != new_count:
                raise DiffParseError("hunk is shorter than its header declares", i + 1)
            # Trailing no-newline marker for the final hunk line.
            if i < n and lines[i].startswith("\\"):
                op, text_, _ = hunk.lines[-1]
                hunk.lines[-1] = (op, text_, False)
                i += 1
            fdiff.hunks.append(hunk)
        diffs.append(fdiff)
    return diffs


def split_lines(content: str) -> list[str]:
    """Split into lines that keep their endings ('\\n' only)."""
    if content == "":
        return []
    lines = content.split("\n")
    tail = lines.pop()
    out = [ln + "\n" for ln in lines]
    if tail != "":
        out.append(tail)
    return out


def apply_file_diff(content: str | None, fdiff: FileDiff) -> str | None:
    """Apply one file's hunks to its current content.

    content is None when the file does not exist; a None return means the
    file is deleted. Raises TargetMissing/HunkContextMismatch; the input is
    never mutated.
    """
    path = fdiff.path
    if fdiff.is_binary:
        raise DiffApplyError(f"cannot apply binary diff marker for {path}")
    if fdiff.old_path is None:
        if content is not None:
            raise HunkContextMismatch(path, 0, "file to create already exists")
        old_lines: list[str] = []
    else:
        if content is None:
            raise TargetMissing(path)
        old_lines = split_lines(content)

    new_lines: list[str] = []
    ptr = 0
    for idx, hunk in enumerate(fdiff.hunks):
        pos = hunk.old_start - 1 if hunk.old_count > 0 else hunk.old_start
        if pos < ptr or pos > len(old_lines):
            raise HunkContextMismatch(path, idx, "hunk start out of range")
        new_lines.extend(old_lines[ptr:pos])
        expected = hunk.source_lines()
        actual = old_lines[pos : pos + len(expected)]
        if actual != expected:
            raise HunkContextMismatch(path, idx, "context lines differ")
        new_lines.extend(hunk.target_lines())
        ptr = pos + len(expected)
    new_lines.extend(old_lines[ptr:])

    if fdiff.new_path is None:
        # Deletion must consume the whole file.
        if new_lines:
            raise HunkContextMismatch(path, max(len(fdiff.hunks) - 1, 0), "deletion leaves content behind")
        return None
    return "".join(new_lines)


def _format_range(start: int, stop: int) -> str:
    beginning = start + 1
    length = stop - start
    if length == 1:
        return str(beginning)
    if length == 0:
        beginning -= 1
    return f"{beginning},{length}"


def _emit_line(out: list[str], op: str, line: str) -> None:
    if line.endswith("\n"):
        out.append(op + line)
    else:
        out.append(op + line + "\n")
        out.append("\\ No newline at end of file\n")


def make_unified_diff(
    a_text: str,
    b_text: str,
    a_label: str,
    b_label: str,
    context: int = 3,
) -> str:
    """Render a unified diff of two texts with explicit no-newline markers."""
    a_lines = split_lines(a_text)
    b_lines = split_lines(b_text)
    matcher = difflib.SequenceMatcher(a=a_lines, b=b_lines, autojunk=False)
    out: list[str] = []
    for group in matcher.get_grouped_opcodes(context):
        first, last = group[0], group[-1]
        out.append(
            f"@@ -{_format_range(first[1], last[2])} +{_format_range(first[3], last[4])} @@\n"
        )
        for tag, i1, i2, j1, j2 in group:
            if tag == "equal":
                for line in a_lines[i1:i2]:
                    _emit_line(out, " ", line)
                continue
            if tag in ("replace", "delete"):
                for line in a_lines[i1:i2]:
                    _emit_line(out, "-", line)
            if tag in ("replace", "insert"):
                for line in b_lines[j1:j2]:
                    _emit_line(out, "+", line)
    if not out:
        return ""
    return f"--- {a_label}\n+++ {b_label}\n" + "".join(out)


def _is_binary(content: str) -> bool:
    return "\x00" in content


def diff_trees(base: Mapping[str, str], target: Mapping[str, str], context: int = 3) -> str:
    """Unified diff between two path->content trees, lexicographic path order.

    Additions diff against /dev/null, deletions against it on the new side.
    Empty-file additions/deletions are emitted as a header-only entry. Binary
    contents (embedded NUL) produce a "Binary files ... differ" marker.
    """
    pieces: list[str] = []
    for path in sorted(set(base) | set(target)):
        old = base.get(path)
        new = target.get(path)
        if old == new:
            continue
        if (old is not None and _is_binary(old)) or (new is not None and _is_binary(new)):
            pieces.append(f"Binary files a/{path} and b/{path} differ\n")
            continue
        if old is None:
            if new == "":
                pieces.append(f"--- /dev/null\n+++ b/{path}\n")
            else:
                pieces.append(make_unified_diff("", new or "", "/dev/null", f"b/{path}", context))
        elif new is None:
            if old == "":
                pieces.append(f"--- a/{path}\n+++ /dev/null\n")
            else:
                pieces.append(make_unified_diff(old, "", f"a/{path}", "/dev/null", context))
        else:
            pieces.append(make_unified_diff(old, new, f"a/{path}", f"b/{path}", context))
    return "".join(pieces)


def apply_diff_to_tree(tree: Mapping[str, str], diff_text: str) -> tuple[dict[str, str], list[str]]:
    """Apply a unified diff to a path->content tree.

    Returns (new tree, list of touched paths). All-or-nothing: raises
    without partial effects if any file fails.
    """
    fdiffs = parse_unified_diff(diff_text)
    new_tree = dict(tree)
    touched: list[str] = []
    for fdiff in fdiffs:
        source_key = fdiff.old_path if fdiff.old_path is not None else fdiff.path
        result = apply_file_diff(new_tree.get(source_key), fdiff)
        if result is None:
            del new_tree[source_key]
        else:
            if fdiff.old_path is not None and fdiff.old_path != fdiff.path:
                del new_tree[fdiff.old_path]
            new_tree[fdiff.path] = result
        touched.append(fdiff.path)
    return new_tree, touched


def diff_file_paths(diff_text: str) -> list[str]:
    """Paths touched by a diff, in diff order."""
    return [fd.path for fd in parse_unified_diff(diff_text)]
