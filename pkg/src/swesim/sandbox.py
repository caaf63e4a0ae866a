"""Deterministic workspace: file system plus terminal emulation.

The workspace holds an immutable base file tree and an overlay of agent
edits. Navigation and editing actions are executed here without ever
spawning a real process; execution-style commands are classified for the
learned transition model instead.
"""

from __future__ import annotations

import fnmatch
import re
import shlex
import tarfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from . import diffs

EDITOR_KINDS = ("editor_view", "editor_create", "editor_str_replace", "editor_insert")
ACTION_KINDS = ("bash",) + EDITOR_KINDS + ("submit",)

# Programs the sandbox executes itself. Everything else is either forbidden
# or routed to the transition model.
NAV_ALLOWLIST = {
    "ls", "cat", "head", "tail", "grep", "find", "pwd", "wc", "echo",
    "tree", "stat", "cd",
}

FORBIDDEN_GIT_SUBCOMMANDS = {"log", "show", "blame", "reflog"}

_ENV_ASSIGN_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*=")


@dataclass(frozen=True)
class Action:
    """A single agent action: a shell command, an editor call, or submit."""

    kind: str
    raw: str = ""
    args: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind: {self.kind}")

    @classmethod
    def bash(cls, command: str) -> "Action":
        return cls(kind="bash", raw=command)

    @classmethod
    def submit(cls) -> "Action":
        return cls(kind="submit")

    @classmethod
    def view(cls, path: str, view_range: list[int] | None = None) -> "Action":
        args: dict = {"path": path}
        if view_range is not None:
            args["view_range"] = list(view_range)
        return cls(kind="editor_view", raw=f"view {path}", args=args)

    @classmethod
    def create(cls, path: str, file_text: str) -> "Action":
        return cls(kind="editor_create", raw=f"create {path}", args={"path": path, "file_text": file_text})

    @classmethod
    def str_replace(cls, path: str, old_str: str, new_str: str = "") -> "Action":
        return cls(
            kind="editor_str_replace",
            raw=f"str_replace {path}",
            args={"path": path, "old_str": old_str, "new_str": new_str},
        )

    @classmethod
    def insert(cls, path: str, insert_line: int, new_str: str) -> "Action":
        return cls(
            kind="editor_insert",
            raw=f"insert {path}",
            args={"path": path, "insert_line": insert_line, "new_str": new_str},
        )

    def to_dict(self) -> dict:
        return {"kind": self.kind, "raw": self.raw, "args": dict(self.args)}

    @classmethod
    def from_dict(cls, data: dict) -> "Action":
        return cls(kind=data["kind"], raw=data.get("raw", ""), args=dict(data.get("args", {})))


class ActionClassValue:
    NAVIGATION_EDITING = "NavigationEditing"
    CODE_EXECUTION = "CodeExecution"
    SUBMIT = "Submit"
    FORBIDDEN = "Forbidden"


@dataclass(frozen=True)
class ActionClass:
    value: str
    warning: str | None = None

    def __eq__(self, other: object) -> bool:
        if isinstance(other, str):
            return self.value == other
        if isinstance(other, ActionClass):
            return self.value == other.value
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self.value)


@dataclass(frozen=True)
class StepFeedback:
    """What the agent observes after one step."""

    stdout: str
    stderr: str
    exit_code: int

    def to_dict(self) -> dict:
        return {"stdout": self.stdout, "stderr": self.stderr, "exit_code": self.exit_code}

    @classmethod
    def from_dict(cls, data: dict) -> "StepFeedback":
        return cls(stdout=data["stdout"], stderr=data["stderr"], exit_code=int(data["exit_code"]))


DELETED = None  # overlay marker


@dataclass(frozen=True)
class WorkspaceState:
    """Immutable snapshot of the repository plus the agent's overlay edits.

    base is never mutated; every edit lives in overlay (path -> content, or
    None for a deletion). Paths are repo-relative with '/' separators; the
    workspace is addressed from the outside as root_label (default /repo).
    """

    base: Mapping[str, str]
    overlay: Mapping[str, str | None] = field(default_factory=dict)
    cwd: str = ""
    root_label: str = "/repo"

    @classmethod
    def from_tree(cls, tree: Mapping[str, str], root_label: str = "/repo") -> "WorkspaceState":
        return cls(base=MappingProxyType(dict(tree)), overlay=MappingProxyType({}), root_label=root_label)

    def with_overlay(self, overlay: Mapping[str, str | None], cwd: str | None = None) -> "WorkspaceState":
        return replace(
            self,
            overlay=MappingProxyType(dict(overlay)),
            cwd=self.cwd if cwd is None else cwd,
        )

    def rendered(self) -> dict[str, str]:
        """The live file tree: base with the overlay applied."""
        tree = {p: c for p, c in self.base.items()}
        for path, content in self.overlay.items():
            if content is DELETED:
                tree.pop(path, None)
            else:
                tree[path] = content
        return tree

    def read(self, path: str) -> str | None:
        if path in self.overlay:
            return self.overlay[path]
        return self.base.get(path)

    def exists(self, path: str) -> bool:
        return self.read(path) is not None

    def is_dir(self, path: str) -> bool:
        if path == "":
            return True
        prefix = path + "/"
        for p in self.base:
            if p.startswith(prefix) and self.read(p) is not None:
                return True
        for p, c in self.overlay.items():
            if c is not DELETED and p.startswith(prefix):
                return True
        return False

    def absolute(self, path: str) -> str:
        return self.root_label if path == "" else f"{self.root_label}/{path}"


def fresh_workspace(tree: Mapping[str, str], root_label: str = "/repo") -> WorkspaceState:
    return WorkspaceState.from_tree(tree, root_label=root_label)


def load_tree_from_dir(root: str | Path) -> dict[str, str]:
    """Read a checked-out tree into a path->content map (UTF-8, lossy).

    .git directories are skipped; path separators are normalized to '/'.
    """
    root = Path(root)
    tree: dict[str, str] = {}
    for path in sorted(root.rglob("*")):
        if path.is_dir():
            continue
        rel = path.relative_to(root).as_posix()
        if rel == ".git" or rel.startswith(".git/"):
            continue
        tree[rel] = path.read_bytes().decode("utf-8", errors="replace")
    return tree


def load_tree_from_tar(path: str | Path) -> dict[str, str]:
    """Read a (possibly compressed) tarball into a path->content map."""
    tree: dict[str, str] = {}
    with tarfile.open(path, mode="r:*") as tar:
        names = sorted(m.name for m in tar.getmembers() if m.isfile())
        # Strip a single shared top-level directory, the common tarball layout.
        prefix = ""
        tops = {n.split("/", 1)[0] for n in names}
        if len(tops) == 1 and all("/" in n for n in names):
            prefix = next(iter(tops)) + "/"
        for name in names:
            member = tar.extractfile(name)
            if member is None:
                continue
            rel = name[len(prefix):] if name.startswith(prefix) else name
            if rel == ".git" or rel.startswith(".git/") or "/.git/" in rel:
                continue
            tree[rel] = member.read().decode("utf-8", errors="replace")
    return tree


def materialize_workspace(source: str | Path, root_label: str = "/repo") -> WorkspaceState:
    """Build a workspace from a checkout directory or a tarball."""
    source = Path(source)
    if source.is_dir():
        tree = load_tree_from_dir(source)
    elif source.is_file():
        tree = load_tree_from_tar(source)
    else:
        raise FileNotFoundError(f"workspace source not found: {source}")
    return fresh_workspace(tree, root_label=root_label)


# ---------------------------------------------------------------------------
# Action classification
# ---------------------------------------------------------------------------


def _tokenize(raw: str) -> list[str]:
    lex = shlex.shlex(raw, posix=True, punctuation_chars="|&;<>")
    lex.whitespace_split = True
    return list(lex)


def _split_statements(tokens: list[str]) -> list[tuple[str, list[str]]]:
    """Split a token stream into (joining operator, statement tokens) pairs."""
    statements: list[tuple[str, list[str]]] = []
    current: list[str] = []
    joiner = ";"
    for tok in tokens:
        if tok in (";", "&&", "||"):
            if current:
                statements.append((joiner, current))
            joiner = tok
            current = []
        else:
            current.append(tok)
    if current:
        statements.append((joiner, current))
    return statements


def _segment_argv(segment: list[str]) -> list[str]:
    """A pipeline segment's argv with env prefixes and redirects stripped."""
    i = 0
    while i < len(segment) and _ENV_ASSIGN_RE.match(segment[i]):
        i += 1
    argv: list[str] = []
    while i < len(segment):
        if segment[i] in (">", ">>", "<"):
            i += 2  # skip the redirect target too
            continue
        argv.append(segment[i])
        i += 1
    return argv


def _split_pipeline(tokens: list[str]) -> list[list[str]]:
    segments: list[list[str]] = []
    current: list[str] = []
    for tok in tokens:
        if tok == "|":
            segments.append(current)
            current = []
        else:
            current.append(tok)
    segments.append(current)
    return segments


def _git_classification(args: list[str]) -> str:
    """Classify a git invocation: worktree inspection vs solution-revealing."""
    sub = next((a for a in args if not a.startswith("-")), None)
    if sub is None:
        return ActionClassValue.CODE_EXECUTION
    if sub in FORBIDDEN_GIT_SUBCOMMANDS:
        return ActionClassValue.FORBIDDEN
    if sub == "diff":
        rest = args[args.index(sub) + 1 :]
        for tok in rest:
            if tok == "--":
                break
            if not tok.startswith("-"):
                # Classification is state-free, so any bare token could name a
                # revision; pathspecs must be passed after "--".
                return ActionClassValue.FORBIDDEN
        return ActionClassValue.NAVIGATION_EDITING
    if sub == "status":
        return ActionClassValue.NAVIGATION_EDITING
    return ActionClassValue.CODE_EXECUTION


def _sed_is_navigation(args: list[str]) -> bool:
    if "-i" in args or any(a.startswith("-i") for a in args if a.startswith("-")):
        return True
    if "-n" in args:
        scripts = [a for a in args if not a.startswith("-")]
        return bool(scripts) and scripts[0].endswith("p")
    return False


def classify_action(action: Action) -> ActionClass:
    """Route an action: sandbox, transition model, submit, or forbidden.

    Every action receives exactly one class. Commands that cannot be
    tokenized (unterminated quoting) default to CodeExecution with a
    warning, never an exception.
    """
    if action.kind in EDITOR_KINDS:
        return ActionClass(ActionClassValue.NAVIGATION_EDITING)
    if action.kind == "submit":
        return ActionClass(ActionClassValue.SUBMIT)

    raw = action.raw
    if not raw.strip():
        return ActionClass(ActionClassValue.CODE_EXECUTION, warning="empty command")
    if "$(" in raw or "`" in raw or "<<" in raw:
        return ActionClass(ActionClassValue.CODE_EXECUTION)
    try:
        tokens = _tokenize(raw)
    except ValueError:
        return ActionClass(ActionClassValue.CODE_EXECUTION, warning="unparsable command")

    all_navigation = True
    for _, stmt in _split_statements(tokens):
        for segment in _split_pipeline(stmt):
            argv = _segment_argv(segment)
            if not argv:
                continue
            prog = argv[0].rsplit("/", 1)[-1]
            if prog == "git":
                verdict = _git_classification(argv[1:])
                if verdict == ActionClassValue.FORBIDDEN:
                    return ActionClass(ActionClassValue.FORBIDDEN)
                if verdict == ActionClassValue.CODE_EXECUTION:
                    all_navigation = False
                continue
            if prog == "sed":
                if not _sed_is_navigation(argv[1:]):
                    all_navigation = False
                continue
            if prog not in NAV_ALLOWLIST:
                all_navigation = False
    if all_navigation:
        return ActionClass(ActionClassValue.NAVIGATION_EDITING)
    return ActionClass(ActionClassValue.CODE_EXECUTION)


# ---------------------------------------------------------------------------
# Navigation / editing execution
# ---------------------------------------------------------------------------


class _ExecEnv:
    """Mutable working view of the workspace during one bash action."""

    def __init__(self, state: WorkspaceState):
        self.files = state.rendered()
        self.cwd = state.cwd
        self.root_label = state.root_label
        self.base = state.base

    def resolve(self, raw: str) -> str | None:
        """Canonical repo-relative path, or None when outside the workspace."""
        p = raw.strip()
        if p in ("", "."):
            return self.cwd
        if p == self.root_label:
            parts: list[str] = []
            rest = ""
        elif p.startswith(self.root_label + "/"):
            parts = []
            rest = p[len(self.root_label) + 1 :]
        elif p.startswith("/"):
            return None
        else:
            parts = [c for c in self.cwd.split("/") if c]
            rest = p
        for comp in rest.split("/"):
            if comp in ("", "."):
                continue
            if comp == "..":
                if not parts:
                    return None
                parts.pop()
            else:
                parts.append(comp)
        return "/".join(parts)

    def is_file(self, path: str) -> bool:
        return path in self.files

    def is_dir(self, path: str) -> bool:
        if path == "":
            return True
        prefix = path + "/"
        return any(p.startswith(prefix) for p in self.files)

    def listing(self, path: str) -> tuple[list[str], list[str]]:
        """(subdirs, files) immediately under a directory."""
        prefix = path + "/" if path else ""
        dirs: set[str] = set()
        files: set[str] = set()
        for p in self.files:
            if not p.startswith(prefix):
                continue
            rest = p[len(prefix):]
            if "/" in rest:
                dirs.add(rest.split("/", 1)[0])
            else:
                files.add(rest)
        return sorted(dirs), sorted(files)

    def walk_files(self, path: str) -> list[str]:
        if path == "":
            return sorted(self.files)
        if self.is_file(path):
            return [path]
        prefix = path + "/"
        return sorted(p for p in self.files if p.startswith(prefix))

    def display(self, rel: str) -> str:
        return self.root_label if rel == "" else f"{self.root_label}/{rel}"


def _expand_globs(env: _ExecEnv, args: list[str]) -> list[str]:
    out: list[str] = []
    for arg in args:
        if arg.startswith("-") or not any(ch in arg for ch in "*?["):
            out.append(arg)
            continue
        resolved_dir = env.resolve(arg.rsplit("/", 1)[0]) if "/" in arg else env.cwd
        pattern = arg.rsplit("/", 1)[-1]
        matches: list[str] = []
        if resolved_dir is not None:
            dirs, files = env.listing(resolved_dir)
            for name in sorted(dirs + files):
                if fnmatch.fnmatchcase(name, pattern):
                    prefix = arg.rsplit("/", 1)[0] + "/" if "/" in arg else ""
                    matches.append(prefix + name)
        out.extend(matches if matches else [arg])
    return out


def _parse_flags(args: list[str], taking_value: tuple[str, ...] = ()) -> tuple[set[str], dict[str, str], list[str]]:
    """Split argv into single-letter flags, valued options, and operands."""
    flags: set[str] = set()
    values: dict[str, str] = {}
    operands: list[str] = []
    i = 0
    while i < len(args):
        arg = args[i]
        if arg == "--":
            operands.extend(args[i + 1 :])
            break
        if arg.startswith("--"):
            if "=" in arg:
                key, val = arg[2:].split("=", 1)
                values[key] = val
            else:
                flags.add(arg[2:])
        elif arg.startswith("-") and len(arg) > 1:
            body = arg[1:]
            if body[0] in taking_value:
                if len(body) > 1:
                    values[body[0]] = body[1:]
                else:
                    i += 1
                    values[body[0]] = args[i] if i < len(args) else ""
            elif body.isdigit():
                values["n"] = body
            else:
                flags.update(body)
        else:
            operands.append(arg)
        i += 1
    return flags, values, operands


def _cmd_ls(env: _ExecEnv, args: list[str], stdin: str) -> tuple[str, str, int]:
    flags, _, operands = _parse_flags(args)
    show_hidden = "a" in flags or "A" in flags
    operands = operands or ["."]
    out: list[str] = []
    err: list[str] = []
    status = 0

    resolved: list[tuple[str, str | None]] = [(op, env.resolve(op)) for op in operands]
    file_ops = [(op, r) for op, r in resolved if r is not None and env.is_file(r)]
    dir_ops = [(op, r) for op, r in resolved if r is not None and env.is_dir(r) and not env.is_file(r)]
    missing = [op for op, r in resolved if r is None or (not env.is_file(r) and not env.is_dir(r))]

    for op in missing:
        err.append(f"ls: cannot access '{op}': No such file or directory")
        status = 2
    for op, _ in file_ops:
        out.append(op)
    multi = len(file_ops) + len(dir_ops) > 1
    for idx, (op, rel) in enumerate(dir_ops):
        assert rel is not None
        if multi:
            if idx > 0 or file_ops:
                out.append("")
            out.append(f"{op}:")
        dirs, files = env.listing(rel)
        names = sorted(dirs + files)
        if not show_hidden:
            names = [n for n in names if not n.startswith(".")]
        elif "a" in flags:
            names = sorted([".", ".."] + names)
        if "l" in flags:
            out.append(f"total {len(names)}")
            for name in names:
                if name in (".", "..") or name in dirs:
                    out.append(f"drwxr-xr-x 2 root root 0 Jan  1 00:00 {name}")
                else:
                    target = f"{rel}/{name}" if rel else name
                    size = len(env.files.get(target, "").encode("utf-8"))
                    out.append(f"-rw-r--r-- 1 root root {size} Jan  1 00:00 {name}")
        else:
            out.extend(names)
    stdout = "\n".join(out) + "\n" if out else ""
    stderr = "\n".join(err) + "\n" if err else ""
    return stdout, stderr, status


def _cmd_cat(env: _ExecEnv, args: list[str], stdin: str) -> tuple[str, str, int]:
    flags, _, operands = _parse_flags(args)
    pieces: list[str] = []
    err: list[str] = []
    status = 0
    sources: list[str]
    if not operands:
        sources = [stdin]
    else:
        sources = []
        for op in operands:
            rel = env.resolve(op)
            if rel is None or not env.is_file(rel):
                err.append(f"cat: {op}: No such file or directory")
                status = 1
                continue
            sources.append(env.files[rel])
    text = "".join(sources)
    if "n" in flags:
        numbered = []
        for i, line in enumerate(diffs.split_lines(text), start=1):
            numbered.append(f"{i:6d}\t{line}")
        text = "".join(numbered)
    pieces.append(text)
    return "".join(pieces), "\n".join(err) + "\n" if err else "", status


def _head_tail(env: _ExecEnv, args: list[str], stdin: str, tail: bool) -> tuple[str, str, int]:
    name = "tail" if tail else "head"
    _, values, operands = _parse_flags(args, taking_value=("n",))
    try:
        count = int(values.get("n", "10"))
    except ValueError:
        return "", f"{name}: invalid number of lines: '{values.get('n')}'\n", 1
    out: list[str] = []
    err: list[str] = []
    status = 0
    inputs: list[tuple[str, str]] = []
    if not operands:
        inputs = [("-", stdin)]
    else:
        for op in operands:
            rel = env.resolve(op)
            if rel is None or not env.is_file(rel):
                err.append(f"{name}: cannot open '{op}' for reading: No such file or directory")
                status = 1
                continue
            inputs.append((op, env.files[rel]))
    for idx, (label, text) in enumerate(inputs):
        if len(inputs) > 1:
            if idx > 0:
                out.append("\n")
            out.append(f"==> {label} <==\n")
        lines = diffs.split_lines(text)
        selected = lines[-count:] if tail else lines[:count]
        out.append("".join(selected))
    return "".join(out), "\n".join(err) + "\n" if err else "", status


def _cmd_grep(env: _ExecEnv, args: list[str], stdin: str) -> tuple[str, str, int]:
    flags, values, operands = _parse_flags(args)
    if not operands:
        return "", "Usage: grep [OPTION]... PATTERNS [FILE]...\n", 2
    pattern, *file_args = operands
    recursive = "r" in flags or "R" in flags
    regex_mode = "E" in flags or "G" in flags
    ignore_case = "i" in flags
    invert = "v" in flags

    if regex_mode:
        try:
            compiled = re.compile(pattern, re.IGNORECASE if ignore_case else 0)
        except re.error as exc:
            return "", f"grep: invalid regex: {exc}\n", 2
        matcher = lambda line: bool(compiled.search(line))
    else:
        needle = pattern.lower() if ignore_case else pattern
        matcher = lambda line: needle in (line.lower() if ignore_case else line)

    include_glob = values.get("include")
    inputs: list[tuple[str, str]] = []
    err: list[str] = []
    status_err = False
    if recursive:
        roots = file_args or ["."]
        for root in roots:
            rel = env.resolve(root)
            if rel is None or (not env.is_file(rel) and not env.is_dir(rel)):
                err.append(f"grep: {root}: No such file or directory")
                status_err = True
                continue
            for p in env.walk_files(rel):
                if include_glob and not fnmatch.fnmatchcase(p.rsplit("/", 1)[-1], include_glob):
                    continue
                if p == rel:
                    display = root
                else:
                    suffix = p[len(rel) + 1 :] if rel else p
                    display = f"{root.rstrip('/')}/{suffix}" if root != "/" else f"/{suffix}"
                inputs.append((display, env.files[p]))
    elif not file_args:
        inputs = [("(standard input)", stdin)]
    else:
        for op in file_args:
            rel = env.resolve(op)
            if rel is None or not env.is_file(rel):
                err.append(f"grep: {op}: No such file or directory")
                status_err = True
                continue
            inputs.append((op, env.files[rel]))

    show_name = "H" in flags or recursive or len(inputs) > 1
    if "h" in flags:
        show_name = False
    out: list[str] = []
    matched_any = False
    for label, text in inputs:
        hits: list[tuple[int, str]] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if matcher(line) != invert:
                hits.append((lineno, line))
        if hits:
            matched_any = True
        if "c" in flags:
            prefix = f"{label}:" if show_name else ""
            out.append(f"{prefix}{len(hits)}")
        elif "l" in flags:
            if hits:
                out.append(label)
        else:
            for lineno, line in hits:
                prefix = f"{label}:" if show_name else ""
                if "n" in flags:
                    prefix += f"{lineno}:"
                out.append(prefix + line)
    stdout = "\n".join(out) + "\n" if out else ""
    stderr = "\n".join(err) + "\n" if err else ""
    if status_err:
        return stdout, stderr, 2
    return stdout, stderr, 0 if matched_any else 1


def _cmd_find(env: _ExecEnv, args: list[str], stdin: str) -> tuple[str, str, int]:
    paths: list[str] = []
    i = 0
    name_pat = None
    type_filter = None
    maxdepth = None
    err: list[str] = []
    while i < len(args):
        arg = args[i]
        if arg == "-name":
            i += 1
            name_pat = args[i] if i < len(args) else "*"
        elif arg == "-type":
            i += 1
            type_filter = args[i] if i < len(args) else None
        elif arg == "-maxdepth":
            i += 1
            try:
                maxdepth = int(args[i])
            except (ValueError, IndexError):
                return "", "find: invalid -maxdepth argument\n", 1
        elif arg.startswith("-"):
            return "", f"find: unknown predicate '{arg}'\n", 1
        else:
            paths.append(arg)
        i += 1
    paths = paths or ["."]

    out: list[str] = []
    status = 0
    for root in paths:
        rel = env.resolve(root)
        if rel is None or (not env.is_file(rel) and not env.is_dir(rel)):
            err.append(f"find: '{root}': No such file or directory")
            status = 1
            continue
        entries: list[tuple[str, bool]] = []  # (repo-relative, is_dir)
        if env.is_file(rel):
            entries = [(rel, False)]
        else:
            files = env.walk_files(rel)
            dir_set: set[str] = {rel}
            for p in files:
                parts = p.split("/")
                for k in range(1, len(parts)):
                    anc = "/".join(parts[:k])
                    if rel == "" or anc == rel or anc.startswith(rel + "/"):
                        dir_set.add(anc)
            entries = sorted([(p, False) for p in files] + [(d, True) for d in dir_set])

        base_display = root.rstrip("/") or root
        for p, is_dir in entries:
            if rel == "":
                rest = p
            elif p == rel:
                rest = ""
            else:
                rest = p[len(rel) + 1 :]
            depth = 0 if rest == "" else rest.count("/") + 1
            if maxdepth is not None and depth > maxdepth:
                continue
            if type_filter == "f" and is_dir:
                continue
            if type_filter == "d" and not is_dir:
                continue
            basename = (rest.rsplit("/", 1)[-1] if rest else base_display.rsplit("/", 1)[-1])
            if name_pat is not None and not fnmatch.fnmatchcase(basename, name_pat):
                continue
            display = base_display if rest == "" else f"{base_display}/{rest}"
            out.append(display)
    stdout = "\n".join(out) + "\n" if out else ""
    stderr = "\n".join(err) + "\n" if err else ""
    return stdout, stderr, status


def _cmd_wc(env: _ExecEnv, args: list[str], stdin: str) -> tuple[str, str, int]:
    flags, _, operands = _parse_flags(args)
    which = [f for f in ("l", "w", "c") if f in flags] or ["l", "w", "c"]
    rows: list[tuple[list[int], str]] = []
    err: list[str] = []
    status = 0

    def counts(text: str) -> list[int]:
        vals = {"l": text.count("\n"), "w": len(text.split()), "c": len(text.encode("utf-8"))}
        return [vals[f] for f in which]

    if not operands:
        rows.append((counts(stdin), ""))
    else:
        for op in operands:
            rel = env.resolve(op)
            if rel is None or not env.is_file(rel):
                err.append(f"wc: {op}: No such file or directory")
                status = 1
                continue
            rows.append((counts(env.files[rel]), op))
    if len(rows) > 1:
        totals = [sum(r[0][i] for r in rows) for i in range(len(which))]
        rows.append((totals, "total"))
    out = []
    for vals, label in rows:
        cells = " ".join(str(v) for v in vals)
        out.append(f"{cells} {label}".rstrip())
    stdout = "\n".join(out) + "\n" if out else ""
    return stdout, "\n".join(err) + "\n" if err else "", status


def _cmd_echo(env: _ExecEnv, args: list[str], stdin: str) -> tuple[str, str, int]:
    newline = True
    if args and args[0] == "-n":
        newline = False
        args = args[1:]
    return " ".join(args) + ("\n" if newline else ""), "", 0


def _cmd_pwd(env: _ExecEnv, args: list[str], stdin: str) -> tuple[str, str, int]:
    return env.display(env.cwd) + "\n", "", 0


def _cmd_tree(env: _ExecEnv, args: list[str], stdin: str) -> tuple[str, str, int]:
    _, _, operands = _parse_flags(args)
    root = operands[0] if operands else "."
    rel = env.resolve(root)
    if rel is None or not env.is_dir(rel):
        return f"{root} [error opening dir]\n\n0 directories, 0 files\n", "", 1
    lines = [root if root != "." else "."]
    n_dirs = 0
    n_files = 0

    def walk(dir_rel: str, prefix: str) -> None:
        nonlocal n_dirs, n_files
        dirs, files = env.listing(dir_rel)
        entries = [(d, True) for d in dirs] + [(f, False) for f in files]
        entries.sort(key=lambda e: e[0])
        for idx, (name, is_dir) in enumerate(entries):
            last = idx == len(entries) - 1
            lines.append(f"{prefix}{'└── ' if last else '├── '}{name}")
            if is_dir:
                n_dirs += 1
                walk(f"{dir_rel}/{name}" if dir_rel else name, prefix + ("    " if last else "│   "))
            else:
                n_files += 1

    walk(rel, "")
    lines.append("")
    lines.append(f"{n_dirs} directories, {n_files} files")
    return "\n".join(lines) + "\n", "", 0


def _cmd_stat(env: _ExecEnv, args: list[str], stdin: str) -> tuple[str, str, int]:
    _, _, operands = _parse_flags(args)
    out: list[str] = []
    err: list[str] = []
    status = 0
    for op in operands:
        rel = env.resolve(op)
        if rel is None or (not env.is_file(rel) and not env.is_dir(rel)):
            err.append(f"stat: cannot stat '{op}': No such file or directory")
            status = 1
            continue
        if env.is_file(rel):
            size = len(env.files[rel].encode("utf-8"))
            out.append(f"  File: {op}\n  Size: {size}\n  Type: regular file")
        else:
            out.append(f"  File: {op}\n  Size: 0\n  Type: directory")
    stdout = "\n".join(out) + "\n" if out else ""
    return stdout, "\n".join(err) + "\n" if err else "", status


_SED_ADDR_P = re.compile(r"^(\d+|\$)(,(\d+|\$))?p$")


def _cmd_sed(env: _ExecEnv, args: list[str], stdin: str) -> tuple[str, str, int]:
    quiet = False
    in_place = False
    script = None
    operands: list[str] = []
    i = 0
    while i < len(args):
        arg = args[i]
        if arg == "-n":
            quiet = True
        elif arg == "-i" or arg.startswith("-i"):
            in_place = True
        elif arg == "-e":
            i += 1
            script = args[i] if i < len(args) else None
        elif arg.startswith("-"):
            return "", f"sed: unsupported option {arg}\n", 1
        elif script is None:
            script = arg
        else:
            operands.append(arg)
        i += 1
    if script is None:
        return "", "sed: missing script\n", 1

    def run_script(text: str) -> tuple[str, str | None]:
        lines = text.splitlines(keepends=True)
        m = _SED_ADDR_P.match(script)
        if m and quiet and not in_place:
            start = len(lines) if m.group(1) == "$" else int(m.group(1))
            end = start if m.group(3) is None else (len(lines) if m.group(3) == "$" else int(m.group(3)))
            return "".join(lines[start - 1 : end]), None
        if script.startswith("s") and len(script) > 1:
            delim = script[1]
            parts = script[2:].split(delim)
            if len(parts) < 2:
                return "", "sed: unterminated `s' command"
            pat, repl = parts[0], parts[1]
            sflags = parts[2] if len(parts) > 2 else ""
            count = 0 if "g" in sflags else 1
            repl = repl.replace("\\&", "\x00").replace("&", "\\g<0>").replace("\x00", "&")
            try:
                new = "".join(re.sub(pat, repl, ln, count=count) for ln in lines)
            except re.error as exc:
                return "", f"sed: invalid expression: {exc}"
            return new, None
        return "", f"sed: unsupported script {script!r}"

    if in_place:
        if not operands:
            return "", "sed: -i requires a file operand\n", 1
        for op in operands:
            rel = env.resolve(op)
            if rel is None or not env.is_file(rel):
                return "", f"sed: can't read {op}: No such file or directory\n", 2
            new, errmsg = run_script(env.files[rel])
            if errmsg:
                return "", errmsg + "\n", 1
            env.files[rel] = new
        return "", "", 0

    if operands:
        rel = env.resolve(operands[0])
        if rel is None or not env.is_file(rel):
            return "", f"sed: can't read {operands[0]}: No such file or directory\n", 2
        text = env.files[rel]
    else:
        text = stdin
    out, errmsg = run_script(text)
    if errmsg:
        return "", errmsg + "\n", 1
    return out, "", 0


def _cmd_git(env: _ExecEnv, args: list[str], stdin: str) -> tuple[str, str, int]:
    sub = next((a for a in args if not a.startswith("-")), None)
    if sub == "status":
        lines = []
        for path in sorted(set(env.base) | set(env.files)):
            in_base = path in env.base
            live = path in env.files
            if in_base and not live:
                lines.append(f" D {path}")
            elif not in_base and live:
                lines.append(f"?? {path}")
            elif in_base and live and env.base[path] != env.files[path]:
                lines.append(f" M {path}")
        return "\n".join(lines) + "\n" if lines else "", "", 0
    if sub == "diff":
        rest = args[args.index(sub) + 1 :]
        pathspec = []
        if "--" in rest:
            pathspec = rest[rest.index("--") + 1 :]
        diff_text = diffs.diff_trees(dict(env.base), env.files)
        if pathspec:
            wanted = {env.resolve(p) for p in pathspec}
            kept = []
            for fd in diffs.parse_unified_diff(diff_text):
                if fd.path in wanted:
                    kept.append(fd)
            if not kept:
                return "", "", 0
            sub_tree_base = {fd.path: env.base.get(fd.path, "") for fd in kept if fd.path in env.base}
            sub_tree_new = {fd.path: env.files[fd.path] for fd in kept if fd.path in env.files}
            diff_text = diffs.diff_trees(sub_tree_base, sub_tree_new)
        return diff_text, "", 0
    return "", f"git: unsupported subcommand in sandbox: {sub}\n", 1


_COMMANDS = {
    "ls": _cmd_ls,
    "cat": _cmd_cat,
    "head": lambda env, a, s: _head_tail(env, a, s, tail=False),
    "tail": lambda env, a, s: _head_tail(env, a, s, tail=True),
    "grep": _cmd_grep,
    "find": _cmd_find,
    "wc": _cmd_wc,
    "echo": _cmd_echo,
    "pwd": _cmd_pwd,
    "tree": _cmd_tree,
    "stat": _cmd_stat,
    "sed": _cmd_sed,
    "git": _cmd_git,
}


def _run_segment(env: _ExecEnv, segment: list[str], stdin: str) -> tuple[str, str, int]:
    # Peel env assignments and redirects off the argv.
    argv: list[str] = []
    redirect_out: tuple[str, bool] | None = None  # (path, append)
    redirect_in: str | None = None
    i = 0
    while i < len(segment) and _ENV_ASSIGN_RE.match(segment[i]):
        i += 1
    while i < len(segment):
        tok = segment[i]
        if tok in (">", ">>"):
            i += 1
            if i >= len(segment):
                return "", "bash: syntax error near unexpected token `newline'\n", 2
            redirect_out = (segment[i], tok == ">>")
        elif tok == "<":
            i += 1
            if i >= len(segment):
                return "", "bash: syntax error near unexpected token `newline'\n", 2
            redirect_in = segment[i]
        else:
            argv.append(tok)
        i += 1
    if not argv:
        return "", "", 0

    prog = argv[0].rsplit("/", 1)[-1] if "/" in argv[0] else argv[0]
    args = _expand_globs(env, argv[1:])

    if redirect_in is not None:
        rel = env.resolve(redirect_in)
        if rel is None or not env.is_file(rel):
            return "", f"bash: {redirect_in}: No such file or directory\n", 1
        stdin = env.files[rel]

    if prog == "cd":
        target = args[0] if args else ""
        rel = env.resolve(target or env.root_label)
        if rel is None or not env.is_dir(rel):
            return "", f"bash: cd: {target}: No such file or directory\n", 1
        env.cwd = rel
        stdout, stderr, code = "", "", 0
    elif prog in _COMMANDS:
        stdout, stderr, code = _COMMANDS[prog](env, args, stdin)
    else:
        return "", f"bash: {prog}: command not found\n", 127

    if redirect_out is not None and code in (0, 1):
        path, append = redirect_out
        rel = env.resolve(path)
        if rel is None:
            return "", f"bash: {path}: No such file or directory\n", 1
        if env.is_dir(rel) and rel != "":
            return "", f"bash: {path}: Is a directory\n", 1
        existing = env.files.get(rel, "") if append else ""
        env.files[rel] = existing + stdout
        stdout = ""
    return stdout, stderr, code


def _run_bash(state: WorkspaceState, raw: str) -> tuple[WorkspaceState, StepFeedback]:
    try:
        tokens = _tokenize(raw)
    except ValueError as exc:
        return state, StepFeedback("", f"bash: parse error: {exc}\n", 2)

    env = _ExecEnv(state)
    all_out: list[str] = []
    all_err: list[str] = []
    last_code = 0
    executed_any = False
    for joiner, stmt in _split_statements(tokens):
        if executed_any:
            if joiner == "&&" and last_code != 0:
                continue
            if joiner == "||" and last_code == 0:
                continue
        snapshot_files = dict(env.files)
        snapshot_cwd = env.cwd
        stdin = ""
        stdout = stderr = ""
        code = 0
        for segment in _split_pipeline(stmt):
            stdout, stderr, code = _run_segment(env, segment, stdin)
            all_err.append(stderr)
            stdin = stdout
        # A failing statement must not leave partial edits behind.
        if code not in (0,) and env.files != snapshot_files:
            env.files = snapshot_files
            env.cwd = snapshot_cwd
        all_out.append(stdout)
        last_code = code
        executed_any = True

    new_overlay = dict(state.overlay)
    rendered_before = state.rendered()
    for path in set(rendered_before) | set(env.files):
        before = rendered_before.get(path)
        after = env.files.get(path)
        if before == after:
            continue
        new_overlay[path] = after  # None marks deletion
    for path in list(new_overlay):
        if new_overlay[path] is not DELETED and state.base.get(path) == new_overlay[path]:
            del new_overlay[path]
        elif new_overlay[path] is DELETED and path not in state.base:
            del new_overlay[path]

    feedback = StepFeedback("".join(all_out), "".join(all_err), last_code)
    if feedback.exit_code != 0:
        # Erroring actions leave the workspace bit-identical.
        return state, feedback
    return state.with_overlay(new_overlay, cwd=env.cwd), feedback


def _numbered(text: str, start: int = 1) -> str:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return "".join(f"{i:6d}\t{line}\n" for i, line in enumerate(lines, start=start))


def _edit_snippet(path_abs: str, content: str, around_line: int, context: int = 4) -> str:
    lines = content.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    start = max(1, around_line - context)
    end = min(len(lines), around_line + context)
    window = "".join(f"{i:6d}\t{lines[i - 1]}\n" for i in range(start, end + 1))
    return f"Review the changes in {path_abs}:\n{window}"


def _run_editor(state: WorkspaceState, action: Action) -> tuple[WorkspaceState, StepFeedback]:
    args = action.args
    raw_path = args.get("path", "")
    env = _ExecEnv(state)
    rel = env.resolve(raw_path)
    abs_path = state.absolute(rel) if rel is not None else raw_path

    def fail(msg: str) -> tuple[WorkspaceState, StepFeedback]:
        return state, StepFeedback("", msg if msg.endswith("\n") else msg + "\n", 1)

    if rel is None:
        return fail(f"Invalid path: {raw_path} is outside the workspace")

    if action.kind == "editor_view":
        if env.is_dir(rel) and not env.is_file(rel):
            dirs, files = env.listing(rel)
            lines = []
            for d in dirs:
                lines.append(f"{abs_path}/{d}/")
                sub = f"{rel}/{d}" if rel else d
                sdirs, sfiles = env.listing(sub)
                lines.extend(f"{abs_path}/{d}/{n}/" for n in sdirs)
                lines.extend(f"{abs_path}/{d}/{n}" for n in sfiles)
            lines.extend(f"{abs_path}/{f}" for f in files)
            body = "\n".join(lines) + "\n" if lines else ""
            return state, StepFeedback(f"Files in {abs_path} (up to 2 levels):\n{body}", "", 0)
        if not env.is_file(rel):
            return fail(f"The path {raw_path} does not exist.")
        content = env.files[rel]
        view_range = args.get("view_range")
        if view_range:
            if len(view_range) != 2:
                return fail("view_range must be [start, end]")
            n_lines = len(content.split("\n")) - (1 if content.endswith("\n") else 0) or 1
            start, end = int(view_range[0]), int(view_range[1])
            if end == -1:
                end = n_lines
            if not (1 <= start <= end <= max(n_lines, 1)):
                return fail(f"Invalid view_range {view_range}: file has {n_lines} lines")
            lines = content.split("\n")
            window = "\n".join(lines[start - 1 : end])
            return state, StepFeedback(
                f"Contents of {abs_path}, lines {start}-{end}:\n" + _numbered(window + "\n", start=start),
                "",
                0,
            )
        return state, StepFeedback(f"Contents of {abs_path}:\n" + _numbered(content), "", 0)

    if action.kind == "editor_create":
        if "file_text" not in args:
            return fail("Parameter file_text is required for the create command")
        if env.is_file(rel):
            return fail(f"File already exists at: {abs_path}. Cannot overwrite with create.")
        overlay = dict(state.overlay)
        overlay[rel] = str(args["file_text"])
        return state.with_overlay(overlay), StepFeedback(f"File created successfully at: {abs_path}\n", "", 0)

    if action.kind == "editor_str_replace":
        if "old_str" not in args:
            return fail("Parameter old_str is required for the str_replace command")
        if not env.is_file(rel):
            return fail(f"The path {raw_path} does not exist.")
        content = env.files[rel]
        old_str = str(args["old_str"])
        new_str = str(args.get("new_str") or "")
        count = content.count(old_str)
        if count == 0:
            return fail(
                f"No replacement was performed: old_str did not appear verbatim in {abs_path}."
            )
        if count > 1:
            occ_lines = []
            start = 0
            while True:
                idx = content.find(old_str, start)
                if idx < 0:
                    break
                occ_lines.append(content[:idx].count("\n") + 1)
                start = idx + 1
            return fail(
                f"No replacement was performed: multiple occurrences of old_str at lines {occ_lines} in {abs_path}. Make old_str unique."
            )
        idx = content.find(old_str)
        line_no = content[:idx].count("\n") + 1
        new_content = content.replace(old_str, new_str, 1)
        overlay = dict(state.overlay)
        overlay[rel] = new_content
        snippet = _edit_snippet(abs_path, new_content, line_no)
        feedback = StepFeedback(f"The file {abs_path} has been edited. {snippet}", "", 0)
        return state.with_overlay(overlay), feedback

    if action.kind == "editor_insert":
        if "insert_line" not in args or "new_str" not in args:
            return fail("Parameters insert_line and new_str are required for the insert command")
        if not env.is_file(rel):
            return fail(f"The path {raw_path} does not exist.")
        content = env.files[rel]
        lines = content.split("\n")
        trailing_newline = content.endswith("\n") or content == ""
        if trailing_newline and lines and lines[-1] == "":
            lines.pop()
        insert_line = int(args["insert_line"])
        if not (0 <= insert_line <= len(lines)):
            return fail(f"Invalid insert_line {insert_line}: file has {len(lines)} lines")
        new_lines = str(args["new_str"]).split("\n")
        lines[insert_line:insert_line] = new_lines
        new_content = "\n".join(lines) + ("\n" if trailing_newline else "")
        overlay = dict(state.overlay)
        overlay[rel] = new_content
        snippet = _edit_snippet(abs_path, new_content, insert_line + 1)
        return state.with_overlay(overlay), StepFeedback(
            f"The file {abs_path} has been edited. {snippet}", "", 0
        )

    return fail(f"Unsupported editor action: {action.kind}")


def execute_sandbox_action(state: WorkspaceState, action: Action) -> tuple[WorkspaceState, StepFeedback]:
    """Execute a navigation/editing action against the workspace.

    Only actions classified NavigationEditing belong here. The returned
    state is a new value; on any error the original state is returned
    unchanged. Identical inputs always produce byte-identical feedback.
    """
    if action.kind == "bash":
        return _run_bash(state, action.raw)
    if action.kind in EDITOR_KINDS:
        return _run_editor(state, action)
    raise ValueError(f"action kind {action.kind} is not sandbox-executable")


def current_patch(state: WorkspaceState) -> str:
    """Unified diff of the overlay against the base tree.

    Deterministic: lexicographic file order, a/ b/ prefixes, explicit
    no-newline markers. A fresh workspace yields the empty string.
    """
    return diffs.diff_trees(dict(state.base), state.rendered())


def apply_patch(state: WorkspaceState, diff_text: str) -> tuple[WorkspaceState, list[str]]:
    """Apply a unified diff to the workspace, all-or-nothing.

    Raises diffs.HunkContextMismatch / diffs.TargetMissing (and leaves the
    state untouched) when any hunk fails to apply exactly.
    """
    new_tree, touched = diffs.apply_diff_to_tree(state.rendered(), diff_text)
    overlay: dict[str, str | None] = {}
    for path in set(state.base) | set(new_tree):
        base_content = state.base.get(path)
        new_content = new_tree.get(path)
        if base_content == new_content:
            continue
        overlay[path] = new_content
    return state.with_overlay(overlay), touched
