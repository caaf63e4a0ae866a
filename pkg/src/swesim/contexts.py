"""Builds the input contexts fed to the transition and reward models."""

from __future__ import annotations

import json
import os
import re
import shlex
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from . import diffs, prompts
from .instances import Instance
from .sandbox import Action, WorkspaceState

TRUNCATION_MARKER = "\n... [truncated: content byte budget exceeded]"
OMITTED_MARKER = "[content omitted: byte budget exhausted]"
SOURCE_UNAVAILABLE = "[test source unavailable]"

DEFAULT_TEST_COMMAND_TEMPLATE = "python -m pytest {ids} -v"


@dataclass(frozen=True)
class ContextConfig:
    byte_budget: int = 64 * 1024
    test_command_template: str = DEFAULT_TEST_COMMAND_TEMPLATE


@dataclass(frozen=True)
class TransitionContext:
    """Everything the transition model sees for one execution command.

    gold_patch is an internal reference for the simulator and must never
    reach any agent-visible artifact.
    """

    initial_analysis: str
    problem_statement: str
    command: str
    execution_content: tuple[tuple[str, str], ...]
    agent_patch: str
    gold_patch: str


@dataclass(frozen=True)
class EvalContext:
    """Transition-context fields plus the validation tests, for the reward model."""

    initial_analysis: str
    problem_statement: str
    command: str
    execution_content: tuple[tuple[str, str], ...]
    agent_patch: str
    gold_patch: str
    f2p: tuple[tuple[str, str], ...]
    p2p: tuple[tuple[str, str], ...]


def _command_file_targets(command: str, tree: Mapping[str, str]) -> list[str]:
    """Workspace files a command names as its script/test targets, in order."""
    try:
        tokens = shlex.split(command)
    except ValueError:
        tokens = command.split()
    targets: list[str] = []
    for tok in tokens:
        if tok.startswith("-"):
            continue
        candidate = tok.split("::", 1)[0]
        for prefix in ("/repo/", "./"):
            if candidate.startswith(prefix):
                candidate = candidate[len(prefix):]
        if candidate in tree and candidate not in targets:
            targets.append(candidate)
    return targets


def _apply_budget(paths: list[str], tree: Mapping[str, str], budget: int) -> tuple[tuple[str, str], ...]:
    entries: list[tuple[str, str]] = []
    remaining = budget
    for path in paths:
        content = tree.get(path, "")
        size = len(content.encode("utf-8"))
        if size <= remaining:
            entries.append((path, content))
            remaining -= size
        elif remaining > 0:
            prefix = content.encode("utf-8")[:remaining].decode("utf-8", errors="ignore")
            entries.append((path, prefix + TRUNCATION_MARKER))
            remaining = 0
        else:
            entries.append((path, OMITTED_MARKER))
    return tuple(entries)


def build_transition_context(
    instance: Instance,
    state: WorkspaceState,
    action: Action,
    analysis: str,
    config: ContextConfig = ContextConfig(),
) -> TransitionContext:
    """Assemble the transition model's input for a code-execution action.

    execution_content holds the current (post-edit) contents of the files
    the command targets plus any files touched by the agent patch, subject
    to the byte budget; an empty tuple means the code to run is embedded in
    the command itself.
    """
    agent_patch = diffs.diff_trees(dict(state.base), state.rendered())
    tree = state.rendered()
    ordered = _command_file_targets(action.raw, tree)
    for path in sorted(diffs.diff_file_paths(agent_patch)):
        if path not in ordered and path in tree:
            ordered.append(path)
    return TransitionContext(
        initial_analysis=analysis,
        problem_statement=instance.problem_statement,
        command=action.raw,
        execution_content=_apply_budget(ordered, tree, config.byte_budget),
        agent_patch=agent_patch,
        gold_patch=instance.gold_patch,
    )


_DEF_RE_TEMPLATE = r"^(?P<indent>[ \t]*)(?:async[ \t]+)?def[ \t]+{name}[ \t]*\("
_CLASS_RE_TEMPLATE = r"^(?P<indent>[ \t]*)class[ \t]+{name}[ \t]*[(:]"


def _extract_block(content: str, name: str) -> str | None:
    """The source block of a def/class with the given name, or None."""
    lines = content.split("\n")
    for pattern in (_DEF_RE_TEMPLATE, _CLASS_RE_TEMPLATE):
        rx = re.compile(pattern.format(name=re.escape(name)))
        for i, line in enumerate(lines):
            m = rx.match(line)
            if not m:
                continue
            indent = len(m.group("indent"))
            end = len(lines)
            for j in range(i + 1, len(lines)):
                stripped = lines[j].strip()
                if not stripped:
                    continue
                cur_indent = len(lines[j]) - len(lines[j].lstrip(" \t"))
                if cur_indent <= indent:
                    end = j
                    break
            # Back decorators directly above the definition into the block.
            start = i
            while start > 0 and lines[start - 1].lstrip().startswith("@"):
                start -= 1
            return "\n".join(lines[start:end]).rstrip("\n")
    return None


_UNITTEST_ID_RE = re.compile(r"^(?P<name>\w+)\s+\((?P<module>[\w.]+)\)$")


def _looks_like_test_file(path: str) -> bool:
    base = path.rsplit("/", 1)[-1]
    return base.startswith("test") or base.endswith("_test.py") or "/tests/" in f"/{path}"


def extract_test_source(tree: Mapping[str, str], test_id: str, budget: int) -> str:
    """Locate a test's source by id: pytest node ids, unittest-style ids,
    or a bare name searched across test files. Falls back to the whole file
    capped at the budget, then to an unavailable marker."""

    def cap(text: str) -> str:
        data = text.encode("utf-8")
        if len(data) <= budget:
            return text
        return data[:budget].decode("utf-8", errors="ignore") + TRUNCATION_MARKER

    test_id = test_id.strip()
    if "::" in test_id:
        file_part, _, obj_part = test_id.partition("::")
        name = obj_part.split("::")[-1].split("[")[0]
        content = tree.get(file_part)
        if content is None:
            candidates = [p for p in sorted(tree) if p.endswith("/" + file_part) or p == file_part]
            content = tree.get(candidates[0]) if candidates else None
        if content is not None:
            block = _extract_block(content, name) if name else None
            return cap(block) if block else cap(content)
        return SOURCE_UNAVAILABLE

    m = _UNITTEST_ID_RE.match(test_id)
    if m:
        name = m.group("name")
        module_path = m.group("module").replace(".", "/")
        for p in sorted(tree):
            if p.endswith(module_path + ".py") or p.endswith(module_path.rsplit("/", 1)[0] + ".py"):
                block = _extract_block(tree[p], name)
                if block:
                    return cap(block)
        test_id = name  # fall through to the bare-name scan

    name = test_id.split("[")[0]
    if re.fullmatch(r"\w+", name):
        for p in sorted(tree):
            if not _looks_like_test_file(p):
                continue
            block = _extract_block(tree[p], name)
            if block:
                return cap(block)
    return SOURCE_UNAVAILABLE


def build_eval_context(
    instance: Instance,
    final_patch: str,
    analysis: str,
    base_tree: Mapping[str, str],
    config: ContextConfig = ContextConfig(),
) -> EvalContext:
    """Assemble the reward model's input for a submitted patch.

    Test sources are read from the base tree after applying the instance's
    test patch (hidden tests live there); ids whose source cannot be found
    are kept with an unavailable marker so the context is always complete.
    """
    try:
        test_tree, _ = diffs.apply_diff_to_tree(base_tree, instance.test_patch)
    except diffs.DiffApplyError:
        test_tree = dict(base_tree)

    ids = list(instance.fail_to_pass) + list(instance.pass_to_pass)
    command = config.test_command_template.replace("{ids}", " ".join(ids))

    f2p = tuple((t, extract_test_source(test_tree, t, config.byte_budget)) for t in instance.fail_to_pass)
    p2p = tuple((t, extract_test_source(test_tree, t, config.byte_budget)) for t in instance.pass_to_pass)

    # Execution content mirrors the transition context: the test command's
    # file targets plus patch-touched files, viewed after both patches.
    try:
        patched_tree, _ = diffs.apply_diff_to_tree(test_tree, final_patch)
    except diffs.DiffApplyError:
        patched_tree = dict(test_tree)
    ordered = _command_file_targets(command, patched_tree)
    try:
        for path in sorted(diffs.diff_file_paths(final_patch)):
            if path not in ordered and path in patched_tree:
                ordered.append(path)
    except diffs.DiffParseError:
        pass

    return EvalContext(
        initial_analysis=analysis,
        problem_statement=instance.problem_statement,
        command=command,
        execution_content=_apply_budget(ordered, patched_tree, config.byte_budget),
        agent_patch=final_patch,
        gold_patch=instance.gold_patch,
        f2p=f2p,
        p2p=p2p,
    )


# ---------------------------------------------------------------------------
# Prompt value rendering
# ---------------------------------------------------------------------------


def render_execution_content(entries: tuple[tuple[str, str], ...]) -> str:
    blocks = [f"File: {path}\n```\n{content}\n```" for path, content in entries]
    return "\n\n".join(blocks)


def render_test_entries(entries: tuple[tuple[str, str], ...]) -> str:
    blocks = [f"#### {test_id}\n```python\n{source}\n```" for test_id, source in entries]
    return "\n\n".join(blocks)


def transition_prompt_values(ctx: TransitionContext) -> dict[str, str]:
    return {
        "init_analysis": ctx.initial_analysis,
        "problem_statement": ctx.problem_statement,
        "command_to_simulate": ctx.command,
        "execution_code": render_execution_content(ctx.execution_content),
        "agent_patch": ctx.agent_patch,
        "gold_patch": ctx.gold_patch,
    }


def eval_prompt_values(ctx: EvalContext) -> dict[str, str]:
    values = {
        "init_analysis": ctx.initial_analysis,
        "problem_statement": ctx.problem_statement,
        "command_to_simulate": ctx.command,
        "execution_code": render_execution_content(ctx.execution_content),
        "agent_patch": ctx.agent_patch,
        "gold_patch": ctx.gold_patch,
        "f2p": render_test_entries(ctx.f2p),
        "p2p": render_test_entries(ctx.p2p),
    }
    return values


def instance_prompt_values(instance: Instance) -> dict[str, str]:
    return {
        "repo": instance.repo,
        "problem_statement": instance.problem_statement,
        "hints_text": instance.hints_text,
        "gold_patch": instance.gold_patch,
        "test_patch": instance.test_patch,
        "f2p": "\n".join(f"- {t}" for t in instance.fail_to_pass),
        "p2p": "\n".join(f"- {t}" for t in instance.pass_to_pass),
    }


def render_context_prompt(kind: str, context, extras: dict[str, str] | None = None) -> tuple[str, str]:
    """Render a prompt from a context object or an Instance.

    extras supplies values the context itself does not carry (the CoT
    template's true execution result, for example).
    """
    if kind == "initial_analysis":
        values = instance_prompt_values(context)
    elif kind == "swt":
        values = transition_prompt_values(context)
    elif kind in ("swr", "reverse_cot"):
        if isinstance(context, EvalContext):
            values = eval_prompt_values(context)
        else:
            values = transition_prompt_values(context)
            values.setdefault("f2p", "")
            values.setdefault("p2p", "")
    else:
        raise ValueError(f"unknown prompt kind: {kind}")
    if extras:
        values.update(extras)
    return prompts.render_prompt(kind, values)


# ---------------------------------------------------------------------------
# Initial-analysis cache
# ---------------------------------------------------------------------------


class AnalysisCache:
    """Disk-backed per-instance analysis cache (JSONL, atomic rewrite)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: dict[str, str] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                self._entries[rec["instance_id"]] = rec["analysis"]

    def get(self, instance_id: str) -> str | None:
        return self._entries.get(instance_id)

    def put(self, instance_id: str, analysis: str, model: str = "") -> None:
        self._entries[instance_id] = analysis
        record = {
            "instance_id": instance_id,
            "analysis": analysis,
            "model": model,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        existing = ""
        if self.path.exists():
            existing = self.path.read_text(encoding="utf-8")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(existing)
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        os.replace(tmp, self.path)

    def get_or_generate(self, instance: Instance, gateway, endpoint) -> str:
        cached = self.get(instance.instance_id)
        if cached is not None:
            return cached
        system, user = render_context_prompt("initial_analysis", instance)
        analysis = gateway.complete(endpoint, system, user, kind="initial_analysis")
        self.put(instance.instance_id, analysis, model=endpoint.model_name)
        return analysis
