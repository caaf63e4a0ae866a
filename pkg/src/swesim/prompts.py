"""Prompt template loading and deterministic rendering."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

PROMPT_KINDS = ("initial_analysis", "swt", "swr", "reverse_cot")

# Only these tokens are treated as placeholders; any other brace content in
# the templates (JSON examples, instructions) is literal text.
PLACEHOLDERS = (
    "repo",
    "problem_statement",
    "hints_text",
    "command_to_simulate",
    "agent_patch",
    "gold_patch",
    "test_patch",
    "f2p",
    "p2p",
    "init_analysis",
    "execution_code",
    "true_execution_result_json",
)

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")


class MissingPlaceholderValue(Exception):
    def __init__(self, name: str):
        super().__init__(f"no value provided for placeholder {{{name}}}")
        self.name = name


@lru_cache(maxsize=None)
def load_template(kind: str, role: str) -> str:
    if kind not in PROMPT_KINDS:
        raise ValueError(f"unknown prompt kind: {kind}")
    name = f"{kind}.{role}.txt"
    return resources.files("swesim.templates").joinpath(name).read_text(encoding="utf-8")


def template_placeholders(kind: str, role: str) -> list[str]:
    return sorted(set(_PLACEHOLDER_RE.findall(load_template(kind, role))))


def _substitute(template: str, values: dict[str, str]) -> str:
    def repl(match: re.Match) -> str:
        name = match.group(1)
        if name not in values or values[name] is None:
            raise MissingPlaceholderValue(name)
        return values[name]

    return _PLACEHOLDER_RE.sub(repl, template)


def render_prompt(kind: str, values: dict[str, str]) -> tuple[str, str]:
    """Render (system_text, user_text) for a prompt kind.

    Substitution is verbatim: placeholder tokens are replaced with the given
    strings and nothing else in the template is touched, so identical inputs
    always produce byte-identical prompts.
    """
    system = _substitute(load_template(kind, "system"), values)
    user = _substitute(load_template(kind, "user"), values)
    return system, user
