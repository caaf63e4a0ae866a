"""Shared fixtures: deterministic repo trees and tiny task instances."""

from __future__ import annotations

import random

import pytest

from swesim.instances import Instance

WORDS = (
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf",
    "hotel", "india", "juliet", "kilo", "lima", "mike", "november",
)


def make_fixture_tree(n_files: int = 30, seed: int = 7) -> dict[str, str]:
    """A deterministic pseudo-repo: python-ish files across a few directories."""
    rng = random.Random(seed)
    dirs = ["", "src/", "src/core/", "tests/", "docs/"]
    tree: dict[str, str] = {}
    for i in range(n_files):
        directory = dirs[i % len(dirs)]
        name = f"{directory}{WORDS[i % len(WORDS)]}_{i}.py"
        lines = []
        for j in range(rng.randint(3, 25)):
            kind = rng.randrange(4)
            if kind == 0:
                lines.append(f"def {WORDS[rng.randrange(len(WORDS))]}_{j}():")
            elif kind == 1:
                lines.append(f"    return {rng.randint(0, 99)}")
            elif kind == 2:
                lines.append(f"# note {rng.randint(0, 999)}")
            else:
                lines.append(f"value_{j} = '{WORDS[rng.randrange(len(WORDS))]}'")
        content = "\n".join(lines) + "\n"
        if rng.random() < 0.15:
            content = content.rstrip("\n")  # exercise no-trailing-newline handling
        tree[name] = content
    tree["README.md"] = "fixture repository\n"
    return tree


@pytest.fixture
def fixture_tree() -> dict[str, str]:
    return make_fixture_tree()


def make_instance(
    instance_id: str = "octocat__demo-1",
    gold_patch: str = "",
    test_patch: str = "",
    fail_to_pass: tuple[str, ...] = ("tests/test_demo.py::test_fix",),
    pass_to_pass: tuple[str, ...] = (),
    problem_statement: str = "calling demo() raises ValueError instead of returning 0",
) -> Instance:
    return Instance(
        repo="octocat/demo",
        instance_id=instance_id,
        base_commit="a" * 40,
        problem_statement=problem_statement,
        fail_to_pass=fail_to_pass,
        pass_to_pass=pass_to_pass,
        gold_patch=gold_patch,
        test_patch=test_patch,
        hints_text="",
    )


@pytest.fixture
def tiny_instance() -> Instance:
    return make_instance()
