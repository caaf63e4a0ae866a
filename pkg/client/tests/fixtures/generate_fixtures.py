"""Regenerates the SDK parity fixtures from the swesim engine.

Run from the repository root with swesim installed:

    python3 client/tests/fixtures/generate_fixtures.py

Outputs (all in this directory):
    dataset.jsonl    one-instance dataset the service loads
    workspace.json   base file tree, passed inline at session creation
    mock.jsonl       scripted backend responses (sha-keyed transition replies)
    golden.json      the in-process trajectory the SDK run must reproduce
"""

from __future__ import annotations

import json
from pathlib import Path

from swesim import contexts, episode
from swesim.cli import load_mock_backend
from swesim.gateway import ModelEndpoint, ModelGateway, prompt_sha256
from swesim.instances import parse_instance
from swesim.sandbox import Action, execute_sandbox_action, fresh_workspace

HERE = Path(__file__).parent

GOLD = (
    "--- a/src/demo.py\n+++ b/src/demo.py\n@@ -1,2 +1,2 @@\n def demo():\n"
    "-    raise ValueError\n+    return 0\n"
)
TEST_PATCH = (
    "--- /dev/null\n+++ b/tests/test_demo.py\n@@ -0,0 +1,4 @@\n"
    "+from src.demo import demo\n+\n+def test_fix():\n+    assert demo() == 0\n"
)
BASE_TREE = {"src/demo.py": "def demo():\n    raise ValueError\n"}

INSTANCE_RECORD = {
    "repo": "octocat/demo",
    "instance_id": "octocat__demo-1",
    "base_commit": "a" * 40,
    "hints_text": "",
    "problem_statement": "calling demo() raises ValueError instead of returning 0",
    "FAIL_TO_PASS": ["tests/test_demo.py::test_fix"],
    "PASS_TO_PASS": [],
    "gold_patch": GOLD,
    "test_patch": TEST_PATCH,
}

SCRIPT = [
    ("write a reproducer", Action.create("reproduce.py", "from src.demo import demo\nprint(demo())\n")),
    ("run it", Action.bash("python reproduce.py")),
    ("apply the fix", Action.str_replace("src/demo.py", "raise ValueError", "return 0")),
    ("verify", Action.bash("python reproduce.py")),
    ("done", Action.submit()),
]

FAILING_REPLY = json.dumps(
    {
        "stdout": "",
        "stderr": 'Traceback (most recent call last):\n  File "reproduce.py", line 2\nValueError',
        "exit_code": 1,
    }
)
PASSING_REPLY = json.dumps({"stdout": "0\n", "stderr": "", "exit_code": 0})
SWR_REPLY = '{"test_report": "test_fix passes", "reward": 1}'


def swt_prompt_sha(instance, state, action) -> str:
    ctx = contexts.build_transition_context(instance, state, action, analysis="")
    _, user_text = contexts.render_context_prompt("swt", ctx)
    return prompt_sha256(user_text)


def main() -> None:
    instance = parse_instance(INSTANCE_RECORD)

    # Replay the editing prefix of the script to recover the exact transition
    # prompts the two execution steps will produce.
    state = fresh_workspace(BASE_TREE)
    state, _ = execute_sandbox_action(state, SCRIPT[0][1])
    sha_failing = swt_prompt_sha(instance, state, SCRIPT[1][1])
    state, _ = execute_sandbox_action(state, SCRIPT[2][1])
    sha_passing = swt_prompt_sha(instance, state, SCRIPT[3][1])

    mock_lines = [
        {"kind": "swt", "user_sha256": sha_failing, "completion": FAILING_REPLY},
        {"kind": "swt", "user_sha256": sha_passing, "completion": PASSING_REPLY},
        {"kind": "swr", "completion": SWR_REPLY},
    ]
    (HERE / "mock.jsonl").write_text("\n".join(json.dumps(l) for l in mock_lines) + "\n")
    (HERE / "dataset.jsonl").write_text(json.dumps(INSTANCE_RECORD) + "\n")
    (HERE / "workspace.json").write_text(json.dumps(BASE_TREE, indent=2) + "\n")

    env = episode.Environment(
        gateway=ModelGateway(load_mock_backend(HERE / "mock.jsonl")),
        swt=ModelEndpoint(model_name="swt"),
        swr=ModelEndpoint(model_name="swr"),
        workspace_provider=lambda inst: BASE_TREE,
    )
    trajectory = episode.run_episode(instance, episode.scripted_agent(SCRIPT), env)
    assert trajectory.termination == "Submitted", trajectory.termination
    assert trajectory.steps[1].feedback.exit_code == 1
    assert trajectory.steps[3].feedback.exit_code == 0

    golden = {
        "instance_id": instance.instance_id,
        "script": [
            {"thought": thought, "action": action.to_dict()} for thought, action in SCRIPT
        ],
        "trajectory": trajectory.to_dict(),
        "evaluate": {"reward": 1, "votes": [1, 1, 1], "M": 3},
    }
    (HERE / "golden.json").write_text(json.dumps(golden, indent=2) + "\n")
    print("fixtures written:", ", ".join(p.name for p in sorted(HERE.glob("*.json*"))))


if __name__ == "__main__":
    main()
