"""Context assembly and prompt rendering."""

from __future__ import annotations

import pytest

from swesim import contexts, prompts
from swesim.gateway import MockBackend, ModelEndpoint, ModelGateway
from swesim.sandbox import Action, execute_sandbox_action, fresh_workspace
from tests.conftest import make_instance

GOLD = "--- a/src/demo.py\n+++ b/src/demo.py\n@@ -1 +1 @@\n-raise ValueError\n+return 0\n"

TEST_PATCH = (
    "--- /dev/null\n"
    "+++ b/tests/test_demo.py\n"
    "@@ -0,0 +1,6 @@\n"
    "+from src.demo import demo\n"
    "+\n"
    "+def test_fix():\n"
    "+    assert demo() == 0\n"
    "+\n"
    "+# end\n"
)

BASE_TREE = {
    "src/demo.py": "def demo():\n    raise ValueError\n",
    "tests/test_existing.py": "def test_old():\n    assert True\n\n\ndef test_later():\n    assert 1\n",
}


@pytest.fixture
def instance():
    return make_instance(gold_patch=GOLD, test_patch=TEST_PATCH, pass_to_pass=("tests/test_existing.py::test_old",))


class TestTransitionContext:
    def test_command_targets_and_patch_files(self, instance):
        ws = fresh_workspace(BASE_TREE)
        ws, _ = execute_sandbox_action(ws, Action.create("reproduce.py", "from src.demo import demo\ndemo()\n"))
        ctx = contexts.build_transition_context(instance, ws, Action.bash("python reproduce.py"), "analysis text")
        paths = [p for p, _ in ctx.execution_content]
        assert paths == ["reproduce.py"]
        assert ctx.execution_content[0][1].startswith("from src.demo import demo")
        assert ctx.agent_patch.startswith("--- /dev/null\n+++ b/reproduce.py\n")
        assert ctx.gold_patch == GOLD

    def test_inline_command_has_empty_content(self, instance):
        ws = fresh_workspace(BASE_TREE)
        ctx = contexts.build_transition_context(instance, ws, Action.bash("python -c 'print(1)'"), "")
        assert ctx.execution_content == ()
        assert ctx.agent_patch == ""

    def test_patch_touched_file_included_after_edit(self, instance):
        ws = fresh_workspace(BASE_TREE)
        ws, _ = execute_sandbox_action(ws, Action.str_replace("src/demo.py", "raise ValueError", "return 0"))
        ctx = contexts.build_transition_context(instance, ws, Action.bash("python -m pytest tests/"), "")
        paths = [p for p, _ in ctx.execution_content]
        assert "src/demo.py" in paths
        assert "return 0" in dict(ctx.execution_content)["src/demo.py"]

    def test_budget_truncation_and_monotonicity(self, instance):
        ws = fresh_workspace({"big.py": "x" * 10_000 + "\n", "small.py": "y = 1\n"})
        action = Action.bash("python big.py small.py")
        full = contexts.build_transition_context(instance, ws, action, "", contexts.ContextConfig(byte_budget=20_000))
        tight = contexts.build_transition_context(instance, ws, action, "", contexts.ContextConfig(byte_budget=100))
        zero = contexts.build_transition_context(instance, ws, action, "", contexts.ContextConfig(byte_budget=0))
        assert dict(full.execution_content)["small.py"] == "y = 1\n"
        big_tight = dict(tight.execution_content)["big.py"]
        assert big_tight.endswith(contexts.TRUNCATION_MARKER)
        assert len(big_tight) < 10_000
        # smaller budgets never add content
        assert dict(tight.execution_content)["small.py"] == contexts.OMITTED_MARKER
        assert dict(zero.execution_content)["big.py"] == contexts.OMITTED_MARKER
        assert dict(zero.execution_content)["small.py"] == contexts.OMITTED_MARKER


class TestEvalContext:
    def test_sources_found_after_test_patch(self, instance):
        ctx = contexts.build_eval_context(instance, "", "analysis", BASE_TREE)
        f2p = dict(ctx.f2p)
        assert "def test_fix():" in f2p["tests/test_demo.py::test_fix"]
        p2p = dict(ctx.p2p)
        assert "def test_old():" in p2p["tests/test_existing.py::test_old"]
        assert "def test_later" not in p2p["tests/test_existing.py::test_old"]

    def test_command_template(self, instance):
        ctx = contexts.build_eval_context(instance, "", "", BASE_TREE)
        assert ctx.command == (
            "python -m pytest tests/test_demo.py::test_fix tests/test_existing.py::test_old -v"
        )

    def test_missing_source_marked(self):
        instance = make_instance(fail_to_pass=("tests/test_ghost.py::test_nope",), test_patch="")
        ctx = contexts.build_eval_context(instance, "", "", BASE_TREE)
        assert ctx.f2p[0][1] == contexts.SOURCE_UNAVAILABLE

    def test_empty_final_patch_is_valid(self, instance):
        ctx = contexts.build_eval_context(instance, "", "", BASE_TREE)
        assert ctx.agent_patch == ""

    def test_unittest_style_id(self):
        tree = {"pkg/tests/test_mod.py": "class DemoCase:\n    def test_it(self):\n        pass\n"}
        instance = make_instance(fail_to_pass=("test_it (pkg.tests.test_mod.DemoCase)",), test_patch="")
        ctx = contexts.build_eval_context(instance, "", "", tree)
        assert "def test_it" in ctx.f2p[0][1]


class TestPromptRendering:
    def test_swt_prompt_sections(self, instance):
        ws = fresh_workspace(BASE_TREE)
        ctx = contexts.build_transition_context(instance, ws, Action.bash("python x.py"), "the analysis")
        system, user = contexts.render_context_prompt("swt", ctx)
        assert "### 3. Command to Simulate" in user
        assert "### 6. Gold Standard Patch (For Your Reference)" in user
        assert "expert Python code execution simulator" in system
        assert "the analysis" in user

    def test_swr_prompt_sections(self, instance):
        ctx = contexts.build_eval_context(instance, "", "", BASE_TREE)
        system, user = contexts.render_context_prompt("swr", ctx)
        assert "### 7. FAIL_TO_PASS Tests (Must All Pass for reward=1)" in user
        assert "### 8. PASS_TO_PASS Tests (Must All Pass for reward=1)" in user
        assert "test runner" in system

    def test_gold_patch_only_in_designated_section(self, instance):
        ctx = contexts.build_eval_context(instance, "", "", BASE_TREE)
        _, user = contexts.render_context_prompt("swr", ctx)
        assert user.count(GOLD) == 1
        section = user.split("### 6. Gold Standard Patch (For Your Reference)")[1].split("### 7.")[0]
        assert GOLD in section

    def test_reverse_cot_ground_truth_only_in_section_9(self, instance):
        ctx = contexts.build_eval_context(instance, "", "", BASE_TREE)
        truth = '{"test_report": "all pass", "reward": 1}'
        system, user = contexts.render_context_prompt(
            "reverse_cot", ctx, extras={"true_execution_result_json": truth}
        )
        assert truth not in system
        assert user.count(truth) == 1
        after_9 = user.split("### 9. True Execution Result (JSON)")[1]
        assert truth in after_9

    def test_initial_analysis_prompt(self, instance):
        system, user = contexts.render_context_prompt("initial_analysis", instance)
        assert "5-10 short bullet points" in system
        assert instance.problem_statement in user
        assert "- tests/test_demo.py::test_fix" in user

    def test_render_determinism(self, instance):
        ctx = contexts.build_eval_context(instance, "", "", BASE_TREE)
        assert contexts.render_context_prompt("swr", ctx) == contexts.render_context_prompt("swr", ctx)

    def test_missing_placeholder_raises(self):
        with pytest.raises(prompts.MissingPlaceholderValue):
            prompts.render_prompt("swt", {"problem_statement": "x"})


class TestAnalysisCache:
    def test_cache_generates_once(self, tmp_path, instance):
        backend = MockBackend().script_wildcard("initial_analysis", "- bullet one\n- bullet two")
        gw = ModelGateway(backend, sleep_fn=lambda s: None)
        cache = contexts.AnalysisCache(tmp_path / "analysis.jsonl")
        first = cache.get_or_generate(instance, gw, ModelEndpoint())
        second = cache.get_or_generate(instance, gw, ModelEndpoint())
        assert first == second == "- bullet one\n- bullet two"
        assert len(backend.calls) == 1
        # a fresh cache object reloads from disk
        reloaded = contexts.AnalysisCache(tmp_path / "analysis.jsonl")
        assert reloaded.get(instance.instance_id) == first
