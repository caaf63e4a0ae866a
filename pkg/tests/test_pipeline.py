"""Sample extraction, dual-stage filtering, balancing, CoT target hygiene."""

from __future__ import annotations

import pytest

from swesim import episode, pipeline
from swesim.gateway import MockBackend, ModelEndpoint, ModelGateway, SwtOutput
from swesim.sandbox import Action
from tests.conftest import make_instance
from tests.test_episode import (
    BASE_TREE,
    GOLD,
    TEST_PATCH,
    make_env,
    scripted_five_step,
    swt_responder,
)


@pytest.fixture
def recorded_trajectory():
    instance = make_instance(gold_patch=GOLD, test_patch=TEST_PATCH)
    backend = MockBackend(responder=swt_responder)
    backend.script_wildcard("swr", '{"test_report": "test_fix passes", "reward": 1}')
    env = make_env(backend)
    traj = episode.run_episode(instance, scripted_five_step(), env)
    episode.evaluate_trajectory(traj, instance, env)
    return instance, traj


class TestExtraction:
    def test_five_step_trajectory_yields_two_plus_one(self, recorded_trajectory):
        instance, traj = recorded_trajectory
        samples, reward_sample = pipeline.extract_training_samples(traj, instance, BASE_TREE)
        assert len(samples) == 2
        assert reward_sample is not None
        # step 2 ran before the fix: its context must not contain the fix
        assert "return 0" not in samples[0].context.agent_patch
        assert samples[0].target.exit_code == 1
        # step 4 ran after the fix
        assert "return 0" in samples[1].context.agent_patch
        assert samples[1].target.exit_code == 0
        assert reward_sample.target == ("test_fix passes", 1)
        assert reward_sample.context.agent_patch == traj.final_patch

    def test_zero_execution_steps(self):
        instance = make_instance()
        traj = episode.Trajectory(instance_id=instance.instance_id, termination="Submitted")
        samples, reward_sample = pipeline.extract_training_samples(traj, instance, BASE_TREE)
        assert samples == []
        assert reward_sample is None  # no recorded evaluation

    def test_failed_rollout_still_extracted(self, recorded_trajectory):
        instance, traj = recorded_trajectory
        traj.predicted_reward = 0
        traj.test_report = "test_fix still fails"
        samples, reward_sample = pipeline.extract_training_samples(traj, instance, BASE_TREE)
        assert len(samples) == 2
        assert reward_sample.target[1] == 0

    def test_corrupted_environment_skipped(self, recorded_trajectory):
        instance, traj = recorded_trajectory
        traj.steps[1].feedback = type(traj.steps[1].feedback)(
            stdout="", stderr="ERROR: failed to pull image python:3.11", exit_code=1
        )
        samples, reward_sample = pipeline.extract_training_samples(traj, instance, BASE_TREE)
        assert samples == [] and reward_sample is None

    def test_missing_ground_truth_raises(self, recorded_trajectory):
        instance, traj = recorded_trajectory
        truth = pipeline.GroundTruth(step_outputs={}, eval=None)
        with pytest.raises(pipeline.MissingGroundTruth) as excinfo:
            pipeline.extract_training_samples(traj, instance, BASE_TREE, ground_truth=truth)
        assert excinfo.value.step_index == 1

    def test_training_records_render(self, recorded_trajectory):
        instance, traj = recorded_trajectory
        samples, reward_sample = pipeline.extract_training_samples(traj, instance, BASE_TREE)
        record = pipeline.transition_training_record(samples[0])
        assert "### 3. Command to Simulate" in record["input"]["user"]
        assert record["target"] == samples[0].target.to_json()
        cot_record = pipeline.reward_training_record(reward_sample, cot="the fix matches")
        assert cot_record["target"].startswith("<think>the fix matches</think>{")


def _traj(termination="Submitted", turns=5, tokens=1000):
    t = episode.Trajectory(instance_id="i", termination=termination, token_estimate=tokens)
    t.steps = [
        episode.TrajectoryStep("t", Action.bash("ls"), episode.StepFeedback("", "", 0), "NavigationEditing")
        for _ in range(turns)
    ]
    return t


class TestFilter:
    def test_keep_happy_path(self):
        assert pipeline.filter_trajectory(_traj(), swr_verdict=1).keep

    def test_no_submission_first(self):
        verdict = pipeline.filter_trajectory(_traj(termination="TurnLimit", turns=200, tokens=99_000))
        assert verdict.reason == "no_submission"

    def test_turn_limit(self):
        verdict = pipeline.filter_trajectory(_traj(turns=101))
        assert verdict.reason == "turn_limit_exceeded"

    def test_token_limit(self):
        verdict = pipeline.filter_trajectory(_traj(tokens=81_000))
        assert verdict.reason == "token_limit_exceeded"

    def test_negative_reward(self):
        verdict = pipeline.filter_trajectory(_traj(), swr_verdict=0)
        assert verdict.reason == "negative_reward"

    def test_unverified_passes_rule_stage(self):
        assert pipeline.filter_trajectory(_traj(), swr_verdict=None).keep

    def test_malformed_action(self):
        verdict = pipeline.filter_trajectory(_traj(termination="AgentError"))
        assert verdict.reason == "no_submission"  # AgentError never submitted

    def test_pure_function(self):
        t = _traj(turns=101)
        assert pipeline.filter_trajectory(t) == pipeline.filter_trajectory(t)

    def test_boundary_values_kept(self):
        assert pipeline.filter_trajectory(_traj(turns=100, tokens=80_000)).keep


def _reward_sample(reward: int, tag: str):
    # filtering/balancing only reads the target label; a stub context is fine
    return pipeline.RewardSample(context=tag, target=(f"report {tag}", reward))


class TestBalance:
    def test_ten_pos_four_neg(self):
        samples = [_reward_sample(1, f"p{i}") for i in range(10)]
        samples += [_reward_sample(0, f"n{i}") for i in range(4)]
        balanced = pipeline.balance_labels(samples, seed=42)
        labels = [s.target[1] for s in balanced]
        assert labels.count(1) == 4 and labels.count(0) == 4

    def test_already_balanced_identity(self):
        samples = [_reward_sample(1, "a"), _reward_sample(0, "b")]
        assert pipeline.balance_labels(samples, seed=7) == samples

    def test_deterministic_given_seed(self):
        samples = [_reward_sample(i % 3 == 0 and 1 or 0, str(i)) for i in range(30)]
        a = pipeline.balance_labels(samples, seed=5)
        b = pipeline.balance_labels(samples, seed=5)
        c = pipeline.balance_labels(samples, seed=6)
        assert a == b
        assert [s.context for s in a] != [s.context for s in c]

    def test_output_subset_and_order(self):
        samples = [_reward_sample(1, f"p{i}") for i in range(8)] + [_reward_sample(0, "n0")]
        balanced = pipeline.balance_labels(samples, seed=1)
        assert all(s in samples for s in balanced)
        positions = [samples.index(s) for s in balanced]
        assert positions == sorted(positions)

    def test_empty_class_warns_and_returns_empty(self, caplog):
        samples = [_reward_sample(1, f"p{i}") for i in range(3)]
        with caplog.at_level("WARNING"):
            assert pipeline.balance_labels(samples, seed=0) == []
        assert "cannot balance" in caplog.text


class TestCotTargets:
    def test_format_swt_target(self):
        target = pipeline.format_cot_target("the import fails", SwtOutput("", "ImportError", 1))
        assert target == '<think>the import fails</think>{"stdout": "", "stderr": "ImportError", "exit_code": 1}'

    def test_format_reward_target(self):
        target = pipeline.format_cot_target("looks right", ("all pass", 1))
        assert target == '<think>looks right</think>{"test_report": "all pass", "reward": 1}'

    def test_empty_cot_rejected(self):
        with pytest.raises(pipeline.EmptyCot):
            pipeline.format_cot_target("  ", ("x", 0))

    def test_leak_check_catches_verbatim(self):
        truth = SwtOutput("", "ValueError: invalid literal for int() with base 10", 1)
        cot = "running it would print ValueError: invalid literal for int() with base 10 eventually"
        verdict = pipeline.leak_check(cot, truth)
        assert not verdict.passed and verdict.reason == "verbatim_leak"

    def test_leak_check_passes_clean_cot(self):
        truth = SwtOutput("", "ValueError: invalid literal for int() with base 10", 1)
        assert pipeline.leak_check("the parser rejects non-numeric input", truth).passed

    def test_short_lines_do_not_trip(self):
        truth = SwtOutput("ok\ndone\n", "", 0)  # lines under 20 chars
        assert pipeline.leak_check("ok done either way", truth).passed

    def test_empty_ground_truth_always_passes(self):
        assert pipeline.leak_check("any reasoning at all", SwtOutput("", "", 0)).passed

    def test_judge_can_reject(self):
        truth = SwtOutput("", "", 0)
        verdict = pipeline.leak_check("shallow", truth, judge=lambda cot: False)
        assert not verdict.passed and verdict.reason == "judge_rejected"
