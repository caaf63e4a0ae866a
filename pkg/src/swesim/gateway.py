"""Chat-completion gateway: wire protocol, strict output parsing, backends."""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Protocol

import requests


class GatewayError(Exception):
    """Base class for gateway failures."""


class ContextTooLong(GatewayError):
    def __init__(self, estimated: int, limit: int):
        super().__init__(f"prompt estimated at {estimated} tokens exceeds limit {limit}")
        self.estimated = estimated
        self.limit = limit


class EndpointUnreachable(GatewayError):
    pass


class MalformedResponseBody(GatewayError):
    pass


class OutputParseError(Exception):
    """Base class for model-output parsing failures."""


class NoJsonFound(OutputParseError):
    pass


class MissingKey(OutputParseError):
    def __init__(self, name: str):
        super().__init__(f"model output lacks required key: {name}")
        self.name = name


class InvalidRewardValue(OutputParseError):
    def __init__(self, value):
        super().__init__(f"reward must be 0 or 1, got {value!r}")
        self.value = value


class UnterminatedThinkBlock(OutputParseError):
    pass


class LogprobsUnsupported(GatewayError):
    """The backend cannot provide yes/no token log-probabilities."""


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str = "http://localhost:8000/v1"
    model_name: str = "default"
    temperature: float = 0.0
    max_context_tokens: int = 131072
    timeout: float = 600.0
    max_retries: int = 3
    max_tokens: int = 8192

    def with_temperature(self, temperature: float) -> "ModelEndpoint":
        return replace(self, temperature=temperature)


@dataclass(frozen=True)
class SwtOutput:
    """Predicted execution feedback: what Docker would have printed."""

    stdout: str
    stderr: str
    exit_code: int

    def to_json(self) -> str:
        return json.dumps(
            {"stdout": self.stdout, "stderr": self.stderr, "exit_code": self.exit_code},
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class SwrOutput:
    """Predicted evaluation: a test report plus a binary reward."""

    test_report: str
    reward: int
    think: str | None = None

    def to_json(self) -> str:
        return json.dumps(
            {"test_report": self.test_report, "reward": self.reward}, ensure_ascii=False
        )


def estimate_tokens(text: str, bytes_per_token: int = 4) -> int:
    """Tokenizer-free size estimate: utf-8 bytes divided by bytes_per_token."""
    return math.ceil(len(text.encode("utf-8")) / bytes_per_token)


def prompt_sha256(user_text: str) -> str:
    return hashlib.sha256(user_text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Output parsing
# ---------------------------------------------------------------------------


def _first_json_object(text: str) -> dict | None:
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(text[idx:])
        except ValueError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = text.find("{", idx + 1)
    return None


def _coerce_int(value) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        try:
            return int(value.strip())
        except ValueError:
            return None
    return None


def _coerce_text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False)


def parse_model_output(kind: str, text: str) -> SwtOutput | SwrOutput:
    """Parse a raw completion into a typed output.

    An optional leading <think>...</think> block is captured, then the first
    balanced JSON object is decoded and validated. Trailing prose after the
    JSON never changes the result. Raises typed OutputParseError subclasses;
    never aborts on arbitrary input.
    """
    think: str | None = None
    rest = text
    stripped = text.lstrip()
    if stripped.startswith("<think>"):
        end = stripped.find("</think>")
        if end < 0:
            raise UnterminatedThinkBlock("<think> block never closed")
        think = stripped[len("<think>"):end]
        rest = stripped[end + len("</think>"):]

    obj = _first_json_object(rest)
    if obj is None:
        raise NoJsonFound("no balanced JSON object in model output")

    if kind == "swt":
        for key in ("stdout", "stderr", "exit_code"):
            if key not in obj:
                raise MissingKey(key)
        exit_code = _coerce_int(obj["exit_code"])
        if exit_code is None:
            raise MissingKey("exit_code")
        return SwtOutput(
            stdout=_coerce_text(obj["stdout"]),
            stderr=_coerce_text(obj["stderr"]),
            exit_code=exit_code,
        )
    if kind == "swr":
        for key in ("test_report", "reward"):
            if key not in obj:
                raise MissingKey(key)
        reward = _coerce_int(obj["reward"])
        if reward not in (0, 1):
            raise InvalidRewardValue(obj["reward"])
        return SwrOutput(test_report=_coerce_text(obj["test_report"]), reward=reward, think=think)
    raise ValueError(f"unknown output kind: {kind}")


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class Backend(Protocol):
    def send(self, endpoint: ModelEndpoint, system_text: str, user_text: str, kind: str | None) -> str:
        ...


class HttpBackend:
    """POSTs to {base_url}/chat/completions, the open inference protocol."""

    def __init__(self, session: requests.Session | None = None):
        self.session = session or requests.Session()

    def send(self, endpoint: ModelEndpoint, system_text: str, user_text: str, kind: str | None = None) -> str:
        url = endpoint.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": endpoint.model_name,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
            "temperature": endpoint.temperature,
            "max_tokens": endpoint.max_tokens,
        }
        try:
            response = self.session.post(url, json=body, timeout=endpoint.timeout)
        except requests.RequestException as exc:
            raise _Transient(str(exc)) from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise _Transient(f"HTTP {response.status_code}")
        if response.status_code >= 400:
            raise EndpointUnreachable(f"HTTP {response.status_code}: {response.text[:500]}")
        try:
            data = response.json()
            return data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseBody(f"unexpected response body: {exc}") from exc


class _Transient(GatewayError):
    """Retryable failure: transport error, 5xx, or rate limit."""


class MockBackend:
    """Scripted backend for tests: responses keyed by (kind, sha256(user_text)).

    An optional responder callable and per-kind/global wildcards act as
    fallbacks, in that order.
    """

    def __init__(self, responder: Callable[[str | None, str, str], str | None] | None = None):
        self._scripted: dict[tuple[str | None, str], list[str]] = {}
        self._wildcards: dict[str | None, str] = {}
        self.responder = responder
        self.calls: list[tuple[str | None, str]] = []

    def script(self, kind: str | None, user_text: str, completion: str) -> "MockBackend":
        key = (kind, prompt_sha256(user_text))
        self._scripted.setdefault(key, []).append(completion)
        return self

    def script_sha(self, kind: str | None, sha: str, completion: str) -> "MockBackend":
        self._scripted.setdefault((kind, sha), []).append(completion)
        return self

    def script_wildcard(self, kind: str | None, completion: str) -> "MockBackend":
        self._wildcards[kind] = completion
        return self

    def send(self, endpoint: ModelEndpoint, system_text: str, user_text: str, kind: str | None = None) -> str:
        sha = prompt_sha256(user_text)
        self.calls.append((kind, sha))
        queue = self._scripted.get((kind, sha))
        if queue:
            return queue.pop(0) if len(queue) > 1 else queue[0]
        if self.responder is not None:
            reply = self.responder(kind, system_text, user_text)
            if reply is not None:
                return reply
        if kind in self._wildcards:
            return self._wildcards[kind]
        if None in self._wildcards:
            return self._wildcards[None]
        raise EndpointUnreachable(f"no scripted response for kind={kind} sha={sha[:12]}")


class ReplayBackend:
    """Replays a recorded completion log for byte-reproducible offline runs."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._log: dict[tuple[str | None, str], list[str]] = {}
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            key = (rec.get("kind"), rec["prompt_sha256"])
            self._log.setdefault(key, []).append(rec["completion"])
        self._cursor: dict[tuple[str | None, str], int] = {}

    def send(self, endpoint: ModelEndpoint, system_text: str, user_text: str, kind: str | None = None) -> str:
        key = (kind, prompt_sha256(user_text))
        entries = self._log.get(key) or self._log.get((None, key[1]))
        if not entries:
            raise EndpointUnreachable(f"no replay entry for kind={kind} sha={key[1][:12]}")
        pos = self._cursor.get(key, 0)
        self._cursor[key] = min(pos + 1, len(entries) - 1)
        return entries[pos]


class RecordingBackend:
    """Wraps a backend and appends (kind, prompt hash, completion) to a log."""

    def __init__(self, inner: Backend, path: str | Path):
        self.inner = inner
        self.path = Path(path)

    def send(self, endpoint: ModelEndpoint, system_text: str, user_text: str, kind: str | None = None) -> str:
        completion = self.inner.send(endpoint, system_text, user_text, kind)
        record = {"kind": kind, "prompt_sha256": prompt_sha256(user_text), "completion": completion}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        return completion


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------

SWT_FALLBACK = SwtOutput(stdout="", stderr="simulator output unparsable", exit_code=1)
SWR_FALLBACK = SwrOutput(test_report="reward model output unparsable", reward=0)


class ModelGateway:
    """Shared front door to SWT/SWR/teacher/judge endpoints.

    Thread-safe for concurrent use: requests are independent idempotent
    reads and all mutable state is test-only bookkeeping in the backends.
    """

    def __init__(
        self,
        backend: Backend,
        reprompt_attempts: int = 3,
        backoff_base: float = 0.5,
        sleep_fn: Callable[[float], None] = time.sleep,
        bytes_per_token: int = 4,
    ):
        self.backend = backend
        self.reprompt_attempts = reprompt_attempts
        self.backoff_base = backoff_base
        self.sleep_fn = sleep_fn
        self.bytes_per_token = bytes_per_token

    def complete(
        self,
        endpoint: ModelEndpoint,
        system_text: str,
        user_text: str,
        kind: str | None = None,
    ) -> str:
        """One completion with bounded retries and exponential backoff.

        Raises ContextTooLong before any network call when the estimated
        prompt size exceeds the endpoint's context window.
        """
        estimated = estimate_tokens(system_text + user_text, self.bytes_per_token)
        if estimated > endpoint.max_context_tokens:
            raise ContextTooLong(estimated, endpoint.max_context_tokens)
        last_error: Exception | None = None
        for attempt in range(endpoint.max_retries + 1):
            try:
                return self.backend.send(endpoint, system_text, user_text, kind)
            except _Transient as exc:
                last_error = exc
                if attempt < endpoint.max_retries:
                    self.sleep_fn(self.backoff_base * (2 ** attempt))
        raise EndpointUnreachable(f"endpoint failed after {endpoint.max_retries} retries: {last_error}")

    def query_swt(self, endpoint: ModelEndpoint, system_text: str, user_text: str) -> tuple[SwtOutput, bool]:
        """SWT completion parsed to feedback; falls back closed on bad output."""
        output = self._query(endpoint, system_text, user_text, "swt")
        if output is None:
            return SWT_FALLBACK, False
        assert isinstance(output, SwtOutput)
        return output, True

    def query_swr(self, endpoint: ModelEndpoint, system_text: str, user_text: str) -> tuple[SwrOutput, bool]:
        """SWR completion parsed to a verdict; unparsable output scores 0."""
        output = self._query(endpoint, system_text, user_text, "swr")
        if output is None:
            return SWR_FALLBACK, False
        assert isinstance(output, SwrOutput)
        return output, True

    def _query(self, endpoint: ModelEndpoint, system_text: str, user_text: str, kind: str):
        # Transport failures propagate; only unparsable output falls back
        # closed, after the initial attempt plus reprompt_attempts retries.
        for _ in range(1 + self.reprompt_attempts):
            completion = self.complete(endpoint, system_text, user_text, kind)
            try:
                return parse_model_output(kind, completion)
            except OutputParseError:
                continue
        return None


ENDPOINT_ENV_VARS = {
    "swt": "SWT_ENDPOINT",
    "swr": "SWR_ENDPOINT",
    "teacher": "TEACHER_ENDPOINT",
    "judge": "JUDGE_ENDPOINT",
}


def endpoint_from_env(role: str, default: ModelEndpoint | None = None) -> ModelEndpoint:
    """Endpoint for a role, with the role's env var overriding the base URL."""
    endpoint = default or ModelEndpoint()
    env_var = ENDPOINT_ENV_VARS.get(role)
    if env_var and os.environ.get(env_var):
        endpoint = replace(endpoint, base_url=os.environ[env_var])
    model_var = env_var.replace("_ENDPOINT", "_MODEL") if env_var else None
    if model_var and os.environ.get(model_var):
        endpoint = replace(endpoint, model_name=os.environ[model_var])
    return endpoint


def softmax_yes_score(l_yes: float, l_no: float) -> float:
    """Scalar confidence from yes/no token log-probabilities."""
    m = max(l_yes, l_no)
    e_yes = math.exp(l_yes - m)
    e_no = math.exp(l_no - m)
    return e_yes / (e_yes + e_no)
