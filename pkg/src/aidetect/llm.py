"""Zero-shot baseline against a prompted multimodal endpoint.

The wire contract is a generic HTTP JSON exchange: POST {prompt, image
(base64), id} -> {"text": "..."}; provider-specific adapters translate at the
edge and the deterministic mock transports speak the same contract, so every
code path from rate limiting to verdict parsing is shared.

Both prompt texts are byte-frozen; tests pin them by checksum.
"""

from __future__ import annotations

import base64
import json
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import httpx

from .errors import ConfigError, TransportError
from .evaluator import ConfusionMatrix, Metrics, confusion, metrics_from
from .labels import Label
from .store import DatasetManifest


class PromptKind(str, Enum):
    BASIC = "basic"
    DETAILED = "detailed"


BASIC_PROMPT = (
    'Return exactly one word: "real" or "fake".\n'
    'Classify the image as an AI‑generated image ("fake") '
    'or a real‑world photo ("real").\n'
    "Output nothing except that single word."
)

DETAILED_PROMPT = (
    "You are an AI-image-detector model.\n"
    "Inspect lighting consistency, natural textures and biology correctness.\n"
    'If these cues suggest synthesis, answer "fake"; otherwise answer "real".\n'
    "Respond with exactly that single word and nothing else."
)

PROMPTS = {PromptKind.BASIC: BASIC_PROMPT, PromptKind.DETAILED: DETAILED_PROMPT}


def render_prompt(kind: PromptKind) -> str:
    return PROMPTS[PromptKind(kind)]


class Outcome(str, Enum):
    REAL = "real"
    FAKE = "fake"
    INVALID = "invalid"


@dataclass
class Verdict:
    outcome: Outcome
    raw: str
    attempts: int = 0
    latency_s: float = 0.0


_QUOTES = "\"'“”‘’"


def _normalize_token(text: str) -> str:
    s = text.strip()
    s = s.strip(_QUOTES).strip()
    s = s.rstrip(".").strip()
    return s.lower()


def parse_verdict(raw: str, strict: bool = True) -> Verdict:
    """Parse a response into Real/Fake/Invalid.

    Normalization: trim whitespace, strip surrounding quotes and trailing
    periods, lowercase. Strict mode accepts only the bare tokens; lenient mode
    also accepts a response containing a token as a word, taking the first
    occurrence.
    """
    token = _normalize_token(raw)
    if token == "real":
        return Verdict(Outcome.REAL, raw)
    if token == "fake":
        return Verdict(Outcome.FAKE, raw)
    if not strict:
        for word in raw.split():
            w = _normalize_token(word).strip(",;:!?")
            if w == "real":
                return Verdict(Outcome.REAL, raw)
            if w == "fake":
                return Verdict(Outcome.FAKE, raw)
    return Verdict(Outcome.INVALID, raw)


@dataclass
class LlmClientConfig:
    endpoint: str = "http://localhost:8801/classify"
    api_key_env: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    rate_limit_per_s: float = 4.0
    max_in_flight: int = 2
    strict_parsing: bool = True

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.rate_limit_per_s <= 0:
            raise ConfigError(f"rate limit must be positive, got {self.rate_limit_per_s}")
        if self.max_in_flight < 1:
            raise ConfigError(f"max_in_flight must be >= 1, got {self.max_in_flight}")


class RateLimiter:
    """Spaces request starts at least 1/per_second apart across threads."""

    def __init__(self, per_second: float, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / per_second
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_slot = 0.0

    def wait(self) -> None:
        with self._lock:
            now = self._clock()
            slot = max(now, self._next_slot)
            self._next_slot = slot + self.interval
        delay = slot - now
        if delay > 0:
            self._sleep(delay)


_RETRYABLE_STATUS = {429}


class LlmClient:
    """HTTP client honoring the rate limit and retrying transient failures
    (timeouts, 429, 5xx) with exponential backoff."""

    def __init__(
        self,
        config: LlmClientConfig,
        transport: httpx.BaseTransport | None = None,
        clock=time.monotonic,
        sleep=time.sleep,
    ):
        self.config = config
        self._api_key = None
        if config.api_key_env is not None:
            self._api_key = os.environ.get(config.api_key_env)
            if not self._api_key:
                raise ConfigError(
                    f"API key environment variable {config.api_key_env!r} is not set"
                )
        self._client = httpx.Client(transport=transport, timeout=config.timeout)
        self._limiter = RateLimiter(config.rate_limit_per_s, clock=clock, sleep=sleep)
        self._clock = clock
        self._sleep = sleep

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def classify(self, image_bytes: bytes, kind: PromptKind,
                 image_id: str | None = None) -> Verdict:
        payload = {
            "prompt": render_prompt(kind),
            "image": base64.b64encode(image_bytes).decode("ascii"),
        }
        if image_id is not None:
            payload["id"] = image_id
        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"

        start = self._clock()
        attempts = 0
        last_failure = "no request made"
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                self._sleep(self.config.backoff_base * 2 ** (attempt - 1))
            self._limiter.wait()
            attempts += 1
            try:
                response = self._client.post(self.config.endpoint, json=payload,
                                             headers=headers)
            except httpx.HTTPError as exc:
                last_failure = f"transport failure: {exc}"
                continue
            if response.status_code in _RETRYABLE_STATUS or response.status_code >= 500:
                last_failure = f"HTTP {response.status_code}"
                continue
            if response.status_code != 200:
                raise TransportError(
                    f"endpoint returned HTTP {response.status_code}: "
                    f"{response.text[:200]}", attempts=attempts
                )
            try:
                text = response.json().get("text", "")
            except (json.JSONDecodeError, ValueError):
                text = response.text
            verdict = parse_verdict(text, strict=self.config.strict_parsing)
            verdict.attempts = attempts
            verdict.latency_s = self._clock() - start
            return verdict
        raise TransportError(
            f"exhausted {attempts} attempts: {last_failure}", attempts=attempts
        )


# --- zero-shot evaluation --------------------------------------------------------


@dataclass
class VerdictLogEntry:
    id: str
    kind: PromptKind
    outcome: Outcome
    raw: str
    attempts: int
    latency_ms: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "kind": self.kind.value,
                "outcome": self.outcome.value,
                "raw": self.raw,
                "attempts": self.attempts,
                "latency_ms": self.latency_ms,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "VerdictLogEntry":
        data = json.loads(line)
        return cls(
            id=data["id"],
            kind=PromptKind(data["kind"]),
            outcome=Outcome(data["outcome"]),
            raw=data["raw"],
            attempts=data["attempts"],
            latency_ms=data["latency_ms"],
        )


@dataclass
class ZeroShotResult:
    metrics: Metrics
    confusion: ConfusionMatrix
    invalid_count: int
    requested: int
    entries: list[VerdictLogEntry] = field(default_factory=list)


def read_verdict_log(path: str | Path) -> list[VerdictLogEntry]:
    path = Path(path)
    if not path.exists():
        return []
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            entries.append(VerdictLogEntry.from_json(line))
    return entries


def zero_shot_eval(
    manifest: DatasetManifest,
    kind: PromptKind,
    client: LlmClient,
    log_path: str | Path,
    resume: bool = False,
    root: str | Path | None = None,
) -> ZeroShotResult:
    """One classification per manifest image; Invalid verdicts score as wrong
    and are tallied separately. The verdict log is JSON-lines, append-only, and
    makes re-runs with `resume` request only missing ids."""
    from concurrent.futures import ThreadPoolExecutor

    log_path = Path(log_path)
    done: dict[str, VerdictLogEntry] = {}
    if resume:
        done = {e.id: e for e in read_verdict_log(log_path) if e.kind == kind}
    elif log_path.exists():
        log_path.unlink()

    todo = [row for row in manifest.rows if row.path not in done]
    base = Path(root) if root is not None else None
    log_lock = threading.Lock()

    def run_one(row) -> VerdictLogEntry:
        file_path = Path(row.path)
        if base is not None and not file_path.is_absolute():
            file_path = base / file_path
        try:
            data = file_path.read_bytes()
        except OSError as exc:
            verdict = Verdict(Outcome.INVALID, f"<error: unreadable image: {exc}>")
        else:
            try:
                verdict = client.classify(data, kind, image_id=row.path)
            except TransportError as exc:
                verdict = Verdict(Outcome.INVALID, f"<error: {exc}>",
                                  attempts=exc.attempts)
        entry = VerdictLogEntry(
            id=row.path,
            kind=kind,
            outcome=verdict.outcome,
            raw=verdict.raw,
            attempts=verdict.attempts,
            latency_ms=round(verdict.latency_s * 1000.0, 3),
        )
        with log_lock:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(entry.to_json() + "\n")
        return entry

    new_entries: list[VerdictLogEntry] = []
    if todo:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        with ThreadPoolExecutor(max_workers=client.config.max_in_flight) as pool:
            new_entries = list(pool.map(run_one, todo))

    by_id = dict(done)
    by_id.update({e.id: e for e in new_entries})
    entries = [by_id[row.path] for row in manifest.rows if row.path in by_id]
    return score_verdicts(manifest, entries, requested=len(todo))


def score_verdicts(
    manifest: DatasetManifest, entries: list[VerdictLogEntry], requested: int = 0
) -> ZeroShotResult:
    """Metrics over a verdict log; an Invalid counts as predicting the wrong
    class so accuracy stays fraction-correct."""
    truth = {row.path: row.label for row in manifest.rows}
    pairs: list[tuple[Label, Label]] = []
    invalid = 0
    for entry in entries:
        true_label = truth[entry.id]
        if entry.outcome is Outcome.REAL:
            predicted = Label.REAL
        elif entry.outcome is Outcome.FAKE:
            predicted = Label.FAKE
        else:
            invalid += 1
            predicted = Label.FAKE if true_label is Label.REAL else Label.REAL
        pairs.append((true_label, predicted))
    cm = confusion(pairs)
    return ZeroShotResult(
        metrics=metrics_from(cm),
        confusion=cm,
        invalid_count=invalid,
        requested=requested,
        entries=entries,
    )


# --- deterministic mock endpoints --------------------------------------------------


def oracle_transport(manifest: DatasetManifest) -> httpx.MockTransport:
    """Mock that answers with each image's true label (perfect classifier)."""
    truth = {row.path: row.label for row in manifest.rows}

    def handler(request: httpx.Request) -> httpx.Response:
        payload = json.loads(request.content.decode("utf-8"))
        label = truth.get(payload.get("id"))
        if label is None:
            return httpx.Response(200, json={"text": "unknown image"})
        return httpx.Response(200, json={"text": str(label)})

    return httpx.MockTransport(handler)


def scripted_transport(by_id: dict[str, str], default: str = "real") -> httpx.MockTransport:
    """Mock that answers from a fixed id -> text table."""

    def handler(request: httpx.Request) -> httpx.Response:
        payload = json.loads(request.content.decode("utf-8"))
        return httpx.Response(200, json={"text": by_id.get(payload.get("id"), default)})

    return httpx.MockTransport(handler)


def mock_transport_from_arg(
    arg: str, manifest: DatasetManifest
) -> httpx.MockTransport:
    """CLI `--mock` values: the literal "oracle" or a path to a JSON script
    {"default": text, "by_id": {id: text}}."""
    if arg == "oracle":
        return oracle_transport(manifest)
    script_path = Path(arg)
    if not script_path.exists():
        raise ConfigError(f"mock script not found: {arg}")
    try:
        script = json.loads(script_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"mock script {arg} is not valid JSON: {exc}") from exc
    return scripted_transport(script.get("by_id", {}), script.get("default", "real"))
