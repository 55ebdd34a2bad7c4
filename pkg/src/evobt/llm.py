"""LLM seeding: prompt construction, chat-completion providers, and the
validate-and-regenerate loop that turns model replies into candidate trees.
"""
from __future__ import annotations

import base64
import json
import logging
import mimetypes
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import httpx

from evobt.bt import SkillRegistry
from evobt.text import ParseError, extract_tree, parse, serialize, validate
from evobt.world import Scenario

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "EVOBT_API_KEY"

GRAMMAR = """\
tree := node
node := "(" "seq" node* ")"        ; Sequence: ticks children left to right, succeeds if all succeed
      | "(" "fb" node* ")"         ; Fallback: ticks children left to right, succeeds if one succeeds
      | "(" "par" INT node* ")"    ; Parallel: ticks all children, succeeds if at least INT succeed
      | "(" "act" IDENT [IDENT] ")"  ; robot action, optional table argument
      | "(" "cond" IDENT [IDENT] ")" ; condition check, optional table argument
IDENT := [a-z][a-z0-9_]*
INT := [1-9][0-9]*"""

SKILL_NOTES = {
    "localise": "estimate the robot pose; the head must be up",
    "head_up": "raise the camera",
    "head_down": "lower the camera to look at a table",
    "tuck": "fold the arm in; the base cannot drive with the arm extended",
    "pick": "grasp the cube from the table in front of the robot; the head must be down",
    "place": "put the held cube down on the table in front of the robot",
    "move_to": "drive to a table; needs a localised robot and a folded arm",
    "have_cube": "true while the cube is in the gripper",
    "cube_placed": "true if the cube is on the given table",
    "task_done": "true once the cube is on the target table",
}

SYSTEM_TEMPLATE = """\
You are the task planner of a mobile manipulator robot. Your job is to write a
behavior tree that makes the robot complete the user's task.

Write the tree in this s-expression grammar:

{grammar}

Every node returns Success or Failure. The root is ticked repeatedly until
the task is done, so the tree may retry steps that fail.

Available actions (use "act"):
{actions}

Available condition checks (use "cond"):
{conditions}

Table arguments must be one of: {tables}.

Constraints:
- Use only the actions and condition checks listed above.
- Reply with exactly one s-expression and nothing else: no explanation,
  no markdown, no code fences.
"""


@dataclass(frozen=True)
class PromptBundle:
    system_message: str
    environment: str
    task_command: str
    image_ref: Optional[str] = None

    def user_message(self) -> str:
        return f"Environment:\n{self.environment}\n\nTask: {self.task_command}"


def _skill_lines(table: dict, kind: str) -> str:
    lines = []
    for name, domain in table.items():
        sig = f"({kind} {name} TABLE)" if domain else f"({kind} {name})"
        note = SKILL_NOTES.get(name)
        lines.append(f"- {sig}: {note}" if note else f"- {sig}")
    return "\n".join(lines)


def describe_environment(scenario: Scenario) -> str:
    lines = [f"The robot starts at ({scenario.robot_start[0]:g}, {scenario.robot_start[1]:g}) "
             "in an office, with its head up and arm tucked, not yet localised."]
    for name, (x, y) in scenario.geometry.items():
        role = ""
        if name == scenario.goal_table:
            role = " (the black target table)"
        lines.append(f"- {name} at ({x:g}, {y:g}) m{role}")
    if len(scenario.cube_source) == 1:
        lines.append(f"A cube lies on {scenario.cube_source[0]}.")
    else:
        lines.append("A cube lies on one of " + ", ".join(scenario.cube_source)
                     + "; which one is not known in advance.")
    return "\n".join(lines)


def build_prompt(scenario: Scenario, registry: SkillRegistry, task_text: str,
                 image_ref: Optional[str] = None) -> PromptBundle:
    if not task_text or not task_text.strip():
        raise ValueError("task_text must be a nonempty instruction")
    tables = sorted({p for d in (*registry.actions.values(), *registry.conditions.values())
                     if d for p in d})
    system = SYSTEM_TEMPLATE.format(
        grammar=GRAMMAR,
        actions=_skill_lines(registry.actions, "act"),
        conditions=_skill_lines(registry.conditions, "cond"),
        tables=", ".join(tables),
    )
    return PromptBundle(system, describe_environment(scenario), task_text.strip(),
                        str(image_ref) if image_ref else None)


# -- providers -------------------------------------------------------------

class ProviderError(Exception):
    pass


class ProviderUnreachable(ProviderError):
    """Network or authentication failure that retries could not fix."""


class ScriptExhausted(ProviderError):
    pass


class Provider(Protocol):
    def complete(self, bundle: PromptBundle) -> str: ...


class ReplayProvider:
    """Serves recorded replies from ``*.txt`` files in filename order."""

    def __init__(self, script_dir):
        self.script_dir = Path(script_dir)
        self.files = sorted(p for p in self.script_dir.glob("*.txt") if p.is_file())
        if not self.files:
            raise FileNotFoundError(f"no reply files (*.txt) in {self.script_dir}")
        self.served: list = []

    def __len__(self):
        return len(self.files)

    def complete(self, bundle: PromptBundle) -> str:
        if len(self.served) >= len(self.files):
            raise ScriptExhausted(f"all {len(self.files)} replies in {self.script_dir} consumed")
        path = self.files[len(self.served)]
        self.served.append(path.name)
        return path.read_text(encoding="utf-8")


def replay_provider(script_dir) -> ReplayProvider:
    return ReplayProvider(script_dir)


@dataclass(frozen=True)
class ProviderConfig:
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    model_name: str = "gpt-4o"
    temperature: float = 1.2
    top_p: float = 0.95
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 1.0


def _image_part(path: str) -> dict:
    mime = mimetypes.guess_type(path)[0] or "image/png"
    data = base64.b64encode(Path(path).read_bytes()).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:{mime};base64,{data}"}}


class ChatCompletionProvider:
    """Chat-completions style HTTP provider (system + user message)."""

    def __init__(self, config: ProviderConfig = ProviderConfig(),
                 client: Optional[httpx.Client] = None, sleep=time.sleep):
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)
        self.sleep = sleep

    def payload(self, bundle: PromptBundle) -> dict:
        user_text = bundle.user_message()
        if bundle.image_ref:
            content = [{"type": "text", "text": user_text}, _image_part(bundle.image_ref)]
        else:
            content = user_text
        return {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": bundle.system_message},
                {"role": "user", "content": content},
            ],
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
        }

    def complete(self, bundle: PromptBundle) -> str:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise ProviderUnreachable(
                f"authentication failed: environment variable {self.config.api_key_env} is not set")
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        payload = self.payload(bundle)
        last_error = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(self.config.endpoint_url, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in (401, 403):
                raise ProviderUnreachable(f"authentication failed (HTTP {resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProviderError(f"malformed completion response: {exc}") from exc
        raise ProviderUnreachable(f"no response after {self.config.max_retries + 1} attempts ({last_error})")


# -- regeneration loop -----------------------------------------------------

@dataclass
class AttemptRecord:
    attempt: int
    raw_reply: str
    extracted: Optional[str]
    error: Optional[str]
    violations: list
    verdict: str
    latency_s: float


@dataclass
class SeedRequestLog:
    records: list = field(default_factory=list)

    def append(self, record: AttemptRecord) -> None:
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def rejections(self) -> list:
        return [r for r in self.records if r.verdict != "accepted"]

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.records:
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")


def generate_candidates(provider: Provider, bundle: PromptBundle, n: int,
                        registry: SkillRegistry, max_attempts: Optional[int] = None,
                        clock=time.perf_counter) -> tuple:
    """Ask ``provider`` for trees until ``n`` contextually valid ones are in hand.

    Each reply goes through extraction, parsing and validation; rejected
    replies trigger another request. Returns (trees, log); the list is short
    when ``max_attempts`` runs out or a replay script is exhausted.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if max_attempts is None:
        max_attempts = 5 * n
    if max_attempts < n:
        raise ValueError("max_attempts must be >= n")
    trees, seed_log = [], SeedRequestLog()
    for attempt in range(1, max_attempts + 1):
        if len(trees) >= n:
            break
        start = clock()
        try:
            reply = provider.complete(bundle)
        except ScriptExhausted:
            log.info("replay script exhausted after %d attempts", attempt - 1)
            break
        latency = clock() - start
        extracted, error, violations = None, None, []
        try:
            extracted = extract_tree(reply)
            tree = parse(extracted)
        except ParseError as exc:
            error = exc.code
            verdict = "parse_error"
        else:
            report = validate(tree, registry)
            violations = [[list(v.path), v.code, v.severity] for v in report.violations]
            if report.ok:
                verdict = "accepted"
                trees.append(tree)
                extracted = serialize(tree)
            else:
                verdict = "invalid"
                error = report.errors[0].code
        seed_log.append(AttemptRecord(attempt, reply, extracted, error, violations, verdict,
                                      round(latency, 6)))
    return trees, seed_log
