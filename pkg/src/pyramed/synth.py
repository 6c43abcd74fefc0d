"""Instruction-data synthesis: prompts, provider mixing, parsing, instruct JSON.

Caption samples (figure caption plus in-context mentions) are turned into
prompts, assigned deterministically across two LLM HTTP providers at a fixed
ratio (default 25% provider A / 75% provider B), and the generated
conversations are parsed into LLaVA-style instruct records:

    {"id": ..., "image": ..., "conversations": [{"from": "human"|"gpt", "value": ...}]}

where the first human value starts with the literal token "<image>\\n".

Two wire formats are supported:

* ``messages_api``     — POST {base_url}/v1/messages, header ``x-api-key``,
  body {"model", "max_tokens", "system", "messages": [{"role": "user", ...}]},
  generated text at content[0].text.
* ``chat_completions`` — POST {base_url}/v1/chat/completions, header
  ``Authorization: Bearer``, body {"model", "messages": [system, user]},
  generated text at choices[0].message.content.

Retries apply to HTTP 429 and 5xx with exponential backoff (base 1 s,
factor 2, full jitter) up to max_attempts. Credentials come from the
environment variable named in the provider config and are checked before any
network I/O; injected transports (tests, --mock runs) may omit them.
"""

from __future__ import annotations

import json
import os
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Literal, Sequence

import httpx
import numpy as np

from .errors import (
    DanglingAssistantError,
    DuplicateIdsError,
    EmptyCaptionError,
    HttpError,
    MalformedRecordError,
    MalformedResponseError,
    MissingCredentialError,
    NoTurnsFoundError,
    RoleOrderViolationError,
    TooFewTurnsError,
)

IMAGE_TOKEN = "<image>\n"

SYSTEM_PROMPT = """You are an AI assistant specialized in biomedical topics.

You are provided with a text description (Figure Caption) of a figure image from a biomedical research paper. In some cases, you may have additional text (Figure Context) that mentions the image. Unfortunately, you don’t have access to the actual image.

Your task is to generate questions and answers about the visual aspects of the image based on the provided description, which adhering to the following guidelines:

- Focus on the visual aspects of the image that can be inferred without referring to specific facts, terms, abbreviations, dates, numbers, or names.

- Avoid using phrases like "mentioned", "caption", or "context". Refer to the information as being "in the image".

- Ensure questions are diverse and cover a range of visual aspects of the image.

- Include at least 2-3 turns of questions and answers about the visual aspects of the image.

- Answer responsibly, avoiding overconfidence, and do not provide medical advice or diagnostic information. Encourage the user to consult a healthcare professional for advice.

Now, generate sample conversations based on these guidelines."""


@dataclass(frozen=True)
class CaptionSample:
    id: str
    image_ref: str
    caption: str
    context_mentions: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "context_mentions", tuple(self.context_mentions))


@dataclass(frozen=True)
class Prompt:
    system: str
    user: str


@dataclass(frozen=True)
class ProviderConfig:
    kind: Literal["messages_api", "chat_completions"]
    base_url: str
    model: str
    auth_env_var: str
    max_attempts: int = 3
    timeout: float = 60.0
    max_parallel: int = 4
    max_tokens: int = 1024

    def __post_init__(self):
        if self.kind not in ("messages_api", "chat_completions"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.max_parallel < 1:
            raise ValueError(f"max_parallel must be >= 1, got {self.max_parallel}")


@dataclass(frozen=True)
class MixPlan:
    ratio_a: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ratio_a <= 1.0:
            raise ValueError(f"ratio_a must be in [0, 1], got {self.ratio_a}")


@dataclass(frozen=True)
class Turn:
    role: Literal["human", "assistant"]
    text: str


@dataclass(frozen=True)
class Conversation:
    turns: tuple[Turn, ...]

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.turns:
            raise NoTurnsFoundError("conversation has no turns")
        if self.turns[0].role != "human":
            raise DanglingAssistantError("conversation starts with an assistant turn")
        for prev, cur in zip(self.turns, self.turns[1:]):
            if prev.role == cur.role:
                raise RoleOrderViolationError(
                    f"two consecutive {cur.role} turns; roles must alternate"
                )
        if len(self.turns) < 2:
            raise TooFewTurnsError("conversation needs at least 2 turns")


def read_caption_samples(path: str | Path) -> list[CaptionSample]:
    """JSON-lines reader: one {id, image_ref, caption, context_mentions} per line."""
    samples = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            samples.append(
                CaptionSample(
                    id=str(obj["id"]),
                    image_ref=str(obj.get("image_ref", obj.get("image", ""))),
                    caption=str(obj["caption"]),
                    context_mentions=tuple(obj.get("context_mentions", ())),
                )
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise MalformedRecordError(f"{path}:{lineno}: bad caption sample: {exc}") from exc
    return samples


def build_prompt(
    sample: CaptionSample, fewshots: Sequence[tuple[str, str]] = ()
) -> Prompt:
    """Assemble the system/user prompt pair for one caption sample.

    The user text is blank-line-separated sections: each few-shot input and
    output, then a final block of "Figure Caption: ..." followed by one
    "In Context Mentioning #k: ..." line per mention (none if there are no
    mentions).
    """
    if not sample.caption:
        raise EmptyCaptionError(f"sample {sample.id} has an empty caption")
    sections: list[str] = []
    for shot_in, shot_out in fewshots:
        sections.append(shot_in)
        sections.append(shot_out)
    block = [f"Figure Caption: {sample.caption}"]
    block += [
        f"In Context Mentioning #{k}: {mention}"
        for k, mention in enumerate(sample.context_mentions, 1)
    ]
    sections.append("\n".join(block))
    return Prompt(system=SYSTEM_PROMPT, user="\n\n".join(sections))


def assign_providers(ids: Sequence[str], plan: MixPlan) -> dict[str, str]:
    """Map each id to provider "A" or "B" with an exact seeded quota.

    Exactly round(ratio_a * N) ids (ties-to-even) go to A, chosen by a seeded
    uniform permutation, so the mapping is deterministic per (ids, seed).
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        seen, dupes = set(), set()
        for i in ids:
            (dupes if i in seen else seen).add(i)
        raise DuplicateIdsError(dupes)
    quota = round(plan.ratio_a * len(ids))
    rng = np.random.Generator(np.random.PCG64(plan.seed))
    order = rng.permutation(len(ids))
    chosen_a = {ids[int(k)] for k in order[:quota]}
    return {i: ("A" if i in chosen_a else "B") for i in ids}


def _extract_text(kind: str, payload: dict) -> str:
    try:
        if kind == "messages_api":
            return payload["content"][0]["text"]
        return payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        path = "content[0].text" if kind == "messages_api" else "choices[0].message.content"
        raise MalformedResponseError(f"response JSON is missing {path}") from exc


def call_provider(
    cfg: ProviderConfig,
    prompt: Prompt,
    *,
    transport: httpx.BaseTransport | None = None,
    sleep: Callable[[float], None] = time.sleep,
    jitter_rng: random.Random | None = None,
) -> str:
    """POST one prompt and return the generated text.

    The credential named by cfg.auth_env_var is resolved before any network
    I/O; it may be absent only when a transport is injected. 429/5xx responses
    retry with full-jitter exponential backoff (base 1 s, factor 2) up to
    cfg.max_attempts; other non-2xx statuses fail immediately.
    """
    key = os.environ.get(cfg.auth_env_var)
    if key is None:
        if transport is None:
            raise MissingCredentialError(
                f"environment variable {cfg.auth_env_var} is not set"
            )
        key = "mock-key"

    if cfg.kind == "messages_api":
        url = f"{cfg.base_url.rstrip('/')}/v1/messages"
        headers = {"x-api-key": key}
        body = {
            "model": cfg.model,
            "max_tokens": cfg.max_tokens,
            "system": prompt.system,
            "messages": [{"role": "user", "content": prompt.user}],
        }
    else:
        url = f"{cfg.base_url.rstrip('/')}/v1/chat/completions"
        headers = {"Authorization": f"Bearer {key}"}
        body = {
            "model": cfg.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        }

    jitter = jitter_rng or random.Random()
    last_status = None
    with httpx.Client(transport=transport, timeout=cfg.timeout) as client:
        for attempt in range(1, cfg.max_attempts + 1):
            try:
                resp = client.post(url, json=body, headers=headers)
            except httpx.HTTPError as exc:
                raise HttpError(f"request to {url} failed: {exc}") from exc
            if resp.status_code == 429 or 500 <= resp.status_code < 600:
                last_status = resp.status_code
                if attempt < cfg.max_attempts:
                    sleep(jitter.uniform(0.0, 1.0 * 2 ** (attempt - 1)))
                    continue
                raise HttpError(
                    f"{url} still returning {last_status} after {cfg.max_attempts} attempts",
                    status=last_status,
                )
            if resp.status_code != 200:
                raise HttpError(
                    f"{url} returned {resp.status_code}", status=resp.status_code
                )
            try:
                payload = resp.json()
            except (json.JSONDecodeError, ValueError) as exc:
                raise MalformedResponseError(f"{url} returned non-JSON body") from exc
            return _extract_text(cfg.kind, payload)
    raise HttpError(f"{url} exhausted {cfg.max_attempts} attempts", status=last_status)


_ROLE_RE = re.compile(r"^\s*(?:\*\*)?\s*(User|Assistant)\s*(?:\*\*)?\s*:\s*(?:\*\*)?\s?(.*)$")


def parse_conversation(text: str) -> Conversation:
    """Parse generated text into alternating human/assistant turns.

    A line starting with "User:" or "Assistant:" (markdown-bold markers
    around the role are stripped) opens a turn; following lines without a
    role prefix are appended to the open turn, joined by newlines. Text
    before the first role line is ignored. Each turn is whitespace-trimmed.
    """
    turns: list[Turn] = []
    current_role: str | None = None
    current_lines: list[str] = []

    def flush():
        if current_role is not None:
            turns.append(Turn(role=current_role, text="\n".join(current_lines).strip()))

    for line in text.splitlines():
        m = _ROLE_RE.match(line)
        if m:
            flush()
            current_role = "human" if m.group(1) == "User" else "assistant"
            current_lines = [m.group(2)]
        elif current_role is not None:
            current_lines.append(line)
    flush()

    if not turns:
        raise NoTurnsFoundError("no User:/Assistant: lines found")
    return Conversation(turns=tuple(turns))


def conversation_to_entries(conv: Conversation) -> list[dict]:
    """Map turns to instruct conversation entries, adding the image token."""
    entries = []
    for k, turn in enumerate(conv.turns):
        value = turn.text
        if k == 0 and not value.startswith(IMAGE_TOKEN):
            value = IMAGE_TOKEN + value
        entries.append(
            {"from": "human" if turn.role == "human" else "gpt", "value": value}
        )
    return entries


def to_instruct_records(
    items: Iterable[tuple[CaptionSample, Conversation]]
) -> list[dict]:
    return [
        {
            "id": sample.id,
            "image": sample.image_ref,
            "conversations": conversation_to_entries(conv),
        }
        for sample, conv in items
    ]


def write_instruct_json(path: str | Path, records: list[dict]) -> None:
    """UTF-8 JSON array with stable key order id, image, conversations."""
    Path(path).write_text(
        json.dumps(records, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def to_instruct_json(
    items: Iterable[tuple[CaptionSample, Conversation]], path: str | Path
) -> list[dict]:
    """Convert (sample, conversation) pairs to records and write them as JSON."""
    records = to_instruct_records(items)
    write_instruct_json(path, records)
    return records


def read_instruct_json(path: str | Path) -> list[dict]:
    """Read and validate an instruct JSON array."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise MalformedRecordError(f"{path}: top level must be a JSON array")
    for idx, rec in enumerate(data):
        validate_instruct_record(rec, where=f"{path}[{idx}]")
    return data


def validate_instruct_record(rec: dict, where: str = "record") -> None:
    if not isinstance(rec, dict):
        raise MalformedRecordError(f"{where}: not an object")
    for key in ("id", "image", "conversations"):
        if key not in rec:
            raise MalformedRecordError(f"{where}: missing key {key!r}")
    convs = rec["conversations"]
    if not isinstance(convs, list) or not convs:
        raise MalformedRecordError(f"{where}: conversations must be a non-empty list")
    for k, entry in enumerate(convs):
        if not isinstance(entry, dict) or "from" not in entry or "value" not in entry:
            raise MalformedRecordError(f"{where}: conversations[{k}] needs from/value")
        if entry["from"] not in ("human", "gpt"):
            raise MalformedRecordError(
                f"{where}: conversations[{k}].from must be human or gpt"
            )


def merge_records(a: list[dict], b: list[dict]) -> tuple[list[dict], dict[str, int]]:
    """Concatenate two instruct record lists, rejecting any duplicate id."""
    ids: set[str] = set()
    dupes: set[str] = set()
    for rec in list(a) + list(b):
        rid = str(rec["id"])
        (dupes if rid in ids else ids).add(rid)
    if dupes:
        raise DuplicateIdsError(dupes)
    return list(a) + list(b), {"a": len(a), "b": len(b), "total": len(a) + len(b)}


def merge_instruct(
    a_path: str | Path, b_path: str | Path, out_path: str | Path
) -> dict[str, int]:
    """File-level merge: read, concatenate a-then-b, write, return counts."""
    merged, counts = merge_records(read_instruct_json(a_path), read_instruct_json(b_path))
    write_instruct_json(out_path, merged)
    return counts


def read_fewshots(path: str | Path) -> list[tuple[str, str]]:
    """JSON array of {"input": ..., "output": ...} pairs."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise MalformedRecordError(f"{path}: few-shot file must be a JSON array")
    try:
        return [(str(d["input"]), str(d["output"])) for d in data]
    except (KeyError, TypeError) as exc:
        raise MalformedRecordError(f"{path}: few-shot entries need input/output") from exc


def _mock_caption(prompt_user: str) -> str:
    for line in prompt_user.splitlines():
        if line.startswith("Figure Caption: "):
            return line[len("Figure Caption: "):]
    return "a biomedical figure"


def make_mock_transport() -> httpx.MockTransport:
    """Canned transport for --mock runs and tests.

    Produces a deterministic two-question conversation echoing the caption;
    the second answer names which wire format served it, so provider mix can
    be verified from the output records alone.
    """

    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content.decode("utf-8"))
        if request.url.path.endswith("/v1/messages"):
            user = body["messages"][0]["content"]
            label = "messages transport"
            shape = lambda text: {"content": [{"type": "text", "text": text}]}
        else:
            user = body["messages"][-1]["content"]
            label = "chat transport"
            shape = lambda text: {
                "choices": [{"message": {"role": "assistant", "content": text}}]
            }
        caption = _mock_caption(user)
        text = (
            f"User: <image>\nWhat is shown in this image?\n"
            f"Assistant: The image shows {caption}\n"
            f"User: Is anything else notable in the image?\n"
            f"Assistant: Nothing else stands out; this canned reply came from the {label}."
        )
        return httpx.Response(200, json=shape(text))

    return httpx.MockTransport(handler)


def synthesize(
    samples: Sequence[CaptionSample],
    plan: MixPlan,
    provider_a: ProviderConfig,
    provider_b: ProviderConfig,
    fewshots: Sequence[tuple[str, str]] = (),
    transport: httpx.BaseTransport | None = None,
) -> tuple[list[dict], dict[str, int]]:
    """Run the full synthesis pipeline over a batch of caption samples.

    Providers are called with up to max_parallel in-flight requests each;
    results are committed in input order regardless of completion order.
    Returns (instruct records, per-provider counts).
    """
    assignment = assign_providers([s.id for s in samples], plan)
    texts: list[str | None] = [None] * len(samples)

    for label, cfg in (("A", provider_a), ("B", provider_b)):
        indices = [i for i, s in enumerate(samples) if assignment[s.id] == label]
        if not indices:
            continue
        prompts = {i: build_prompt(samples[i], fewshots) for i in indices}
        with ThreadPoolExecutor(max_workers=cfg.max_parallel) as pool:
            futures = {
                i: pool.submit(call_provider, cfg, prompts[i], transport=transport)
                for i in indices
            }
            for i in indices:
                texts[i] = futures[i].result()

    items = [(s, parse_conversation(texts[i])) for i, s in enumerate(samples)]
    counts = {
        "A": sum(1 for v in assignment.values() if v == "A"),
        "B": sum(1 for v in assignment.values() if v == "B"),
    }
    return to_instruct_records(items), counts
