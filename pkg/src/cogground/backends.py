"""Grounding backends and coordinate parsing.

Two backend kinds are supported: ``remote`` talks to an OpenAI-style
vision-chat completion endpoint, ``scripted`` replays canned text keyed by
(instance id, step index) and is the deterministic stand-in used by tests.
"""
from __future__ import annotations

import base64
import json
import logging
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Tuple

import httpx
import numpy as np

from .exceptions import (BackendTimeout, ConfigError, PointParseError, ProtocolError,
                         ScriptedMiss, TransportError)
from .geometry import Point, round_half_away
from .imaging import check_image, encode_png, image_size, resize

logger = logging.getLogger(__name__)

CONVENTIONS = ("absolute_pixels", "normalized_unit", "normalized_1000")
WILDCARD = "*"


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str
    model_name: str = "scripted"
    endpoint_url: str = ""
    auth_token_env: str = ""
    coordinate_convention: str = "absolute_pixels"
    max_image_edge: int = 0
    timeout: float = 60.0
    max_retries: int = 2
    max_concurrency: int = 4
    backoff_base: float = 0.5
    # scripted only: {instance_id: {step_index: reply}}
    script: Mapping = field(default_factory=dict, compare=False)
    default: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("remote", "scripted"):
            raise ConfigError(f"backend kind must be 'remote' or 'scripted', got {self.kind!r}")
        if self.kind == "remote" and not (self.endpoint_url and self.model_name):
            raise ConfigError("remote backend requires endpoint_url and model_name")
        if self.coordinate_convention not in CONVENTIONS:
            raise ConfigError(f"unknown coordinate_convention {self.coordinate_convention!r}")
        if self.max_image_edge < 0:
            raise ConfigError("max_image_edge must be >= 0")
        if self.max_retries < 0 or self.max_concurrency < 1 or self.timeout <= 0:
            raise ConfigError("max_retries >= 0, max_concurrency >= 1 and timeout > 0 required")
        script = {str(k): {int(s): str(v) for s, v in steps.items()}
                  for k, steps in dict(self.script).items()}
        object.__setattr__(self, "script", script)

    def to_dict(self):
        d = {
            "kind": self.kind,
            "model_name": self.model_name,
            "coordinate_convention": self.coordinate_convention,
            "max_image_edge": self.max_image_edge,
        }
        if self.kind == "remote":
            d.update(endpoint_url=self.endpoint_url, auth_token_env=self.auth_token_env,
                     timeout=self.timeout, max_retries=self.max_retries,
                     max_concurrency=self.max_concurrency, backoff_base=self.backoff_base)
        else:
            d["script"] = {k: {str(s): v for s, v in sorted(steps.items())}
                           for k, steps in sorted(self.script.items())}
            d["default"] = self.default
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown backend fields: {sorted(unknown)}")
        if "auth_token" in d or "api_key" in d:
            raise ConfigError("tokens are read from the environment; set auth_token_env instead")
        return cls(**d)


def scripted_backend(script: Mapping, default: Optional[str] = None,
                     coordinate_convention: str = "absolute_pixels",
                     max_image_edge: int = 0) -> BackendDescriptor:
    """Build a scripted backend from ``{(instance_id, step_index): reply}``.

    Use ``"*"`` as the instance id to answer a step for every instance.
    """
    nested = {}
    for (inst, step), reply in script.items():
        nested.setdefault(str(inst), {})[int(step)] = reply
    return BackendDescriptor(kind="scripted", script=nested, default=default,
                             coordinate_convention=coordinate_convention,
                             max_image_edge=max_image_edge)


@dataclass(frozen=True)
class GroundingQuery:
    image: np.ndarray = field(repr=False)
    prompt: str
    instance_id: str = ""
    step_index: int = 1

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")


@dataclass(frozen=True)
class RawReply:
    text: str
    latency: float  # milliseconds
    attempt_count: int = 1
    # original-size / sent-size per axis; (1, 1) when the image was sent as is
    scale: Tuple[float, float] = (1.0, 1.0)
    sent_size: Tuple[int, int] = (0, 0)


def downscale_size(width: int, height: int, max_edge: int) -> Tuple[int, int]:
    """Target (w, h) so the longer edge is at most ``max_edge``; aspect preserved."""
    if max_edge <= 0 or max(width, height) <= max_edge:
        return width, height
    if width >= height:
        return max_edge, max(1, int(height * max_edge / width))
    return max(1, int(width * max_edge / height)), max_edge


_limiters: dict = {}
_limiters_lock = threading.Lock()


def _limiter(backend: BackendDescriptor) -> threading.Semaphore:
    key = (backend.kind, backend.endpoint_url, backend.model_name)
    with _limiters_lock:
        sem = _limiters.get(key)
        if sem is None:
            sem = _limiters[key] = threading.BoundedSemaphore(backend.max_concurrency)
        return sem


def request_grounding(backend: BackendDescriptor, query: GroundingQuery) -> RawReply:
    """Send one grounding query and return the verbatim reply text.

    Images larger than ``max_image_edge`` are downscaled first; ``RawReply.scale``
    maps coordinates in the sent image back to the original.
    """
    image = check_image(query.image)
    w, h = image_size(image)
    sw, sh = downscale_size(w, h, backend.max_image_edge)
    if (sw, sh) != (w, h):
        image = resize(image, sw, sh)
    scale = (w / sw, h / sh)
    if backend.kind == "scripted":
        text = _scripted_reply(backend, query)
        return RawReply(text=text, latency=0.0, attempt_count=1, scale=scale, sent_size=(sw, sh))
    with _limiter(backend):
        text, latency, attempts = _remote_call(backend, image, query.prompt)
    return RawReply(text=text, latency=latency, attempt_count=attempts, scale=scale,
                    sent_size=(sw, sh))


def _scripted_reply(backend, query):
    for key in (query.instance_id, WILDCARD):
        steps = backend.script.get(key)
        if steps and query.step_index in steps:
            return steps[query.step_index]
    if backend.default is not None:
        return backend.default
    raise ScriptedMiss(f"no scripted reply for instance {query.instance_id!r} "
                       f"step {query.step_index} and no default")


def build_chat_payload(model_name: str, prompt: str, image: np.ndarray) -> dict:
    data_url = "data:image/png;base64," + base64.b64encode(encode_png(image)).decode("ascii")
    return {
        "model": model_name,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": prompt},
                {"type": "image_url", "image_url": {"url": data_url}},
            ],
        }],
    }


def extract_reply_text(body: dict) -> str:
    content = body["choices"][0]["message"]["content"]
    if isinstance(content, list):
        # some servers return content parts
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    return content


def _remote_call(backend, image, prompt):
    headers = {"Content-Type": "application/json"}
    if backend.auth_token_env:
        token = os.environ.get(backend.auth_token_env)
        if not token:
            raise TransportError(f"environment variable {backend.auth_token_env} is not set")
        headers["Authorization"] = f"Bearer {token}"
    payload = build_chat_payload(backend.model_name, prompt, image)

    attempts = 0
    last_exc = None
    start = time.monotonic()
    with httpx.Client(timeout=backend.timeout) as client:
        while attempts <= backend.max_retries:
            if attempts:
                # exponential backoff with full jitter, capped at the timeout
                cap = min(backend.timeout, backend.backoff_base * 2 ** (attempts - 1))
                time.sleep(random.uniform(0, cap))
            attempts += 1
            try:
                resp = client.post(backend.endpoint_url, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                last_exc = BackendTimeout(f"request to {backend.endpoint_url} timed out: {exc}")
                continue
            except httpx.TransportError as exc:
                last_exc = TransportError(f"cannot reach {backend.endpoint_url}: {exc}")
                continue
            if not resp.is_success:
                raise ProtocolError(f"endpoint returned HTTP {resp.status_code}",
                                    status=resp.status_code, body_excerpt=resp.text[:500],
                                    attempt_count=attempts)
            try:
                text = extract_reply_text(resp.json())
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProtocolError(f"malformed completion body: {exc}", status=resp.status_code,
                                    body_excerpt=resp.text[:500], attempt_count=attempts)
            return text, (time.monotonic() - start) * 1000.0, attempts
    last_exc.attempt_count = attempts
    raise last_exc


_NUM = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?|[-+]?(?:inf(?:inity)?|nan)"
_JSON_OBJ = re.compile(r"\{[^{}]*\}")
_BRACKETED = re.compile(r"[\(\[]\s*(" + _NUM + r")\s*,\s*(" + _NUM + r")\s*[\)\]]", re.I)
_BARE = re.compile(r"(?<![\w.])(" + _NUM + r")\s*,\s*(" + _NUM + r")(?!\w)", re.I)


def _json_pair(raw):
    for m in _JSON_OBJ.finditer(raw):
        try:
            obj = json.loads(m.group(0))
        except ValueError:
            continue
        if not isinstance(obj, dict):
            continue
        x, y = obj.get("x"), obj.get("y")
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (x, y)):
            return float(x), float(y)
    return None


def parse_point(raw, convention: str, image_width: int, image_height: int) -> Point:
    """Extract the first coordinate pair from model text and map it to pixels.

    Looks for, in order: a JSON object with numeric "x"/"y"; a "(x, y)" or
    "[x, y]" pair; two bare comma-separated numbers.
    """
    if image_width <= 0 or image_height <= 0:
        raise ValueError("image dimensions must be positive")
    if convention not in CONVENTIONS:
        raise ConfigError(f"unknown coordinate convention {convention!r}")
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    text = str(raw)

    pair = _json_pair(text)
    if pair is None:
        for pattern in (_BRACKETED, _BARE):
            m = pattern.search(text)
            if m:
                pair = float(m.group(1)), float(m.group(2))
                break
    if pair is None:
        raise PointParseError("no coordinate pair found in model reply", raw)
    x, y = pair
    if not (math.isfinite(x) and math.isfinite(y)):
        raise PointParseError(f"non-finite coordinates ({x}, {y})", raw)

    if convention == "normalized_unit":
        x, y = x * image_width, y * image_height
    elif convention == "normalized_1000":
        x, y = x * image_width / 1000, y * image_height / 1000
    try:
        return Point(round_half_away(x), round_half_away(y))
    except (ValueError, OverflowError) as exc:
        raise PointParseError(f"coordinates out of range: {exc}", raw)


def to_backend_frame(p: Point, backend: BackendDescriptor, width: int, height: int) -> Point:
    """Express a full-resolution pixel point in the coordinate frame ``backend`` replies in."""
    if backend.coordinate_convention == "normalized_unit":
        return Point(round(p.x / width, 4), round(p.y / height, 4))
    if backend.coordinate_convention == "normalized_1000":
        return Point(round_half_away(p.x * 1000 / width), round_half_away(p.y * 1000 / height))
    sw, sh = downscale_size(width, height, backend.max_image_edge)
    if (sw, sh) == (width, height):
        return p
    return Point(round_half_away(p.x * sw / width), round_half_away(p.y * sh / height))
