"""Schema-constrained chat calls: every pipeline decision is machine-readable.

The model gets one shot plus one repair: if its output fails JSON parsing or
schema validation, the error is appended to the conversation and the call is
retried exactly once. Two model calls maximum, then MalformedModelOutput.
"""

from __future__ import annotations

import json
from dataclasses import replace

import jsonschema

from ..config import ProvidersConfig
from ..errors import MalformedModelOutput
from .base import ChatMessage, ChatProvider, ChatRequest, chat_complete


def parse_json_output(text: str):
    """Parse model output as JSON, tolerating prose around one ``{...}`` block."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    start = text.find("{")
    end = text.rfind("}")
    if start >= 0 and end > start:
        try:
            return json.loads(text[start : end + 1])
        except json.JSONDecodeError:
            pass
    raise ValueError("no JSON object in model output")


def constrained_json(
    provider: ChatProvider,
    req: ChatRequest,
    schema: dict,
    cfg: ProvidersConfig,
):
    """Run the request and validate the reply against ``schema``.

    Returns (value, repairs) where repairs is 0 or 1.
    """
    if req.response_schema is None:
        req = replace(req, response_schema=schema.get("$id", "inline"))
    response = chat_complete(provider, req, cfg)
    error = None
    try:
        value = parse_json_output(response.text)
        jsonschema.validate(value, schema)
        return value, 0
    except (ValueError, jsonschema.ValidationError) as exc:
        error = exc

    repair_req = ChatRequest(
        messages=[
            *req.messages,
            ChatMessage(role="assistant", content=response.text),
            ChatMessage(
                role="user",
                content=(
                    "Your reply was not valid. Validation error: "
                    f"{error}. Reply again with ONLY a JSON object matching the schema."
                ),
            ),
        ],
        temperature=req.temperature,
        response_schema=req.response_schema,
        max_tokens=req.max_tokens,
    )
    retry = chat_complete(provider, repair_req, cfg)
    try:
        value = parse_json_output(retry.text)
        jsonschema.validate(value, schema)
        return value, 1
    except (ValueError, jsonschema.ValidationError) as exc:
        raise MalformedModelOutput(
            f"model output failed validation after repair: {exc}"
        ) from exc
