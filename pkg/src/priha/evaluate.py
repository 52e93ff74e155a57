"""Judge-scored evaluation of the pipeline over a JSONL QA dataset.

Each question runs through the selected mode with clarification disabled,
and a judge model scores the answer against the reference on five metrics
using a fixed rubric. Missing scores (a judge that stays malformed after its
repair) are excluded from the means rather than zero-filled, and counted.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .config import PipelineConfig
from .errors import BadLine, DuplicateId, NoScoredRows, PrihaError
from .optimizer import (
    SIMPLE,
    STATUS_DONE,
    ClarificationState,
    UserInput,
    finalize_intent,
    generalize,
)
from .pipeline import Runtime, run_pipeline
from .providers import ChatMessage, ChatProvider, ChatRequest, constrained_json
from .reconcile import FinalResponse

METRICS = ("accuracy", "completeness", "trustworthiness", "clarity", "relevance")

RUBRIC_DEFINITIONS = {
    "accuracy": "The answer is factually correct and consistent with ground truth.",
    "completeness": (
        "The response covers all aspects of the query and provides the "
        "necessary context."
    ),
    "trustworthiness": (
        "The response cites specific, verifiable, and authoritative sources."
    ),
    "clarity": (
        "The response uses clear, simple language, adopts an empathetic tone, "
        "and is well-structured and easy to read."
    ),
    "relevance": (
        "The response directly and completely addresses the specific question "
        "asked."
    ),
}

JUDGE_SYSTEM = (
    "[TAG:judge] You grade one assistant answer against the reference answer "
    "on five metrics, each scored as an integer on a 0-5 Likert scale:\n"
    + "\n".join(f"- {name}: {RUBRIC_DEFINITIONS[name]}" for name in METRICS)
    + "\nReply with a JSON object: "
    '{"accuracy": n, "completeness": n, "trustworthiness": n, "clarity": n, '
    '"relevance": n}.'
)

JUDGE_SCHEMA = {
    "$id": "judge_reply",
    "type": "object",
    "properties": {name: {"type": "integer"} for name in METRICS},
    "required": list(METRICS),
}

_QA_FIELDS = ("id", "category", "question", "reference_answer", "source_url")


@dataclass(frozen=True)
class QAPair:
    id: str
    category: str
    question: str
    reference_answer: str
    source_url: str


@dataclass(frozen=True)
class JudgeScore:
    accuracy: int
    completeness: int
    trustworthiness: int
    clarity: int
    relevance: int

    def as_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in METRICS}


@dataclass
class EvalRow:
    pair: QAPair
    response: FinalResponse | None = None
    error: str | None = None
    score: JudgeScore | None = None
    warnings: list[str] = field(default_factory=list)


@dataclass
class EvalReport:
    mode: str
    n: int
    n_scored: int
    n_missing: int
    metric_means: dict[str, float]
    overall_mean: float
    rows: list[dict]


def load_dataset(path: str | Path) -> list[QAPair]:
    """Read a JSONL dataset, one strict QAPair object per line."""
    pairs: list[QAPair] = []
    seen: set[str] = set()
    text = Path(path).read_text(encoding="utf-8-sig")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BadLine(lineno, f"invalid JSON: {exc}") from exc
        if not isinstance(row, dict):
            raise BadLine(lineno, "line is not a JSON object")
        missing = [k for k in _QA_FIELDS if k not in row]
        extra = [k for k in row if k not in _QA_FIELDS]
        if missing:
            raise BadLine(lineno, f"missing fields: {', '.join(missing)}")
        if extra:
            raise BadLine(lineno, f"unknown fields: {', '.join(extra)}")
        if not all(isinstance(row[k], str) for k in _QA_FIELDS):
            raise BadLine(lineno, "all fields must be strings")
        if not row["question"].strip() or not row["reference_answer"].strip():
            raise BadLine(lineno, "question and reference_answer must be non-empty")
        if row["id"] in seen:
            raise DuplicateId(row["id"])
        seen.add(row["id"])
        pairs.append(QAPair(**row))
    return pairs


def _answer_one(pair: QAPair, mode: str, rt: Runtime) -> EvalRow:
    inp = UserInput(
        text=pair.question,
        timestamp=rt.providers.clock.now(),
        session_id=f"eval-{pair.id}",
    )
    # Clarification stays disabled here: the question goes straight through.
    state = ClarificationState(status=STATUS_DONE)
    try:
        intent = finalize_intent(inp, state, SIMPLE, rt.providers.chat, rt.cfg)
        if mode != "zeroshot":
            intent = generalize(intent, rt.providers.chat, rt.cfg)
        response, _ = run_pipeline(intent, mode, rt)
        return EvalRow(pair=pair, response=response)
    except PrihaError as exc:
        return EvalRow(pair=pair, error=f"{type(exc).__name__}: {exc}")


def run_system_under_mode(
    pairs: list[QAPair], mode: str, rt: Runtime
) -> list[EvalRow]:
    """One response per pair; failures become error rows, the run continues."""
    workers = max(1, rt.cfg.providers.max_concurrent)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_answer_one, pair, mode, rt) for pair in pairs]
    return [f.result() for f in futures]


def _rendered_answer(response: FinalResponse) -> str:
    refs = "\n".join(
        f"[{c.eid}] {c.title} ({c.kind}, {c.date.isoformat()}) {c.locator}"
        for c in response.references
    )
    if refs:
        return f"{response.answer}\n\nReferences:\n{refs}"
    return response.answer


def judge_response(
    pair: QAPair, response: FinalResponse, chat: ChatProvider, cfg: PipelineConfig
) -> tuple[JudgeScore | None, list[str]]:
    """Score one answer; out-of-range values are clamped with a warning."""
    req = ChatRequest(
        messages=[
            ChatMessage(role="system", content=JUDGE_SYSTEM),
            ChatMessage(
                role="user",
                content=(
                    f"QUESTION:\n{pair.question}\n\n"
                    f"REFERENCE ANSWER (ground truth):\n{pair.reference_answer}\n\n"
                    f"ASSISTANT ANSWER:\n{_rendered_answer(response)}\n\n"
                    "Score the assistant answer."
                ),
            ),
        ]
    )
    try:
        value, _ = constrained_json(chat, req, JUDGE_SCHEMA, cfg.providers)
    except PrihaError as exc:
        return None, [f"judge failed: {type(exc).__name__}: {exc}"]
    warnings: list[str] = []
    clamped: dict[str, int] = {}
    for name in METRICS:
        raw = int(value[name])
        bounded = min(5, max(0, raw))
        if bounded != raw:
            warnings.append(f"{name} score {raw} clamped to {bounded}")
        clamped[name] = bounded
    return JudgeScore(**clamped), warnings


def round_half_up(x: float, places: int = 2) -> float:
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(str(x)).quantize(quantum, rounding=ROUND_HALF_UP))


def overall_from_means(means: dict[str, float]) -> float:
    """Headline score: the unweighted mean of the five metric means."""
    if set(means) != set(METRICS):
        raise ValueError(f"means must cover exactly the metrics {METRICS}")
    return sum(means.values()) / len(METRICS)


def aggregate_scores(rows: list[EvalRow], mode: str) -> EvalReport:
    """Per-metric means over scored rows; overall is the mean of those means."""
    scored = [r for r in rows if r.score is not None]
    if not scored:
        raise NoScoredRows("no row carries a judge score")
    means = {
        name: sum(getattr(r.score, name) for r in scored) / len(scored)
        for name in METRICS
    }
    overall = overall_from_means(means)
    row_views = []
    for r in rows:
        digest = None
        if r.response is not None:
            digest = hashlib.sha256(r.response.answer.encode("utf-8")).hexdigest()[:12]
        row_views.append(
            {
                "id": r.pair.id,
                "category": r.pair.category,
                "scores": r.score.as_dict() if r.score else None,
                "error": r.error,
                "warnings": list(r.warnings),
                "answer_digest": digest,
            }
        )
    return EvalReport(
        mode=mode,
        n=len(rows),
        n_scored=len(scored),
        n_missing=len(rows) - len(scored),
        metric_means=means,
        overall_mean=overall,
        rows=row_views,
    )


def report_to_dict(report: EvalReport) -> dict:
    return {
        "mode": report.mode,
        "n": report.n,
        "n_scored": report.n_scored,
        "n_missing": report.n_missing,
        "metric_means": {k: round_half_up(v) for k, v in report.metric_means.items()},
        "metric_means_raw": dict(report.metric_means),
        "overall_mean": round_half_up(report.overall_mean),
        "overall_mean_raw": report.overall_mean,
        "rows": report.rows,
    }


def report_to_markdown(report: EvalReport) -> str:
    header = "| Mode | " + " | ".join(m.capitalize() for m in METRICS) + " | Overall |"
    rule = "|" + "---|" * (len(METRICS) + 2)
    cells = " | ".join(f"{round_half_up(report.metric_means[m]):.2f}" for m in METRICS)
    body = f"| {report.mode} | {cells} | {round_half_up(report.overall_mean):.2f} |"
    return "\n".join(
        [
            f"# Evaluation report ({report.mode} mode, N={report.n})",
            "",
            header,
            rule,
            body,
            "",
            f"Scored rows: {report.n_scored}; missing scores: {report.n_missing}.",
        ]
    )


def write_report(report: EvalReport, out_base: str | Path) -> tuple[Path, Path]:
    """Emit ``<out>.json`` and ``<out>.md`` next to each other."""
    base = Path(out_base)
    if base.suffix in (".json", ".md"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    json_path = base.with_suffix(".json")
    md_path = base.with_suffix(".md")
    json_path.write_text(
        json.dumps(report_to_dict(report), indent=1, sort_keys=True, ensure_ascii=False),
        encoding="utf-8",
    )
    md_path.write_text(report_to_markdown(report) + "\n", encoding="utf-8")
    return json_path, md_path


def run_eval(
    dataset_path: str | Path, mode: str, rt: Runtime
) -> EvalReport:
    """Full harness pass: answer, judge, aggregate."""
    pairs = load_dataset(dataset_path)
    rows = run_system_under_mode(pairs, mode, rt)
    workers = max(1, rt.cfg.providers.max_concurrent)

    def _judge(row: EvalRow) -> EvalRow:
        if row.response is None:
            return row
        score, warnings = judge_response(
            row.pair, row.response, rt.providers.chat, rt.cfg
        )
        row.score = score
        row.warnings.extend(warnings)
        return row

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_judge, row) for row in rows]
    rows = [f.result() for f in futures]
    return aggregate_scores(rows, mode)
