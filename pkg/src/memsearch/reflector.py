"""Prompt templates, LLM-output parsing, and program mutation/repair.

Prompt assembly is a pure function of its inputs: no hidden state, no
timestamps. Templates carry literal JSON braces, so placeholders are
substituted with a single-pass renderer instead of ``str.format``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .llm import LlmClient, LlmError
from .metrics import RubricGrade
from .model import CandidateRecord, CaseResult, MemoryProgramSource, RubricCriterion
from .patchkit import (
    PatchError,
    apply_patch,
    extract_commit_message,
    extract_patch_block,
    parse_patch,
)

REFLECTION_CASE_COUNT = 2  # underperforming cases shown per mutation step

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


def _render(template: str, **values: str) -> str:
    def substitute(match: re.Match) -> str:
        name = match.group(1)
        return str(values[name]) if name in values else match.group(0)

    return _PLACEHOLDER.sub(substitute, template)


INTERFACE_SPEC = """You are designing a Knowledge Base Program that implements three classes:

1. **KnowledgeItem** (dataclass): Defines what information is captured
   as knowledge items when writing to the knowledge base.
   - Must be a @dataclass with typed fields
   - An external LLM will populate instances by generating JSON matching
     your field definitions
   - **Field types MUST be JSON-compatible**: use only str, int, float,
     bool, list[str], Optional[str]
   - Do NOT use datetime, tuple, bytes, or custom objects
   - Use `field(metadata={"description": "..."})` to describe fields

2. **Query** (dataclass): Defines what parameters are used when reading
   from the knowledge base.
   - Same constraints as KnowledgeItem

3. **KnowledgeBase** (class): The core knowledge base system.
   - `__init__(self, toolkit)`: Receives a Toolkit with:
     - `toolkit.db`: sqlite3.Connection (in-memory SQLite)
     - `toolkit.chroma`: chromadb ephemeral client
     - `toolkit.llm_completion(messages, **kwargs) -> str`: LLM for
       reasoning, summarization, and information extraction
       (1 call per write/read invocation)
     - `toolkit.logger.debug(message)`: Debug logging
   - `write(self, item: KnowledgeItem, raw_text: str) -> None`
   - `read(self, query: Query) -> str`

Allowed imports: json, re, math, hashlib, collections, dataclasses,
typing, datetime, textwrap, sqlite3, chromadb

## Runtime Constraints
- `read()` output limit: at most 3000 characters.
- `write()` / `read()` timeout: 60 seconds each.
- `toolkit.llm_completion()` budget: at most 1 LLM call per
  `write()` or `read()` invocation. The budget resets before each call.

## Instruction Constants (required)
Four module-level string constants:
- INSTRUCTION_KNOWLEDGE_ITEM: What to extract and how to structure it.
- INSTRUCTION_QUERY: How to formulate retrieval queries.
- INSTRUCTION_RESPONSE: Answer format, length, and style.
- ALWAYS_ON_KNOWLEDGE: Persistent context injected into every task
  agent prompt. Can be empty."""


PATCH_FORMAT_SPEC = """Before the patch, output a commit message summarizing your changes:

*** Commit Message
Title: <one-line summary of what you changed and why>
- <root cause / diagnosis>
- <what you changed>

Then output your changes as a V4A patch.

IMPORTANT: You MUST output the exact markers `*** Begin Patch` and
`*** End Patch` on their own lines. Do NOT wrap them in code fences.

Format:
*** Begin Patch
*** Update File: program.py
@@ <optional context hint>
 context line (1-2 lines before change)
-removed line
+added line
 context line (1-2 lines after change)
*** End Patch

Rules:
- Lines prefixed with `-` are removed, `+` are added,
  ` ` (space) are unchanged context.
- Include 1-2 context lines before and after each change.
- Multiple hunks are allowed within one `*** Update File` block."""


KNOWLEDGE_ITEM_TEMPLATE = """{instruction}

Text: {raw_text}

The KnowledgeItem must conform to this schema:
{schema}

Output ONLY a valid JSON object matching the schema fields. No explanation."""


QUERY_TEMPLATE = """{instruction}

Question: {question}

The query must be a JSON object matching this schema:
{schema}

Respond with the JSON only."""


REFLECTION_TEMPLATE = """You are an expert Python programmer specializing in knowledge base
system design.

Your task: Given a Knowledge Base Program, its evaluation score, and
underperforming cases, identify the root cause of each low score and
improve the program. Improvements are two-fold:
(A) **Prompt Optimization** -- tune the four instruction constants
    (especially ALWAYS_ON_KNOWLEDGE) to steer the task agent's
    behavior, and
(B) **Memory Design** -- improve the KnowledgeItem/Query schemas and
    KnowledgeBase storage/retrieval logic.
Both dimensions matter and should be considered together.

<interface_spec>
{interface_spec}
</interface_spec>

<rules>
1. Output your diagnosis first, then your changes as a patch.
2. The code must define exactly three classes (KnowledgeItem, Query,
   KnowledgeBase) and four module-level string constants
   (INSTRUCTION_KNOWLEDGE_ITEM, INSTRUCTION_QUERY,
   INSTRUCTION_RESPONSE, ALWAYS_ON_KNOWLEDGE).
3. KnowledgeBase.__init__ must accept `toolkit`; write takes a
   KnowledgeItem and a raw_text string; read takes a Query and
   returns str.
4. `read()` must return at most 3000 characters.
5. Keep it simple. Make minimal changes that generalize beyond the
   specific cases shown -- no hardcoded word lists or
   case-specific pattern rules.
6. **Prompt Optimization**: Update INSTRUCTION_* to steer the task
   LLM's output format. Update ALWAYS_ON_KNOWLEDGE with domain
   strategies, heuristics, and behavioral rules the task agent
   should always follow -- this constant is injected into EVERY
   task agent action/decision prompt and is often the
   highest-leverage change. Study the <model_generation> transcripts
   in the underperforming cases to identify agent behavioral
   patterns (e.g., looping, inefficient exploration, wrong object
   selection) that ALWAYS_ON_KNOWLEDGE can fix.
7. **Memory Design**: Improve KnowledgeItem/Query field schemas and
   KnowledgeBase read()/write() logic to store and retrieve more
   useful information for the task agent.
8. Add clear comments explaining WHY each part of the code works
   the way it does -- this helps future iterations understand and
   preserve your design decisions.
</rules>

<patch_format>
{patch_format}
</patch_format>

<current_program iteration="{iteration}">
```python
{code}
```
</current_program>

<evaluation_score>{score}</evaluation_score>

{optional_sections}The following cases show poor performance on the validation set after
memory has been written. Each case contains the full
retrieval-and-answer conversation trajectory.

<underperforming_cases>
{cases}
</underperforming_cases>

<task>
1. Diagnose why these cases scored low -- examine both the retrieval
   conversation AND the <model_generation> transcript for agent
   behavioral issues.
2. Propose improvements along two dimensions:
   (A) **Prompt Optimization**: How should INSTRUCTION_* and
       ALWAYS_ON_KNOWLEDGE change to steer the task agent better?
   (B) **Memory Design**: How should the schemas or
       storage/retrieval logic change to provide more useful
       information?
3. Output your changes as a patch.
</task>"""


COMPILE_FIX_TEMPLATE = """You are an expert Python programmer. A Knowledge Base Program failed
to compile or run. Fix the error and output your fix as a patch.

{interface_spec}

## Failing Code
```python
{code}
```

## Error
**{error_type}**: {error_details}

Fix the error and output your fix as a patch."""


JUDGE_ANSWER_TEMPLATE = """You are a strict judge. Determine if the output answers the question
correctly based on the expected answer. Reply ONLY with 1 (correct)
or 0 (incorrect).

Expected answer: {expected}
Actual output:   {output}

Score (0 or 1):"""


JUDGE_RUBRIC_TEMPLATE = """Your job is to look at a conversation and a rubric item, and score
the last turn (the last assistant response) on how well it follows
the rubric item.

# Conversation
{conversation}

# Rubric item
{rubric_item}

# Instructions
Return a json object with fields: "explanation" and "criteria_met".
- "explanation": why the response does or does not meet the criteria.
- "criteria_met": boolean. If a rubric item has multiple criteria,
  all must be met to return true.
- Exception: if criteria says "such as" or "for example", the
  response need not include all listed examples.
- For negative criteria (undesirable traits), return whether the
  criteria IS met (true = bad behavior present), not whether the
  response is good."""


FORMAT_REMINDER = (
    "Your previous reply was not a valid JSON object. "
    "Output ONLY a valid JSON object matching the schema fields. No explanation."
)

REGRESSION_MARKER = "<- REGRESSION"


class ExtractionFailure(RuntimeError):
    """The agent's structured output stayed unparseable after the retry."""


@dataclass
class MutationFailure(Exception):
    """A patch-level failure (no patch, parse, or apply) during mutation."""

    stage: str
    detail: str
    commit_title: str = ""

    def __str__(self) -> str:
        return f"{self.stage}: {self.detail}"


@dataclass(frozen=True)
class Commit:
    title: str
    body: tuple[str, ...] = ()


@dataclass
class ReflectionContext:
    """Everything the reflector sees for one mutation step."""

    program: MemoryProgramSource
    score: float
    iteration: int
    underperforming: list[CaseResult]
    lineage: list[tuple[str, float, bool]] = field(default_factory=list)
    write_traces: list = field(default_factory=list)
    success_cases: list[CaseResult] = field(default_factory=list)
    reference_programs: list[tuple[str, float]] = field(default_factory=list)
    debug_lines: list[str] = field(default_factory=list)


def extract_json_record(text: str) -> Optional[dict]:
    """Outermost braced JSON object, tolerating fences and surrounding prose."""
    start = text.find("{")
    while start != -1:
        end = _match_brace(text, start)
        if end != -1:
            try:
                record = json.loads(text[start : end + 1])
            except json.JSONDecodeError:
                pass
            else:
                if isinstance(record, dict):
                    return record
        start = text.find("{", start + 1)
    return None


def _match_brace(text: str, start: int) -> int:
    depth = 0
    in_string = False
    escaped = False
    for index in range(start, len(text)):
        ch = text[index]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return index
    return -1


def render_schema(fields: Sequence[dict]) -> str:
    lines = []
    for entry in fields:
        description = entry.get("description", "")
        suffix = f": {description}" if description else ""
        lines.append(f"- {entry['name']} ({entry.get('type', 'str')}){suffix}")
    return "\n".join(lines) if lines else "(no declared fields)"


def _empty_value(type_name: str):
    base = type_name.strip().lower()
    if base.startswith("list"):
        return []
    if base.startswith("int"):
        return 0
    if base.startswith("float"):
        return 0.0
    if base.startswith("bool"):
        return False
    if base.startswith("optional"):
        return None
    return ""


def _coerce_to_schema(record: dict, schema: Sequence[dict]) -> dict:
    """Keep known keys, fill missing fields with type-appropriate empties."""
    coerced = {}
    for entry in schema:
        name = entry["name"]
        if name in record:
            coerced[name] = record[name]
        else:
            coerced[name] = _empty_value(entry.get("type", "str"))
    return coerced


def _generate_record(
    client: LlmClient,
    template: str,
    schema: Sequence[dict],
    **template_values: str,
) -> tuple[Optional[dict], list[tuple[str, str]]]:
    prompt = _render(template, schema=render_schema(schema), **template_values)
    turns: list[tuple[str, str]] = [("user", prompt)]
    response = client.complete([{"role": "user", "content": prompt}], role="task")
    turns.append(("assistant", response))
    record = extract_json_record(response)
    if record is None:
        retry_messages = [
            {"role": "user", "content": prompt},
            {"role": "assistant", "content": response},
            {"role": "user", "content": FORMAT_REMINDER},
        ]
        turns.append(("user", FORMAT_REMINDER))
        response = client.complete(retry_messages, role="task")
        turns.append(("assistant", response))
        record = extract_json_record(response)
    if record is None:
        return None, turns
    return _coerce_to_schema(record, schema), turns


def generate_knowledge_item(
    client: LlmClient,
    instruction: str,
    schema: Sequence[dict],
    raw_text: str,
) -> tuple[Optional[dict], list[tuple[str, str]]]:
    """Extract a structured knowledge item from episode text.

    Returns (record, transcript); record is None when extraction failed
    after the one format-reminder retry (the evaluator skips the episode).
    """
    return _generate_record(
        client, KNOWLEDGE_ITEM_TEMPLATE, schema, instruction=instruction, raw_text=raw_text
    )


def generate_query(
    client: LlmClient,
    instruction: str,
    schema: Sequence[dict],
    question: str,
) -> tuple[Optional[dict], list[tuple[str, str]]]:
    """Formulate a structured retrieval query for a question."""
    return _generate_record(
        client, QUERY_TEMPLATE, schema, instruction=instruction, question=question
    )


def render_answer_prompt(always_on: str, retrieved: str, instruction: str) -> str:
    inner = f"{always_on}\n\n{retrieved}" if always_on else retrieved
    return f"<retrieved_memory>\n{inner}\n</retrieved_memory>\n\n{instruction}"


def generate_answer(
    client: LlmClient,
    always_on: str,
    retrieved: str,
    instruction: str,
    conversation: Sequence[tuple[str, str]],
) -> tuple[str, list[tuple[str, str]]]:
    """Answer with the retrieved-memory envelope appended to the conversation."""
    prompt = render_answer_prompt(always_on, retrieved, instruction)
    messages = [{"role": speaker, "content": text} for speaker, text in conversation]
    messages.append({"role": "user", "content": prompt})
    answer = client.complete(messages, role="task")
    turns = list(conversation) + [("user", prompt), ("assistant", answer)]
    return answer, turns


def _render_case(case: CaseResult, case_id: int) -> str:
    conversation = "\n".join(f"  [{speaker}]: {text}" for speaker, text in case.transcript)
    expected = case.query.expected_text
    if case.query.rubric is not None:
        expected = "; ".join(criterion.text for criterion in case.query.rubric)
    return (
        f'<case id="{case_id}">\n'
        f"<question>{case.query.question}</question>\n"
        f"<rationale>{expected}</rationale>\n"
        f"<model_generation>{case.prediction}</model_generation>\n"
        f"<score>{case.score:.4f}</score>\n"
        f"<conversation>\n{conversation}\n</conversation>\n"
        f"</case>"
    )


def _optional_sections(ctx: ReflectionContext) -> str:
    sections: list[str] = []
    if ctx.lineage:
        entries = []
        for title, delta, regression in ctx.lineage:
            line = f"- {title} (dJ={delta:+.4f})"
            if regression:
                line += f" {REGRESSION_MARKER}"
            entries.append(line)
        sections.append("<lineage_log>\n" + "\n".join(entries) + "\n</lineage_log>")
    if ctx.write_traces:
        blocks = []
        for trace in ctx.write_traces:
            turns = "\n".join(f"  [{speaker}]: {text}" for speaker, text in trace.turns)
            blocks.append(f'<write_example episode="{trace.episode_id}">\n{turns}\n</write_example>')
        sections.append("<write_examples>\n" + "\n".join(blocks) + "\n</write_examples>")
    if ctx.debug_lines:
        sections.append(
            "<memory_debug_logs>\n" + "\n".join(ctx.debug_lines) + "\n</memory_debug_logs>"
        )
    if ctx.success_cases:
        rendered = "\n".join(
            _render_case(case, index + 1) for index, case in enumerate(ctx.success_cases)
        )
        sections.append(
            "<success_cases>\nPreserve whatever makes these cases work.\n"
            + rendered
            + "\n</success_cases>"
        )
    if ctx.reference_programs:
        blocks = [
            f'<reference_program score="{score:.4f}">\n```python\n{source}\n```\n</reference_program>'
            for source, score in ctx.reference_programs
        ]
        sections.append(
            "<reference_programs>\nStudy which design patterns correlate with scores "
            "within the pool.\n" + "\n".join(blocks) + "\n</reference_programs>"
        )
    if not sections:
        return ""
    return "\n\n".join(sections) + "\n\n"


def build_reflection_prompt(ctx: ReflectionContext) -> list[dict]:
    """The full mutation prompt; optional sections appear only when populated."""
    if not ctx.underperforming:
        raise ValueError("reflection requires at least one underperforming case")
    cases = "\n".join(
        _render_case(case, index + 1) for index, case in enumerate(ctx.underperforming)
    )
    content = _render(
        REFLECTION_TEMPLATE,
        interface_spec=INTERFACE_SPEC,
        patch_format=PATCH_FORMAT_SPEC,
        iteration=str(ctx.iteration),
        code=ctx.program.source_text,
        score=f"{ctx.score:.4f}",
        optional_sections=_optional_sections(ctx),
        cases=cases,
    )
    return [{"role": "user", "content": content}]


def mutate_program(
    client: LlmClient,
    parent: CandidateRecord,
    ctx: ReflectionContext,
) -> tuple[MemoryProgramSource, Commit]:
    """One reflective mutation: prompt, patch extraction, application.

    Raises MutationFailure on patch-level errors; the parent is never
    modified, children link back through parent_id.
    """
    response = client.complete(build_reflection_prompt(ctx), role="reflector")
    title, body = extract_commit_message(response)
    try:
        block = extract_patch_block(response)
        document = parse_patch(block)
        child_text = apply_patch(parent.program.source_text, document)
    except PatchError as error:
        raise MutationFailure(
            stage=type(error).__name__, detail=str(error), commit_title=title
        ) from error
    child = MemoryProgramSource(
        source_text=child_text, parent_id=parent.id, iteration_born=ctx.iteration
    )
    return child, Commit(title=title, body=tuple(body))


def fix_program(
    client: LlmClient,
    broken: MemoryProgramSource,
    failure,
    attempts: int,
    compile_check,
) -> Optional[MemoryProgramSource]:
    """Bounded repair loop; returns the first program passing the compile check.

    ``failure`` is a runner Violation or a MutationFailure; patch-level
    failures inside the loop also consume attempts. None means Discard.
    """
    error_type, error_details = _describe_failure(failure)
    current = broken
    for _ in range(attempts):
        prompt = _render(
            COMPILE_FIX_TEMPLATE,
            interface_spec=INTERFACE_SPEC,
            code=current.source_text,
            error_type=error_type,
            error_details=error_details,
        )
        response = client.complete([{"role": "user", "content": prompt}], role="reflector")
        try:
            block = extract_patch_block(response)
            document = parse_patch(block)
            fixed_text = apply_patch(current.source_text, document)
        except PatchError as error:
            error_type, error_details = type(error).__name__, str(error)
            continue
        candidate = MemoryProgramSource(
            source_text=fixed_text,
            parent_id=broken.parent_id,
            iteration_born=broken.iteration_born,
        )
        violation = compile_check(candidate)
        if violation is None:
            return candidate
        current = candidate
        error_type, error_details = violation.kind, violation.detail
    return None


def _describe_failure(failure) -> tuple[str, str]:
    if isinstance(failure, MutationFailure):
        return failure.stage, failure.detail
    kind = getattr(failure, "kind", None)
    detail = getattr(failure, "detail", None)
    if kind is not None:
        return str(kind), str(detail or kind)
    return type(failure).__name__, str(failure)


def judge_answer(client: LlmClient, expected: str, output: str) -> str:
    """Binary-correctness judge call; the caller parses the 0/1 reply."""
    prompt = _render(JUDGE_ANSWER_TEMPLATE, expected=expected, output=output)
    return client.complete([{"role": "user", "content": prompt}], role="judge")


def grade_rubric_criterion(
    client: LlmClient,
    conversation: str,
    criterion: RubricCriterion,
) -> RubricGrade:
    """One judge call per criterion; parse failure defaults to not-met."""
    rubric_item = f"[{criterion.points:+g} points] {criterion.text}"
    prompt = _render(
        JUDGE_RUBRIC_TEMPLATE, conversation=conversation, rubric_item=rubric_item
    )
    messages = [{"role": "user", "content": prompt}]
    try:
        response = client.complete(messages, role="judge")
        record = extract_json_record(response)
        if record is None:
            messages += [
                {"role": "assistant", "content": response},
                {"role": "user", "content": FORMAT_REMINDER},
            ]
            response = client.complete(messages, role="judge")
            record = extract_json_record(response)
    except LlmError:
        record = None
    if record is None:
        return RubricGrade(criterion=criterion, met=False, explanation="judge parse failure")
    met = record.get("criteria_met", False)
    if isinstance(met, str):
        met = met.strip().lower() in ("true", "yes", "1")
    return RubricGrade(criterion=criterion, met=bool(met), explanation=str(record.get("explanation", "")))


def render_conversation(transcript: Sequence[tuple[str, str]]) -> str:
    return "\n".join(f"[{speaker}]: {text}" for speaker, text in transcript)
