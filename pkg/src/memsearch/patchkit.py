"""V4A patch parsing, application, and rendering.

The textual format uses exact markers ``*** Begin Patch`` / ``*** End Patch``
around one ``*** Update File:`` section whose hunks carry ``@@`` context hints
and lines prefixed with space (context), ``-`` (removed), or ``+`` (added).
All operations are pure; anchor matching is exact and whitespace-sensitive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

BEGIN_MARKER = "*** Begin Patch"
END_MARKER = "*** End Patch"
FILE_MARKER = "*** Update File:"
COMMIT_MARKER = "*** Commit Message"

FALLBACK_COMMIT_TITLE = "unlabeled change"

CONTEXT = "context"
REMOVED = "removed"
ADDED = "added"


class PatchError(Exception):
    pass


class NoPatchFound(PatchError):
    """The output carries no complete Begin/End marker pair."""


class ParseError(PatchError):
    def __init__(self, message: str, line_no: int = 0):
        self.line_no = line_no
        suffix = f" (line {line_no})" if line_no else ""
        super().__init__(f"{message}{suffix}")


class ApplyError(PatchError):
    def __init__(self, message: str, hunk_index: int):
        self.hunk_index = hunk_index
        super().__init__(f"hunk {hunk_index + 1}: {message}")


@dataclass
class PatchHunk:
    context_hint: Optional[str]
    lines: list[tuple[str, str]]

    def anchor(self) -> list[str]:
        """Context plus removed lines, in order: the text located in the source."""
        return [text for kind, text in self.lines if kind != ADDED]

    def has_change(self) -> bool:
        return any(kind != CONTEXT for kind, _ in self.lines)


@dataclass
class PatchDocument:
    target_file: str
    hunks: list[PatchHunk]
    commit_title: str = FALLBACK_COMMIT_TITLE
    commit_body: list[str] = field(default_factory=list)


def _normalize(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def extract_patch_block(llm_output: str) -> str:
    """Text strictly between the first Begin marker and the matching End marker.

    Prose and code fences around (but not inside) the markers are tolerated.
    """
    lines = _normalize(llm_output).split("\n")
    begin = None
    for index, line in enumerate(lines):
        if line.strip() == BEGIN_MARKER:
            begin = index
            break
    if begin is None:
        raise NoPatchFound(f"missing {BEGIN_MARKER!r} marker")
    for index in range(begin + 1, len(lines)):
        if lines[index].strip() == END_MARKER:
            return "\n".join(lines[begin + 1 : index])
    raise NoPatchFound(f"missing {END_MARKER!r} marker")


def extract_commit_message(llm_output: str) -> tuple[str, list[str]]:
    """Title after ``Title:`` and the ``-`` bullets that follow it.

    Lenient by design: commit messages are advisory lineage metadata, so a
    missing block yields a synthesized title and an empty body.
    """
    lines = _normalize(llm_output).split("\n")
    start = None
    for index, line in enumerate(lines):
        if line.strip() == COMMIT_MARKER:
            start = index + 1
            break
    if start is None:
        return FALLBACK_COMMIT_TITLE, []
    title = None
    body: list[str] = []
    for line in lines[start:]:
        stripped = line.strip()
        if stripped == BEGIN_MARKER or stripped.startswith("***"):
            break
        if title is None and stripped.startswith("Title:"):
            title = stripped[len("Title:") :].strip()
        elif stripped.startswith("-"):
            body.append(stripped[1:].strip())
    if not title:
        return FALLBACK_COMMIT_TITLE, body
    return title, body


def parse_patch(patch_text: str) -> PatchDocument:
    """Parse an extracted inner block into hunks with exact prefix semantics.

    A line beginning with a space is context even if otherwise blank; fully
    empty lines are treated as blank context (models strip trailing spaces).
    """
    target: Optional[str] = None
    hunks: list[PatchHunk] = []
    current: Optional[PatchHunk] = None
    current_start = 0

    def close_current() -> None:
        nonlocal current
        if current is None:
            return
        if not current.lines:
            raise ParseError("hunk is empty", current_start)
        if not current.has_change():
            raise ParseError("hunk contains no removed or added lines", current_start)
        hunks.append(current)
        current = None

    def open_hunk(hint: Optional[str], line_no: int) -> PatchHunk:
        nonlocal current, current_start
        current = PatchHunk(context_hint=hint, lines=[])
        current_start = line_no
        return current

    for line_no, raw in enumerate(_normalize(patch_text).split("\n"), start=1):
        if raw.startswith(FILE_MARKER):
            if target is not None:
                raise ParseError("multiple *** Update File sections are not supported", line_no)
            target = raw[len(FILE_MARKER) :].strip()
            if not target:
                raise ParseError("empty file name after *** Update File:", line_no)
            continue
        if raw.startswith("***"):
            raise ParseError(f"unknown directive {raw.strip()!r}", line_no)
        if target is None:
            if not raw.strip():
                continue
            raise ParseError(f"no {FILE_MARKER!r} header before patch content", line_no)
        if raw.startswith("@@"):
            close_current()
            hint = raw[2:].strip() or None
            open_hunk(hint, line_no)
            continue
        hunk = current if current is not None else open_hunk(None, line_no)
        if raw == "":
            hunk.lines.append((CONTEXT, ""))
        elif raw[0] == " ":
            hunk.lines.append((CONTEXT, raw[1:]))
        elif raw[0] == "-":
            hunk.lines.append((REMOVED, raw[1:]))
        elif raw[0] == "+":
            hunk.lines.append((ADDED, raw[1:]))
        else:
            raise ParseError(f"unknown line prefix {raw[0]!r}", line_no)
    close_current()

    if target is None:
        raise ParseError(f"patch has no {FILE_MARKER!r} header")
    if not hunks:
        raise ParseError("patch has no hunks")
    return PatchDocument(target_file=target, hunks=hunks)


def apply_patch(source: str, patch: PatchDocument) -> str:
    """Splice each hunk at its unique anchor, scanning forward between hunks.

    ``@@`` hints only bias where the anchor search starts; they never have to
    match. Untouched lines are preserved byte-for-byte.
    """
    src = _normalize(source).split("\n")
    out: list[str] = []
    pos = 0  # first source index not yet emitted

    for index, hunk in enumerate(patch.hunks):
        anchor = hunk.anchor()
        if not anchor:
            raise ApplyError("no context or removed lines to anchor on", index)

        start = pos
        if hunk.context_hint:
            for probe in range(pos, len(src)):
                if hunk.context_hint in src[probe]:
                    start = probe
                    break

        matches = _find_anchor(src, anchor, start)
        if not matches and start > pos:
            matches = _find_anchor(src, anchor, pos)
        if not matches:
            raise ApplyError("anchor not found in source", index)
        if len(matches) > 1:
            raise ApplyError(f"anchor is ambiguous ({len(matches)} matches)", index)

        match = matches[0]
        out.extend(src[pos:match])
        cursor = match
        for kind, text in hunk.lines:
            if kind == CONTEXT:
                out.append(src[cursor])
                cursor += 1
            elif kind == REMOVED:
                cursor += 1
            else:
                out.append(text)
        pos = cursor

    out.extend(src[pos:])
    return "\n".join(out)


def _find_anchor(src: list[str], anchor: list[str], start: int) -> list[int]:
    width = len(anchor)
    return [
        offset
        for offset in range(start, len(src) - width + 1)
        if src[offset : offset + width] == anchor
    ]


def render_patch(patch: PatchDocument) -> str:
    """Inner-block text that reparses to a structurally equal document."""
    prefix = {CONTEXT: " ", REMOVED: "-", ADDED: "+"}
    lines = [f"{FILE_MARKER} {patch.target_file}"]
    for hunk in patch.hunks:
        lines.append(f"@@ {hunk.context_hint}" if hunk.context_hint else "@@")
        for kind, text in hunk.lines:
            lines.append(prefix[kind] + text)
    return "\n".join(lines)


def render_patch_block(patch: PatchDocument) -> str:
    """Full marker-delimited form, commit message included."""
    parts = [COMMIT_MARKER, f"Title: {patch.commit_title}"]
    parts.extend(f"- {bullet}" for bullet in patch.commit_body)
    parts.extend(["", BEGIN_MARKER, render_patch(patch), END_MARKER])
    return "\n".join(parts)
