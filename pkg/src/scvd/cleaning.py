"""Solidity source cleanup: comment stripping and whitespace normalization.

Both passes are total (never fail) and string-literal aware, tracked with a
small character scanner rather than a full Solidity grammar.
"""
from __future__ import annotations

from dataclasses import dataclass


@dataclass
class CleanSource:
    text: str
    original_len: int
    cleaned_len: int


def strip_comments(source: str) -> str:
    """Remove ``//`` line comments and ``/* */`` block comments.

    Comment-like sequences inside string literals ("..." and '...', with
    backslash escapes) are preserved. A block comment is replaced by a single
    space so adjacent tokens never merge; an unterminated block comment is
    removed to end of input.
    """
    out: list[str] = []
    i = 0
    n = len(source)
    state = "code"  # code | dq | sq
    while i < n:
        ch = source[i]
        if state == "code":
            if ch == "/" and i + 1 < n:
                nxt = source[i + 1]
                if nxt == "/":
                    i += 2
                    while i < n and source[i] != "\n":
                        i += 1
                    continue
                if nxt == "*":
                    end = source.find("*/", i + 2)
                    if end == -1:
                        break
                    out.append(" ")
                    i = end + 2
                    continue
            out.append(ch)
            if ch == '"':
                state = "dq"
            elif ch == "'":
                state = "sq"
            i += 1
        else:
            out.append(ch)
            quote = '"' if state == "dq" else "'"
            if ch == "\\" and i + 1 < n:
                out.append(source[i + 1])
                i += 2
                continue
            if ch == quote or ch == "\n":
                state = "code"
            i += 1
    return "".join(out)


def normalize_whitespace(source: str, collapse_spaces: bool = True) -> str:
    """Tighten whitespace: CRLF to LF, no trailing space, at most one blank
    line in a row, and (unless disabled) runs of spaces/tabs outside string
    literals collapsed to a single space.
    """
    text = source.replace("\r\n", "\n").replace("\r", "\n")
    if collapse_spaces:
        text = _collapse_space_runs(text)

    lines = [line.rstrip(" \t") for line in text.split("\n")]
    out_lines: list[str] = []
    blank_run = 0
    for line in lines:
        if line == "":
            blank_run += 1
            if blank_run > 1:
                continue
        else:
            blank_run = 0
        out_lines.append(line)
    return "\n".join(out_lines)


def _collapse_space_runs(text: str) -> str:
    out: list[str] = []
    i = 0
    n = len(text)
    state = "code"
    while i < n:
        ch = text[i]
        if state == "code":
            if ch in " \t":
                j = i
                while j < n and text[j] in " \t":
                    j += 1
                out.append(" ")
                i = j
                continue
            out.append(ch)
            if ch == '"':
                state = "dq"
            elif ch == "'":
                state = "sq"
            i += 1
        else:
            out.append(ch)
            quote = '"' if state == "dq" else "'"
            if ch == "\\" and i + 1 < n:
                out.append(text[i + 1])
                i += 2
                continue
            if ch == quote or ch == "\n":
                state = "code"
            i += 1
    return "".join(out)


def clean_source(source: str, collapse_spaces: bool = True) -> CleanSource:
    """strip_comments followed by normalize_whitespace, with lengths recorded."""
    cleaned = normalize_whitespace(strip_comments(source), collapse_spaces=collapse_spaces)
    return CleanSource(text=cleaned, original_len=len(source), cleaned_len=len(cleaned))
