"""Lexical C/C++ function location and replacement.

Finds top-level function definitions without a real parser. A scanner masks
out comments, string and character literals, and preprocessor directive
lines; brace and parenthesis depth over the remaining bytes then identifies
``name(args) { ... }`` definitions at file scope.

Known limits, by design: K&R definitions, qualified member definitions
(``Foo::bar``), functions nested in ``extern "C"`` or class bodies, and
functions produced by macro expansion are not recognized. The benchmark
kernels in scope are plain C with at most light C++.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "FunctionSpan",
    "PatchError",
    "FunctionNotFound",
    "AmbiguousFunction",
    "UnbalancedBraces",
    "UnbalancedReplacement",
    "list_functions",
    "locate_function",
    "extract_function",
    "replace_function",
]


class PatchError(Exception):
    """Base class for patching failures."""


class FunctionNotFound(PatchError):
    def __init__(self, name: str):
        super().__init__(f"no function definition named {name!r}")
        self.name = name


class AmbiguousFunction(PatchError):
    def __init__(self, name: str, count: int):
        super().__init__(f"{count} function definitions named {name!r}")
        self.name = name
        self.count = count


class UnbalancedBraces(PatchError):
    def __init__(self, name: str):
        super().__init__(f"unbalanced braces in definition of {name!r}")
        self.name = name


class UnbalancedReplacement(PatchError):
    def __init__(self, name: str):
        super().__init__(f"replacement text for {name!r} has unbalanced braces")
        self.name = name


@dataclass(frozen=True)
class FunctionSpan:
    """Byte range of one top-level function definition.

    Offsets index the UTF-8 encoding of the source text: ``byte_start`` is
    the first byte of the declaration prefix (storage class or return
    type), ``byte_end`` is one past the closing brace. ``signature_text``
    is the declaration up to the opening brace with whitespace collapsed.
    """

    name: str
    byte_start: int
    byte_end: int
    signature_text: str


_WS = frozenset(b" \t\r\n\v\f")
_IDENT_START = frozenset(b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_CONT = _IDENT_START | frozenset(b"0123456789")
# Bytes allowed in the declaration prefix scanned backward from the name.
_PREFIX = _IDENT_CONT | _WS | frozenset(b"*&")
# Words that can precede "(" at file scope but never name a definition:
# control flow, plus reserved type and storage words (these absorb the
# "type (*name(args))(args)" declarator form, which stays unrecognized).
_NOT_NAMES = frozenset(
    {
        "if", "else", "for", "while", "do", "switch", "return", "sizeof",
        "goto", "int", "char", "short", "long", "float", "double", "void",
        "signed", "unsigned", "const", "volatile", "inline", "static",
        "extern", "register", "restrict", "auto", "typedef", "struct",
        "union", "enum", "_Bool", "_Complex", "bool",
    }
)


def _active_mask(data: bytes) -> bytearray:
    """Mark live code bytes; comments and string/char literals become 0."""
    n = len(data)
    mask = bytearray(b"\x01" * n)
    i = 0
    while i < n:
        c = data[i]
        if c == 0x2F and i + 1 < n and data[i + 1] == 0x2F:  # //
            while i < n and data[i] != 0x0A:
                mask[i] = 0
                i += 1
            continue
        if c == 0x2F and i + 1 < n and data[i + 1] == 0x2A:  # /*
            mask[i] = 0
            mask[i + 1] = 0
            i += 2
            while i < n:
                mask[i] = 0
                if data[i] == 0x2A and i + 1 < n and data[i + 1] == 0x2F:
                    mask[i + 1] = 0
                    i += 2
                    break
                i += 1
            continue
        if c in (0x22, 0x27):  # " or '
            quote = c
            mask[i] = 0
            i += 1
            while i < n:
                # A raw newline ends a malformed literal instead of
                # swallowing the rest of the file.
                if data[i] == 0x0A:
                    break
                mask[i] = 0
                if data[i] == 0x5C and i + 1 < n:
                    mask[i + 1] = 0
                    i += 2
                    continue
                if data[i] == quote:
                    i += 1
                    break
                i += 1
            continue
        i += 1
    return mask


def _mask_directives(data: bytes, mask: bytearray) -> None:
    """Zero out preprocessor directive lines, honoring continuations.

    Activity tests use a snapshot of the comment/literal mask so that a
    backslash already zeroed by this very loop still counts as a
    continuation, while one inside a comment does not.
    """
    orig = bytes(mask)
    n = len(data)
    i = 0
    while i < n:
        j = i
        while j < n and data[j] in (0x20, 0x09):
            j += 1
        if j < n and data[j] == 0x23 and orig[j]:
            k = j
            while k < n:
                mask[k] = 0
                if data[k] == 0x0A and orig[k]:
                    p = k - 1
                    if p >= 0 and data[p] == 0x0D:
                        p -= 1
                    if p >= j and data[p] == 0x5C and orig[p]:
                        k += 1  # continued line
                        continue
                    break
                k += 1
            i = k + 1
            continue
        while i < n and data[i] != 0x0A:
            i += 1
        i += 1


def _skip_inert(data: bytes, mask: bytearray, i: int) -> int:
    """Advance past whitespace and masked bytes."""
    n = len(data)
    while i < n and (not mask[i] or data[i] in _WS):
        i += 1
    return i


def _match_delim(data: bytes, mask: bytearray, i: int, op: int, cl: int) -> int:
    """Index of the delimiter closing the one at ``i``, or -1."""
    depth = 0
    n = len(data)
    while i < n:
        if mask[i]:
            if data[i] == op:
                depth += 1
            elif data[i] == cl:
                depth -= 1
                if depth == 0:
                    return i
        i += 1
    return -1


def _preceded_by_member_op(data: bytes, mask: bytearray, i: int) -> bool:
    """True when the byte before ``i`` (skipping inert bytes) is . -> or ::"""
    j = i - 1
    while j >= 0 and (not mask[j] or data[j] in _WS):
        j -= 1
    if j < 0:
        return False
    if data[j] == 0x2E:  # .
        return True
    if j >= 1 and mask[j - 1]:
        pair = data[j - 1 : j + 1]
        if pair in (b"->", b"::"):
            return True
    return False


def _try_definition(data, mask, name_start, name_end, name):
    """Return (span, resume_index); span is None when this is not one."""
    n = len(data)
    if name in _NOT_NAMES:
        return None, name_end
    if _preceded_by_member_op(data, mask, name_start):
        return None, name_end

    k = _skip_inert(data, mask, name_end)
    if k >= n or data[k] != 0x28:  # (
        return None, name_end
    rparen = _match_delim(data, mask, k, 0x28, 0x29)
    if rparen < 0:
        return None, name_end

    # Trailing qualifiers between the parameter list and the body:
    # identifiers (const, noexcept, attribute macros) and paren groups.
    k = _skip_inert(data, mask, rparen + 1)
    while k < n:
        if data[k] in _IDENT_START:
            while k < n and mask[k] and data[k] in _IDENT_CONT:
                k += 1
            k = _skip_inert(data, mask, k)
            continue
        if data[k] == 0x28:
            close = _match_delim(data, mask, k, 0x28, 0x29)
            if close < 0:
                return None, name_end
            k = _skip_inert(data, mask, close + 1)
            continue
        break
    if k >= n or data[k] != 0x7B:  # {
        return None, name_end

    close = _match_delim(data, mask, k, 0x7B, 0x7D)
    if close < 0:
        raise UnbalancedBraces(name)
    byte_end = close + 1

    start = name_start - 1
    while start >= 0 and mask[start] and data[start] in _PREFIX:
        start -= 1
    start += 1
    while start < name_start and data[start] in _WS:
        start += 1

    sig = " ".join(data[start:k].decode("utf-8", "replace").split())
    return FunctionSpan(name, start, byte_end, sig), byte_end


def active_text(source: str, keep_directives: bool = False) -> str:
    """Source with comments, literal contents, and directive lines blanked.

    Newlines survive so line-oriented scans still work; every other
    inactive byte becomes a space. Useful for token searches that must not
    match inside strings or comments. With keep_directives, preprocessor
    lines stay visible (e.g. to look for pragmas).
    """
    data = source.encode("utf-8")
    mask = _active_mask(data)
    if not keep_directives:
        _mask_directives(data, mask)
    out = bytearray(data)
    for i in range(len(out)):
        if not mask[i] and out[i] != 0x0A:
            out[i] = 0x20
    return out.decode("utf-8", "replace")


def list_functions(source: str) -> list[FunctionSpan]:
    """All top-level function definitions, in source order.

    Raises UnbalancedBraces when a definition's body never closes.
    """
    data = source.encode("utf-8")
    mask = _active_mask(data)
    _mask_directives(data, mask)

    spans: list[FunctionSpan] = []
    n = len(data)
    brace_depth = 0
    paren_depth = 0
    i = 0
    while i < n:
        if not mask[i]:
            i += 1
            continue
        c = data[i]
        if c == 0x7B:
            brace_depth += 1
        elif c == 0x7D:
            brace_depth -= 1
        elif c == 0x28:
            paren_depth += 1
        elif c == 0x29:
            paren_depth -= 1
        elif brace_depth == 0 and paren_depth == 0 and c in _IDENT_START:
            j = i + 1
            while j < n and mask[j] and data[j] in _IDENT_CONT:
                j += 1
            name = data[i:j].decode("utf-8", "replace")
            span, resume = _try_definition(data, mask, i, j, name)
            if span is not None:
                spans.append(span)
            i = resume
            continue
        i += 1
    return spans


def locate_function(source: str, name: str) -> FunctionSpan:
    """The unique definition of ``name``; NotFound/Ambiguous otherwise."""
    matches = [s for s in list_functions(source) if s.name == name]
    if not matches:
        raise FunctionNotFound(name)
    if len(matches) > 1:
        raise AmbiguousFunction(name, len(matches))
    return matches[0]


def extract_function(source: str, name: str) -> str:
    """Verbatim text of the definition, prefix through closing brace."""
    span = locate_function(source, name)
    data = source.encode("utf-8")
    return data[span.byte_start : span.byte_end].decode("utf-8")


def replace_function(source: str, name: str, new_text: str) -> str:
    """Splice ``new_text`` over the definition of ``name``.

    The replacement must contain at least one brace pair and balance to
    zero without going negative, counted outside comments and literals.
    """
    span = locate_function(source, name)
    rdata = new_text.encode("utf-8")
    rmask = _active_mask(rdata)
    _mask_directives(rdata, rmask)
    depth = 0
    pairs = 0
    for idx, b in enumerate(rdata):
        if not rmask[idx]:
            continue
        if b == 0x7B:
            depth += 1
            pairs += 1
        elif b == 0x7D:
            depth -= 1
            if depth < 0:
                raise UnbalancedReplacement(name)
    if depth != 0 or pairs == 0:
        raise UnbalancedReplacement(name)

    data = source.encode("utf-8")
    out = data[: span.byte_start] + rdata + data[span.byte_end :]
    return out.decode("utf-8")
