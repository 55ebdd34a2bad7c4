"""S-expression wire format for behavior trees and the node validation gate.

Grammar::

    node := "(" "seq" node* ")" | "(" "fb" node* ")" | "(" "par" INT node* ")"
          | "(" "act" IDENT [IDENT] ")" | "(" "cond" IDENT [IDENT] ")"
    IDENT := [a-z][a-z0-9_]*      INT := [1-9][0-9]*

Identifiers are case-insensitive and canonicalized to lowercase.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from evobt.bt import (
    Action,
    BTNode,
    Condition,
    Fallback,
    Parallel,
    Sequence,
    SkillRegistry,
)

_IDENT = re.compile(r"[a-z][a-z0-9_]*\Z")
_INT = re.compile(r"[1-9][0-9]*\Z")
_TOKEN = re.compile(r"\(|\)|[^\s()]+")
HEADS = ("seq", "fb", "par", "act", "cond")


class ParseError(Exception):
    """Raised for malformed tree text.

    ``code`` is one of UnbalancedParen, UnknownKind, BadThreshold, BadToken,
    TrailingInput; ``position`` is a 1-based (line, column) pair.
    """

    def __init__(self, code: str, position: tuple, message: str):
        super().__init__(f"{code} at {position[0]}:{position[1]}: {message}")
        self.code = code
        self.position = position
        self.message = message


def _line_col(text: str, offset: int) -> tuple:
    offset = max(0, min(offset, len(text) - 1)) if text else 0
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = [(m.group(0), m.start()) for m in _TOKEN.finditer(text)]
        self.i = 0

    def fail(self, code, offset, message):
        raise ParseError(code, _line_col(self.text, offset), message)

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, len(self.text))

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def node(self) -> BTNode:
        tok, pos = self.next()
        if tok is None:
            self.fail("UnbalancedParen", pos, "expected '(' but input ended")
        if tok != "(":
            self.fail("BadToken", pos, f"expected '(' but found {tok!r}")
        head, hpos = self.next()
        if head is None:
            self.fail("UnbalancedParen", hpos, "unclosed '('")
        kind = head.lower()
        if kind not in HEADS:
            self.fail("UnknownKind", hpos, f"unknown node kind {head!r}")
        if kind in ("act", "cond"):
            return self.leaf(kind, hpos)
        z = None
        if kind == "par":
            ztok, zpos = self.next()
            if ztok is None:
                self.fail("UnbalancedParen", zpos, "unclosed '('")
            if not _INT.match(ztok):
                self.fail("BadThreshold", zpos, f"parallel threshold must be a positive integer, got {ztok!r}")
            z = int(ztok)
        children = []
        while True:
            tok, pos = self.peek()
            if tok is None:
                self.fail("UnbalancedParen", pos, "unclosed '('")
            if tok == ")":
                self.i += 1
                break
            children.append(self.node())
        if kind == "seq":
            return Sequence(tuple(children))
        if kind == "fb":
            return Fallback(tuple(children))
        return Parallel(z, tuple(children))

    def leaf(self, kind, hpos) -> BTNode:
        args = []
        while True:
            tok, pos = self.next()
            if tok is None:
                self.fail("UnbalancedParen", pos, "unclosed '('")
            if tok == ")":
                break
            if tok == "(":
                self.fail("BadToken", pos, f"'{kind}' takes identifiers, not nested nodes")
            ident = tok.lower()
            if not _IDENT.match(ident):
                self.fail("BadToken", pos, f"bad identifier {tok!r}")
            args.append(ident)
        if not 1 <= len(args) <= 2:
            self.fail("BadToken", hpos, f"'{kind}' takes one identifier and an optional parameter")
        cls = Action if kind == "act" else Condition
        return cls(*args)


def parse(text: str) -> BTNode:
    p = _Parser(text)
    tree = p.node()
    tok, pos = p.peek()
    if tok is not None:
        code = "UnbalancedParen" if tok == ")" else "TrailingInput"
        p.fail(code, pos, f"unexpected {tok!r} after a complete tree")
    return tree


def serialize(tree: BTNode) -> str:
    if isinstance(tree, Action):
        return f"(act {tree.skill} {tree.param})" if tree.param else f"(act {tree.skill})"
    if isinstance(tree, Condition):
        return f"(cond {tree.check} {tree.param})" if tree.param else f"(cond {tree.check})"
    if isinstance(tree, Sequence):
        head = "seq"
    elif isinstance(tree, Fallback):
        head = "fb"
    else:
        head = f"par {tree.z}"
    return "(" + " ".join([head] + [serialize(c) for c in tree.children]) + ")"


# -- validation ------------------------------------------------------------

ERROR = "error"
WARNING = "warning"


@dataclass(frozen=True)
class Violation:
    path: tuple
    code: str
    severity: str
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def errors(self) -> list:
        return [v for v in self.violations if v.severity == ERROR]

    @property
    def ok(self) -> bool:
        """True when the tree is contextually valid (no error violations)."""
        return not self.errors

    def codes(self) -> list:
        return [v.code for v in self.violations]

    def __str__(self) -> str:
        if not self.violations:
            return "valid: no violations"
        lines = []
        for v in self.violations:
            where = "/".join(map(str, v.path)) or "root"
            lines.append(f"{v.severity}: {v.code} at {where}: {v.detail}")
        return "\n".join(lines)


def validate(tree: BTNode, registry: SkillRegistry) -> ValidationReport:
    report = ValidationReport()
    add = report.violations.append

    def visit(node, path):
        if isinstance(node, (Action, Condition)):
            if isinstance(node, Action):
                name, table, unknown = node.skill, registry.actions, "UnknownSkill"
            else:
                name, table, unknown = node.check, registry.conditions, "UnknownCondition"
            if name not in table:
                add(Violation(path, unknown, ERROR, name))
                return
            domain = table[name]
            if domain is None and node.param is not None:
                add(Violation(path, "BadParam", ERROR, f"{name} takes no parameter"))
            elif domain is not None and node.param not in domain:
                add(Violation(path, "BadParam", ERROR, f"{name} parameter {node.param!r} not in {list(domain)}"))
            return
        if not node.children:
            add(Violation(path, "EmptyControl", WARNING, "control node without children"))
        if isinstance(node, Parallel) and not 1 <= node.z <= len(node.children):
            add(Violation(path, "ThresholdOutOfRange", ERROR,
                          f"z={node.z} with {len(node.children)} children"))
        for i, child in enumerate(node.children):
            visit(child, path + (i,))

    visit(tree, ())
    return report


# -- LLM reply cleanup -----------------------------------------------------

# a known head, or any identifier directly followed by a nested group, which
# catches invented control kinds such as "(loop (act pick))"
_HEAD_AFTER_PAREN = re.compile(r"\(\s*(?:(?:seq|fb|par|act|cond)\b|[a-z_]\w*\s*\()", re.IGNORECASE)
_FENCE = "```"


def extract_tree(llm_reply: str) -> str:
    """Pull the first balanced tree expression out of free-form model output.

    Prose and code fences around the expression are ignored. The returned
    text has not been parsed or validated yet.
    """
    for m in _HEAD_AFTER_PAREN.finditer(llm_reply):
        start = m.start()
        level = 0
        for j in range(start, len(llm_reply)):
            ch = llm_reply[j]
            if ch == "(":
                level += 1
            elif ch == ")":
                level -= 1
                if level == 0:
                    return llm_reply[start:j + 1]
        # unbalanced from here on; an opening paren still counts as a
        # candidate so the parser can report the imbalance
        return llm_reply[start:].split(_FENCE, 1)[0].rstrip()
    raise ParseError("BadToken", _line_col(llm_reply, 0), "no tree expression found in reply")


def parse_validated(text: str, registry: SkillRegistry) -> tuple:
    """Parse ``text`` and validate it; returns (tree, report)."""
    tree = parse(text)
    return tree, validate(tree, registry)
