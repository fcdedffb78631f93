"""Binary parse trees and their canonical text form.

A parse tree is either a ``Leaf`` holding a terminal code or a ``Node``
holding a 1-based nonterminal index and two children. Preterminal labels
are not part of the tree: ``(1 t2 t6)`` says that nonterminal 1 dominates
terminals 2 and 6, whichever nonterminals emitted them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

__all__ = ["Leaf", "Node", "ParseTree", "canonical_form", "parse_canonical", "leaves"]


@dataclass(frozen=True)
class Leaf:
    code: int

    @property
    def cover(self) -> frozenset[int]:
        return frozenset((self.code,))


@dataclass(frozen=True)
class Node:
    label: int
    left: "ParseTree"
    right: "ParseTree"

    @property
    def cover(self) -> frozenset[int]:
        return self.left.cover | self.right.cover


ParseTree = Union[Leaf, Node]


def canonical_form(tree: ParseTree) -> str:
    """Serialize ``tree``: a leaf is ``t<code>``, a node ``(<label> <left> <right>)``."""
    if isinstance(tree, Leaf):
        return f"t{tree.code}"
    return f"({tree.label} {canonical_form(tree.left)} {canonical_form(tree.right)})"


def leaves(tree: ParseTree) -> list[int]:
    if isinstance(tree, Leaf):
        return [tree.code]
    return leaves(tree.left) + leaves(tree.right)


_TOKEN = re.compile(r"\(|\)|t\d+|\d+")


def parse_canonical(text: str) -> ParseTree:
    """Inverse of :func:`canonical_form`."""
    tokens = _TOKEN.findall(text)
    if "".join(tokens) != text.replace(" ", ""):
        raise ValueError(f"not a canonical parse tree: {text!r}")
    pos = 0

    def take() -> ParseTree:
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError(f"truncated parse tree: {text!r}")
        tok = tokens[pos]
        pos += 1
        if tok.startswith("t"):
            return Leaf(int(tok[1:]))
        if tok != "(" or pos >= len(tokens) or not tokens[pos].isdigit():
            raise ValueError(f"malformed parse tree near token {pos}: {text!r}")
        label = int(tokens[pos])
        pos += 1
        left = take()
        right = take()
        if pos >= len(tokens) or tokens[pos] != ")":
            raise ValueError(f"missing ')' in parse tree: {text!r}")
        pos += 1
        return Node(label, left, right)

    tree = take()
    if pos != len(tokens):
        raise ValueError(f"trailing tokens in parse tree: {text!r}")
    return tree
