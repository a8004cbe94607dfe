"""Syntax of farm-plot selection rules.

A rule is an expression tree over nine factor terminals combined with
binary ``+`` and ``-`` operators, plus a social-connectivity tag that
scopes which plots the rule may choose from. Because the operator set is
additive, every tree is equivalent to a signed integer combination of
factors; that signed presence vector is the canonical summary used for
rendering, persistence, and analysis.

Tree depth counts nodes along the longest root-to-leaf path (a lone
terminal has depth 1) and must stay within [DEPTH_MIN, DEPTH_MAX].
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union

__all__ = [
    "FACTOR_NAMES",
    "SOCIAL_CONFIGS",
    "DEPTH_MIN",
    "DEPTH_MAX",
    "OPERATORS",
    "Signature",
    "SIGNATURES",
    "Factor",
    "Op",
    "Node",
    "RuleTree",
    "RuleSyntaxError",
    "depth",
    "size",
    "clone",
    "iter_subtrees",
    "get_subtree",
    "replace_subtree",
    "check_typing",
    "extract_presence",
    "presence_vector",
    "format_rule",
    "parse_rule",
    "tree_from_presence",
    "to_sexpr",
    "from_sexpr",
    "BASELINE_RULE_TEXT",
]

FACTOR_NAMES = (
    "F_Dist",
    "F_Dry",
    "F_Qual",
    "F_Yield",
    "F_Water",
    "F_Soc",
    "F_HAge",
    "F_HAgri",
    "F_Mig",
)

SOCIAL_CONFIGS = ("S_All", "S_Fam", "S_Neigh", "S_Perf")

OPERATORS = ("+", "-")

DEPTH_MIN = 4
DEPTH_MAX = 10

# Nearest-plot baseline: distance enters as a negated raw value, so taking
# the single-factor maximum of F_Dist selects the closest available plot.
BASELINE_RULE_TEXT = "argmax[S_All](1*F_Dist)"


@dataclass(frozen=True)
class Signature:
    """Type signature of a language primitive."""

    name: str
    kind: str  # "factor", "operator", or "social"
    param_types: tuple[str, ...]
    return_type: str


SIGNATURES: dict[str, Signature] = {}
for _f in FACTOR_NAMES:
    SIGNATURES[_f] = Signature(_f, "factor", (), "score")
for _o in OPERATORS:
    SIGNATURES[_o] = Signature(_o, "operator", ("score", "score"), "score")
for _s in SOCIAL_CONFIGS:
    SIGNATURES[_s] = Signature(_s, "social", (), "candidate-scope")


@dataclass
class Factor:
    """Terminal node referencing one decision factor by name."""

    name: str


@dataclass
class Op:
    """Binary interior node; ``op`` is "+" or "-"."""

    op: str
    left: "Node"
    right: "Node"


Node = Union[Factor, Op]


@dataclass
class RuleTree:
    """A complete rule: expression tree plus social-connectivity tag."""

    social: str
    root: Node


class RuleSyntaxError(ValueError):
    """Raised when rule text cannot be parsed into a valid tree."""


def depth(node: Node) -> int:
    """Longest root-to-leaf path measured in nodes."""
    if isinstance(node, Factor):
        return 1
    stack = [(node, 1)]
    best = 1
    while stack:
        cur, d = stack.pop()
        if isinstance(cur, Factor):
            best = max(best, d)
        else:
            stack.append((cur.left, d + 1))
            stack.append((cur.right, d + 1))
    return best


def size(node: Node) -> int:
    """Total node count."""
    if isinstance(node, Factor):
        return 1
    return 1 + size(node.left) + size(node.right)


def clone(node: Node) -> Node:
    if isinstance(node, Factor):
        return Factor(node.name)
    return Op(node.op, clone(node.left), clone(node.right))


def iter_subtrees(node: Node) -> Iterator[tuple[tuple[int, ...], Node]]:
    """Yield (path, subtree) pairs in preorder; path is a 0/1 child index tuple."""
    stack: list[tuple[tuple[int, ...], Node]] = [((), node)]
    while stack:
        path, cur = stack.pop()
        yield path, cur
        if isinstance(cur, Op):
            stack.append((path + (1,), cur.right))
            stack.append((path + (0,), cur.left))


def get_subtree(node: Node, path: tuple[int, ...]) -> Node:
    cur = node
    for step in path:
        if not isinstance(cur, Op):
            raise IndexError(f"path {path} leaves the tree")
        cur = cur.left if step == 0 else cur.right
    return cur


def replace_subtree(node: Node, path: tuple[int, ...], new: Node) -> Node:
    """Return a copy of ``node`` with the subtree at ``path`` replaced."""
    if not path:
        return new
    root = clone(node)
    cur = root
    for step in path[:-1]:
        cur = cur.left if step == 0 else cur.right  # type: ignore[union-attr]
        if not isinstance(cur, Op):
            raise IndexError(f"path {path} leaves the tree")
    if not isinstance(cur, Op):
        raise IndexError(f"path {path} leaves the tree")
    if path[-1] == 0:
        cur.left = new
    else:
        cur.right = new
    return root


def _node_well_typed(node: object) -> bool:
    if isinstance(node, Factor):
        sig = SIGNATURES.get(node.name)
        return sig is not None and sig.kind == "factor"
    if isinstance(node, Op):
        sig = SIGNATURES.get(node.op)
        if sig is None or sig.kind != "operator":
            return False
        for child, want in ((node.left, sig.param_types[0]), (node.right, sig.param_types[1])):
            if child is None or not _node_well_typed(child):
                return False
            child_sig = SIGNATURES[child.name if isinstance(child, Factor) else child.op]
            if child_sig.return_type != want:
                return False
        return True
    return False


def check_typing(tree: RuleTree) -> bool:
    """True when the tree is structurally sound.

    Checks the social tag, every operator arity and argument type, factor
    names, and the depth bounds.
    """
    sig = SIGNATURES.get(tree.social)
    if sig is None or sig.kind != "social":
        return False
    if tree.root is None or not _node_well_typed(tree.root):
        return False
    return DEPTH_MIN <= depth(tree.root) <= DEPTH_MAX


def extract_presence(tree: RuleTree | Node) -> dict[str, int]:
    """Signed count of each factor's contribution to the rule.

    Traversal assigns +1 at the root and flips sign on the right child of
    every ``-`` node, so the result is the coefficient vector of the tree
    seen as an integer combination of factors. All nine factor names are
    present as keys; factors the rule never uses (or that cancel) map to 0.
    """
    root = tree.root if isinstance(tree, RuleTree) else tree
    acc = {name: 0 for name in FACTOR_NAMES}
    stack: list[tuple[Node, int]] = [(root, 1)]
    while stack:
        node, sign = stack.pop()
        if isinstance(node, Factor):
            acc[node.name] += sign
        else:
            stack.append((node.left, sign))
            stack.append((node.right, -sign if node.op == "-" else sign))
    return acc


def presence_vector(tree: RuleTree | Node) -> list[int]:
    """Presence counts in canonical factor order."""
    acc = extract_presence(tree)
    return [acc[name] for name in FACTOR_NAMES]


def format_rule(tree: RuleTree) -> str:
    """Render the canonical text form, e.g. ``argmax[S_All](-1*F_Dist + 2*F_Mig)``.

    Terms appear in canonical factor order with explicit signed integer
    coefficients; a rule whose factors all cancel renders as
    ``argmax[...](0)``.
    """
    acc = extract_presence(tree)
    terms = [f"{acc[name]}*{name}" for name in FACTOR_NAMES if acc[name] != 0]
    body = " + ".join(terms) if terms else "0"
    return f"argmax[{tree.social}]({body})"


_HEADER_RE = re.compile(r"^\s*argmax\s*(?:\[\s*(\w+)\s*\])?\s*\((.*)\)\s*$", re.DOTALL)
# separator sign, optional signed coefficient with '*', factor name
_TERM_RE = re.compile(r"\s*([+-]?)\s*(?:([+-]?\d+)\s*\*\s*)?(F_[A-Za-z]+)\s*")


def _parse_body(body: str, text: str) -> dict[str, int]:
    acc = {name: 0 for name in FACTOR_NAMES}
    stripped = body.replace("(x)", "").strip()
    if stripped == "":
        raise RuleSyntaxError(f"empty rule body in {text!r}")
    if stripped == "0":
        return acc
    pos = 0
    first = True
    while pos < len(stripped):
        m = _TERM_RE.match(stripped, pos)
        if m is None:
            raise RuleSyntaxError(f"cannot parse rule body near {stripped[pos:pos + 20]!r} in {text!r}")
        sign_txt, coef_txt, name = m.groups()
        if not first and sign_txt == "" and not (coef_txt and coef_txt[0] in "+-"):
            raise RuleSyntaxError(f"missing '+' or '-' before {name} in {text!r}")
        if name not in SIGNATURES or SIGNATURES[name].kind != "factor":
            raise RuleSyntaxError(f"unknown factor {name!r} in {text!r}")
        coef = int(coef_txt) if coef_txt else 1
        if sign_txt == "-":
            coef = -coef
        acc[name] += coef
        pos = m.end()
        first = False
    return acc


def _balanced_sum(leaves: list[Node]) -> Node:
    if len(leaves) == 1:
        return leaves[0]
    mid = (len(leaves) + 1) // 2
    return Op("+", _balanced_sum(leaves[:mid]), _balanced_sum(leaves[mid:]))


_PAD_FACTOR = "F_Qual"


def tree_from_presence(presence: dict[str, int], social: str) -> RuleTree:
    """Build a well-typed tree realizing the given signed presence counts.

    Positive and negative terms become balanced addition trees joined by a
    single subtraction; self-cancelling padding lifts shallow trees up to
    the minimum depth without changing the presence vector.
    """
    if social not in SOCIAL_CONFIGS:
        raise RuleSyntaxError(f"unknown social configuration {social!r}")
    for name in presence:
        if name not in FACTOR_NAMES:
            raise RuleSyntaxError(f"unknown factor {name!r}")
    pos: list[Node] = []
    neg: list[Node] = []
    for name in FACTOR_NAMES:
        c = presence.get(name, 0)
        if c > 0:
            pos.extend(Factor(name) for _ in range(c))
        elif c < 0:
            neg.extend(Factor(name) for _ in range(-c))

    pad_name = next((n for n in FACTOR_NAMES if presence.get(n, 0)), _PAD_FACTOR)

    def zero_pair() -> Node:
        return Op("-", Factor(pad_name), Factor(pad_name))

    if pos and neg:
        root: Node = Op("-", _balanced_sum(pos), _balanced_sum(neg))
    elif pos:
        root = _balanced_sum(pos)
    elif neg:
        root = Op("-", zero_pair(), _balanced_sum(neg))
    else:
        root = zero_pair()
    while depth(root) < DEPTH_MIN:
        root = Op("+", root, zero_pair())
    if depth(root) > DEPTH_MAX:
        raise RuleSyntaxError(
            f"presence counts need a tree deeper than {DEPTH_MAX}: {presence}"
        )
    return RuleTree(social, root)


def parse_rule(text: str) -> RuleTree:
    """Parse canonical (or lightly abbreviated) rule text into a tree.

    Accepts omitted unit coefficients (``-F_Dist``) and tolerates
    whitespace. The returned tree round-trips through ``format_rule`` to
    the canonical rendering of the same presence vector.
    """
    m = _HEADER_RE.match(text)
    if m is None:
        raise RuleSyntaxError(f"rule text must look like 'argmax[S_...](...)': {text!r}")
    social, body = m.group(1) or "S_All", m.group(2)
    if social not in SOCIAL_CONFIGS:
        raise RuleSyntaxError(f"unknown social configuration {social!r} in {text!r}")
    presence = _parse_body(body, text)
    return tree_from_presence(presence, social)


def to_sexpr(node: Node) -> list | str:
    """JSON-friendly nested-list encoding of the exact tree shape."""
    if isinstance(node, Factor):
        return node.name
    return [node.op, to_sexpr(node.left), to_sexpr(node.right)]


def from_sexpr(obj) -> Node:
    if isinstance(obj, str):
        if obj not in FACTOR_NAMES:
            raise RuleSyntaxError(f"unknown factor {obj!r} in tree encoding")
        return Factor(obj)
    if isinstance(obj, (list, tuple)) and len(obj) == 3 and obj[0] in OPERATORS:
        return Op(obj[0], from_sexpr(obj[1]), from_sexpr(obj[2]))
    raise RuleSyntaxError(f"malformed tree encoding: {obj!r}")
