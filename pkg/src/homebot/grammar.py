"""Operator command grammar: loading, seeded generation, and parsing.

Productions are written one per line as ``$name = alt | alt`` where an
alternative is a sequence of plain words, ``$nonterminal`` references and
``{kind}`` wildcards. A ``!pronouns`` line declares which words parse as
pronouns. Wildcard fillers come from the knowledge base at generation and
parse time, so the grammar file itself stays scenario-independent.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from homebot.kb import CONCEPT, KnowledgeBase

WILDCARD_KINDS = ("object", "location", "person", "category")

# referent kinds a pronoun may stand for
PRONOUN_KINDS = {
    "it": ("object", "location"),
    "him": ("person",),
    "her": ("person",),
    "them": ("person", "object"),
}
_ANY_REFERENT = ("object", "location", "person")


class GrammarError(Exception):
    pass


class GrammarSyntaxError(GrammarError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingRoot(GrammarError):
    pass


class UndefinedNonterminal(GrammarError):
    pass


class LeftRecursion(GrammarError):
    pass


class EmptyVocabulary(GrammarError):
    def __init__(self, kind: str):
        super().__init__(f"no {kind} entities in the knowledge base")
        self.kind = kind


class NoParse(GrammarError):
    pass


@dataclass(frozen=True)
class Sym:
    kind: str  # word | nonterminal | wildcard
    value: str


@dataclass(frozen=True)
class Grammar:
    productions: dict[str, tuple[tuple[Sym, ...], ...]]
    pronouns: frozenset[str]
    root: str = "main"

    def pronoun_kinds(self, word: str) -> tuple[str, ...]:
        return PRONOUN_KINDS.get(word, _ANY_REFERENT)


# parse/generation tree: task decoding walks these nodes
@dataclass
class WordTok:
    text: str
    index: int = -1
    pronoun: tuple[str, ...] = ()  # nonempty marks a pronoun occurrence


@dataclass
class WildcardTok:
    kind: str
    entity: int
    tokens: tuple[str, ...]
    start: int = -1


@dataclass
class Node:
    name: str
    children: list = field(default_factory=list)


Leaf = Union[WordTok, WildcardTok]

_PRODUCTION_RE = re.compile(r"^\$([a-z][a-z0-9_]*)\s*=\s*(.+)$")
_NONTERMINAL_RE = re.compile(r"^\$[a-z][a-z0-9_]*$")
_WORD_RE = re.compile(r"^[a-z0-9'-]+$")


def load_grammar(text: str) -> Grammar:
    productions: dict[str, list[tuple[Sym, ...]]] = {}
    alt_lines: dict[str, list[int]] = {}
    pronouns: set[str] = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("!pronouns"):
            pronouns.update(line.split()[1:])
            continue
        m = _PRODUCTION_RE.match(line)
        if m is None:
            raise GrammarSyntaxError(line_no, "expected `$name = alternatives`")
        name, rhs = m.groups()
        for chunk in rhs.split("|"):
            words = chunk.split()
            if not words:
                raise GrammarSyntaxError(line_no, "empty alternative")
            syms = []
            for w in words:
                if w.startswith("$"):
                    if not _NONTERMINAL_RE.match(w):
                        raise GrammarSyntaxError(line_no, f"bad nonterminal {w}")
                    syms.append(Sym("nonterminal", w[1:]))
                elif w.startswith("{") and w.endswith("}"):
                    kind = w[1:-1]
                    if kind not in WILDCARD_KINDS:
                        raise GrammarSyntaxError(line_no, f"unknown wildcard {w}")
                    syms.append(Sym("wildcard", kind))
                elif _WORD_RE.match(w):
                    syms.append(Sym("word", w))
                else:
                    raise GrammarSyntaxError(line_no, f"bad token {w!r}")
            productions.setdefault(name, []).append(tuple(syms))
            alt_lines.setdefault(name, []).append(line_no)

    if "main" not in productions:
        raise MissingRoot("grammar does not define $main")
    for name, alts in productions.items():
        for idx, alt in enumerate(alts):
            where = alt_lines[name][idx]
            for sym in alt:
                if sym.kind == "nonterminal" and sym.value not in productions:
                    raise UndefinedNonterminal(
                        f"line {where}: ${sym.value} (used by ${name}) is not defined"
                    )
            first = alt[0]
            if first.kind == "nonterminal" and first.value == name:
                raise LeftRecursion(f"line {where}: ${name} derives itself leftmost")
    return Grammar(
        productions={n: tuple(alts) for n, alts in productions.items()},
        pronouns=frozenset(pronouns),
    )


# ---------------------------------------------------------------------------
# wildcard vocabularies
# ---------------------------------------------------------------------------


def vocabulary(kb: KnowledgeBase, kind: str) -> list[tuple[int, tuple[str, ...]]]:
    """(entity id, name tokens) fillers for a wildcard, in id order.

    ``category`` draws concepts strictly below `object`; the other kinds
    draw instances of their namesake concept. Multi-word names use
    underscores in the KB and spaces in sentences.
    """
    if kind == "category":
        top = kb.entity_named("object")
        if top is None:
            return []
        ids = [
            ent.id
            for ent in kb.entities()
            if ent.kind == CONCEPT and ent.id != top and kb.is_a(ent.id, top)
        ]
    else:
        concept = kb.entity_named(kind)
        if concept is None:
            return []
        ids = kb.instances_of(concept)
    return [(eid, tuple(kb.entity(eid).name.split("_"))) for eid in ids]


def _vocab_cache(kb: KnowledgeBase) -> dict[str, list[tuple[int, tuple[str, ...]]]]:
    return {kind: vocabulary(kb, kind) for kind in WILDCARD_KINDS}


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

_MAX_DEPTH = 40


def generate(grammar: Grammar, kb: KnowledgeBase, seed: int) -> tuple[str, Node]:
    """Expand ``$main`` with seeded uniform choices; returns the sentence
    and its derivation tree with token positions filled in."""
    rng = random.Random(seed)
    vocab = _vocab_cache(kb)

    def expand(name: str, depth: int) -> Node:
        if depth > _MAX_DEPTH:
            raise GrammarError(f"expansion of ${name} is too deep")
        alts = grammar.productions[name]
        alt = alts[rng.randrange(len(alts))]
        node = Node(name)
        for sym in alt:
            if sym.kind == "word":
                node.children.append(
                    WordTok(sym.value, pronoun=grammar.pronoun_kinds(sym.value)
                            if sym.value in grammar.pronouns else ())
                )
            elif sym.kind == "wildcard":
                fillers = vocab[sym.value]
                if not fillers:
                    raise EmptyVocabulary(sym.value)
                eid, tokens = fillers[rng.randrange(len(fillers))]
                node.children.append(WildcardTok(sym.value, eid, tokens))
            else:
                node.children.append(expand(sym.value, depth + 1))
        return node

    tree = expand(grammar.root, 0)
    tokens = index_tree(tree)
    return " ".join(tokens), tree


def flatten(node: Node) -> Iterator[Leaf]:
    for child in node.children:
        if isinstance(child, Node):
            yield from flatten(child)
        else:
            yield child


def index_tree(root: Node) -> list[str]:
    """Assign token positions across the tree; returns the token list."""
    tokens: list[str] = []
    for leaf in flatten(root):
        if isinstance(leaf, WordTok):
            leaf.index = len(tokens)
            tokens.append(leaf.text)
        else:
            leaf.start = len(tokens)
            tokens.extend(leaf.tokens)
    return tokens


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def tokenize(sentence: str) -> list[str]:
    return [t for t in (w.strip(".,!?;:") for w in sentence.lower().split()) if t]


def parse(grammar: Grammar, kb: KnowledgeBase, sentence: str) -> Node:
    """First complete derivation of the sentence, trying alternatives in
    declared order and wildcard fillers longest first (ties by entity id)."""
    tokens = tokenize(sentence)
    vocab = _vocab_cache(kb)

    def match_sym(sym: Sym, pos: int) -> Iterator[tuple[object, int]]:
        if sym.kind == "word":
            if pos < len(tokens) and tokens[pos] == sym.value:
                yield (
                    WordTok(sym.value, index=pos,
                            pronoun=grammar.pronoun_kinds(sym.value)
                            if sym.value in grammar.pronouns else ()),
                    pos + 1,
                )
        elif sym.kind == "wildcard":
            options = []
            for eid, name in vocab[sym.value]:
                if tuple(tokens[pos:pos + len(name)]) == name:
                    options.append((eid, name))
            options.sort(key=lambda o: (-len(o[1]), o[0]))
            for eid, name in options:
                yield WildcardTok(sym.value, eid, name, start=pos), pos + len(name)
        else:
            for alt in grammar.productions[sym.value]:
                for children, end in match_seq(alt, 0, pos):
                    node = Node(sym.value)
                    node.children = children
                    yield node, end

    def match_seq(alt: tuple[Sym, ...], i: int, pos: int
                  ) -> Iterator[tuple[list, int]]:
        if i == len(alt):
            yield [], pos
            return
        for first, mid in match_sym(alt[i], pos):
            for rest, end in match_seq(alt, i + 1, mid):
                yield [first] + rest, end

    for tree, end in match_sym(Sym("nonterminal", grammar.root), 0):
        if end == len(tokens):
            return tree
    raise NoParse(f"cannot parse {sentence!r}")
