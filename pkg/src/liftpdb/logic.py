"""Query language: terms, atoms, conjunctive queries and their unions.

Everything here is immutable and purely symbolic. Evaluation against data
lives in `liftpdb.pdb` (enumeration) and `liftpdb.lift` (lifted inference).

Grammar (whitespace-insensitive, `#` starts a comment):

    query := [ident "(" var ")" "="] ucq
    ucq   := cq { "OR" cq }
    cq    := ["EXISTS" var {"," var} "."] atom { "AND" atom }
    atom  := ident "(" [term {"," term}] ")"
    term  := var | const

Variables start with a lowercase letter, constants with an uppercase one.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Union

from .errors import ParseError, UnsupportedQueryError

__all__ = [
    "Variable",
    "Constant",
    "Term",
    "Atom",
    "CQ",
    "UCQ",
    "QueryTemplate",
    "Separator",
    "ShatterTable",
    "parse_query",
    "format_atom",
    "format_cq",
    "format_ucq",
    "format_query",
    "make_ucq",
    "canonicalize",
    "substitute",
    "shatter",
    "restricted_name",
    "atom_signature",
    "signatures_compatible",
    "connected_components",
    "rewrite_as_conjunction",
    "symbolically_independent",
    "find_separator",
]


# ---------------------------------------------------------------------------
# Abstract syntax


@dataclass(frozen=True)
class Variable:
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("variable name must be nonempty")

    def __repr__(self):
        return f"Var({self.name})"


@dataclass(frozen=True)
class Constant:
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("constant name must be nonempty")

    def __repr__(self):
        return f"Const({self.name})"


Term = Union[Variable, Constant]


@dataclass(frozen=True)
class Atom:
    """A predicate applied to terms. Arity 0 is allowed (a single Bernoulli)."""

    predicate: str
    args: tuple = ()

    def __post_init__(self):
        if not self.predicate:
            raise ValueError("predicate name must be nonempty")
        object.__setattr__(self, "args", tuple(self.args))

    @property
    def arity(self) -> int:
        return len(self.args)

    def is_ground(self) -> bool:
        return all(isinstance(t, Constant) for t in self.args)

    def variables(self) -> list:
        seen, out = set(), []
        for t in self.args:
            if isinstance(t, Variable) and t.name not in seen:
                seen.add(t.name)
                out.append(t.name)
        return out

    def constants(self) -> list:
        seen, out = set(), []
        for t in self.args:
            if isinstance(t, Constant) and t.name not in seen:
                seen.add(t.name)
                out.append(t.name)
        return out

    def __str__(self):
        return format_atom(self)


@dataclass(frozen=True)
class CQ:
    """Conjunction of atoms; every variable is implicitly existential."""

    atoms: tuple

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if not self.atoms:
            raise ValueError("a conjunctive query needs at least one atom")

    def variables(self) -> list:
        seen, out = set(), []
        for atom in self.atoms:
            for v in atom.variables():
                if v not in seen:
                    seen.add(v)
                    out.append(v)
        return out

    def constants(self) -> list:
        seen, out = set(), []
        for atom in self.atoms:
            for c in atom.constants():
                if c not in seen:
                    seen.add(c)
                    out.append(c)
        return out

    def predicates(self) -> set:
        return {atom.predicate for atom in self.atoms}

    def __str__(self):
        return format_cq(self)


@dataclass(frozen=True)
class UCQ:
    """Union (disjunction) of conjunctive queries."""

    disjuncts: tuple

    def __post_init__(self):
        object.__setattr__(self, "disjuncts", tuple(self.disjuncts))
        if not self.disjuncts:
            raise ValueError("a UCQ needs at least one disjunct")

    def variables(self) -> list:
        seen, out = set(), []
        for cq in self.disjuncts:
            for v in cq.variables():
                if v not in seen:
                    seen.add(v)
                    out.append(v)
        return out

    def constants(self) -> list:
        seen, out = set(), []
        for cq in self.disjuncts:
            for c in cq.constants():
                if c not in seen:
                    seen.add(c)
                    out.append(c)
        return out

    def predicates(self) -> set:
        out = set()
        for cq in self.disjuncts:
            out.update(cq.predicates())
        return out

    def atoms(self) -> list:
        return [atom for cq in self.disjuncts for atom in cq.atoms]

    def __str__(self):
        return format_ucq(self)


@dataclass(frozen=True)
class QueryTemplate:
    """A UCQ parameterized by one free variable to be ranked over candidates.

    The free variable may occur in any subset of the disjuncts; disjuncts
    that omit it score identically for every candidate.
    """

    name: str
    free_var: str
    body: UCQ

    def instantiate(self, entity: str) -> UCQ:
        return substitute(self.body, self.free_var, entity)

    def __str__(self):
        return format_query(self)


# ---------------------------------------------------------------------------
# Printing


def format_term(t: Term) -> str:
    return t.name


def format_atom(atom: Atom) -> str:
    return f"{atom.predicate}({', '.join(format_term(t) for t in atom.args)})"


def format_cq(cq: CQ, free_var: Optional[str] = None) -> str:
    quantified = [v for v in cq.variables() if v != free_var]
    prefix = f"EXISTS {','.join(quantified)}. " if quantified else ""
    return prefix + " AND ".join(format_atom(a) for a in cq.atoms)


def format_ucq(q: UCQ, free_var: Optional[str] = None) -> str:
    return " OR ".join(format_cq(cq, free_var) for cq in q.disjuncts)


def format_query(q) -> str:
    if isinstance(q, QueryTemplate):
        return f"{q.name}({q.free_var}) = {format_ucq(q.body, q.free_var)}"
    return format_ucq(q)


# ---------------------------------------------------------------------------
# Parsing

_KEYWORDS = {"EXISTS", "AND", "OR", "FORALL"}
_TOKEN_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*|[(),.=]")


@dataclass(frozen=True)
class _Token:
    kind: str  # IDENT | PUNCT | EOF
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list:
    tokens = []
    for lineno, line in enumerate(text.splitlines() or [""], start=1):
        line = line.split("#", 1)[0]
        col = 0
        while col < len(line):
            ch = line[col]
            if ch.isspace():
                col += 1
                continue
            m = _TOKEN_RE.match(line, col)
            if not m:
                raise ParseError(f"unexpected character {ch!r}", lineno, col + 1)
            text_ = m.group(0)
            kind = "IDENT" if text_[0].isalpha() else "PUNCT"
            tokens.append(_Token(kind, text_, lineno, col + 1))
            col = m.end()
    tokens.append(_Token("EOF", "", lineno if text else 1, 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self, ahead=0) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> _Token:
        tok = self.peek()
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.next()
        if tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.line, tok.column)
        return tok

    def error(self, message: str, tok: Optional[_Token] = None):
        tok = tok or self.peek()
        raise ParseError(message, tok.line, tok.column)

    # query := [ident "(" var ")" "="] ucq
    def parse(self):
        free_var = None
        name = None
        # template header lookahead: IDENT ( lowercase-ident ) =
        if (
            self.peek().kind == "IDENT"
            and self.peek().text not in _KEYWORDS
            and self.peek(1).text == "("
            and self.peek(2).kind == "IDENT"
            and self.peek(2).text[0].islower()
            and self.peek(3).text == ")"
            and self.peek(4).text == "="
        ):
            name = self.next().text
            self.expect("(")
            free_var = self.next().text
            self.expect(")")
            self.expect("=")
        body = self.parse_ucq(free_var)
        tok = self.peek()
        if tok.kind != "EOF":
            self.error(f"unexpected trailing input {tok.text!r}")
        if free_var is not None:
            return QueryTemplate(name, free_var, body)
        return body

    def parse_ucq(self, free_var) -> UCQ:
        disjuncts = [self.parse_cq(free_var)]
        while self.peek().text == "OR":
            self.next()
            disjuncts.append(self.parse_cq(free_var))
        return make_ucq(disjuncts)

    def parse_cq(self, free_var) -> CQ:
        declared = []
        tok = self.peek()
        if tok.text == "FORALL":
            self.error("universal quantifiers are not supported", tok)
        if tok.text == "EXISTS":
            self.next()
            declared.append(self._parse_var())
            while self.peek().text == ",":
                self.next()
                declared.append(self._parse_var())
            self.expect(".")
        atoms = [self.parse_atom()]
        while self.peek().text == "AND":
            self.next()
            atoms.append(self.parse_atom())
        cq = CQ(tuple(atoms))
        allowed = set(declared)
        if free_var is not None:
            allowed.add(free_var)
        for v in cq.variables():
            if v not in allowed:
                what = "declare it with EXISTS" if free_var is None else f"declare it with EXISTS or use the template variable {free_var!r}"
                self.error(f"free variable {v!r}: {what}", tok)
        return cq

    def _parse_var(self) -> str:
        tok = self.next()
        if tok.kind != "IDENT" or tok.text in _KEYWORDS:
            raise ParseError(f"expected a variable, found {tok.text!r}", tok.line, tok.column)
        if not tok.text[0].islower():
            raise ParseError(f"variables start lowercase: {tok.text!r}", tok.line, tok.column)
        return tok.text

    def parse_atom(self) -> Atom:
        tok = self.next()
        if tok.kind != "IDENT" or tok.text in _KEYWORDS:
            raise ParseError(f"expected a predicate, found {tok.text or 'end of input'!r}", tok.line, tok.column)
        predicate = tok.text
        self.expect("(")
        args = []
        if self.peek().text != ")":
            args.append(self._parse_term())
            while self.peek().text == ",":
                self.next()
                args.append(self._parse_term())
        self.expect(")")
        return Atom(predicate, tuple(args))

    def _parse_term(self) -> Term:
        tok = self.next()
        if tok.kind != "IDENT" or tok.text in _KEYWORDS:
            raise ParseError(f"expected a term, found {tok.text!r}", tok.line, tok.column)
        if tok.text[0].islower():
            return Variable(tok.text)
        return Constant(tok.text)


def parse_query(text: str):
    """Parse query text into a QueryTemplate (with a declared head) or a UCQ.

    Pretty-printing the result with format_query re-parses to an equal AST.
    """
    return _Parser(text).parse()


def make_ucq(disjuncts: Iterable[CQ]) -> UCQ:
    """Build a UCQ, merging alpha-equivalent duplicate disjuncts (first wins)."""
    seen = set()
    kept = []
    for cq in disjuncts:
        key = _canonical_cq(cq)
        if key not in seen:
            seen.add(key)
            kept.append(cq)
    return UCQ(tuple(kept))


# ---------------------------------------------------------------------------
# Canonicalization

# Above this many tie-break permutations we fall back to a fixed order; the
# result is still deterministic and idempotent, just not guaranteed minimal.
_PERMUTATION_CAP = 5040


def _var_signatures(atoms) -> dict:
    """Rename-invariant signature per variable, refined over atom contexts."""
    occ = {}
    for atom in atoms:
        for pos, t in enumerate(atom.args):
            if isinstance(t, Variable):
                occ.setdefault(t.name, []).append((atom.predicate, len(atom.args), pos))
    sig = {v: repr(sorted(o)) for v, o in occ.items()}
    for _ in range(3):
        nxt = {}
        for v in occ:
            contexts = []
            for atom in atoms:
                if not any(isinstance(t, Variable) and t.name == v for t in atom.args):
                    continue
                ctx = tuple(
                    "c:" + t.name
                    if isinstance(t, Constant)
                    else ("self" if t.name == v else "s:" + sig[t.name])
                    for t in atom.args
                )
                contexts.append((atom.predicate, ctx))
            nxt[v] = repr((sig[v], sorted(contexts)))
        sig = nxt
    return sig


def _atom_sort_key(atom: Atom, index: dict):
    return (
        atom.predicate,
        tuple(
            (0, t.name) if isinstance(t, Constant) else (1, "%06d" % index[t.name])
            for t in atom.args
        ),
    )


def _rendered(atoms, index):
    return tuple(sorted(_atom_sort_key(a, index) for a in atoms))


@lru_cache(maxsize=65536)
def _canonical_cq(cq: CQ) -> CQ:
    atoms = []
    seen = set()
    for atom in cq.atoms:
        if atom not in seen:
            seen.add(atom)
            atoms.append(atom)
    variables = []
    vseen = set()
    for atom in atoms:
        for v in atom.variables():
            if v not in vseen:
                vseen.add(v)
                variables.append(v)
    if not variables:
        ordered = CQ(tuple(sorted(set(atoms), key=lambda a: _atom_sort_key(a, {}))))
        return ordered
    sig = _var_signatures(atoms)
    classes = {}
    for v in variables:
        classes.setdefault(sig[v], []).append(v)
    class_list = [classes[s] for s in sorted(classes)]
    n_orders = math.prod(math.factorial(len(c)) for c in class_list)
    if n_orders > _PERMUTATION_CAP:
        candidates = [list(itertools.chain.from_iterable(class_list))]
    else:
        candidates = [
            list(itertools.chain.from_iterable(perm))
            for perm in itertools.product(*(itertools.permutations(c) for c in class_list))
        ]
    best = None
    best_index = None
    for order in candidates:
        index = {v: i for i, v in enumerate(order)}
        rendering = _rendered(atoms, index)
        if best is None or rendering < best:
            best = rendering
            best_index = index
    rename = {v: Variable(f"v{i}") for v, i in best_index.items()}
    new_atoms = tuple(
        Atom(a.predicate, tuple(rename[t.name] if isinstance(t, Variable) else t for t in a.args))
        for a in atoms
    )
    final_index = {f"v{i}": i for i in range(len(variables))}
    ordered = sorted(set(new_atoms), key=lambda a: _atom_sort_key(a, final_index))
    return CQ(tuple(ordered))


@lru_cache(maxsize=65536)
def canonicalize(q: UCQ) -> UCQ:
    """Canonical form: per-disjunct variable renaming to v0,v1,..., atoms
    sorted by (predicate, argument pattern), alpha-equivalent disjuncts
    merged, disjuncts sorted. Idempotent and equivalence-preserving."""
    canon = []
    seen = set()
    for cq in q.disjuncts:
        c = _canonical_cq(cq)
        if c not in seen:
            seen.add(c)
            canon.append(c)
    canon.sort(key=lambda c: _rendered(c.atoms, {v: i for i, v in enumerate(c.variables())}))
    return UCQ(tuple(canon))


# ---------------------------------------------------------------------------
# Substitution


def _substitute_cq(cq: CQ, var: str, const: str) -> CQ:
    replacement = Constant(const)
    return CQ(
        tuple(
            Atom(
                a.predicate,
                tuple(replacement if isinstance(t, Variable) and t.name == var else t for t in a.args),
            )
            for a in cq.atoms
        )
    )


def substitute(q: UCQ, var: str, const: str) -> UCQ:
    """Replace every occurrence of the variable by the constant.

    Substituting a variable that does not occur is the identity.
    """
    return UCQ(tuple(_substitute_cq(cq, var, const) for cq in q.disjuncts))


# ---------------------------------------------------------------------------
# Shattering


class ShatterTable:
    """Maps derived predicate names back to what they stand for. Two entry
    kinds:

      ("spec", base, base_arity, ((position, constant), ...))
          the base predicate with those argument positions fixed;
      ("restrict", base, (constant, ...))
          a unary base predicate with those argument values excluded.

    Immutable; `shatter` and the engine return extended copies.
    """

    __slots__ = ("_entries", "_by_signature", "_resolved")

    def __init__(self, entries=None):
        self._entries = dict(entries or {})
        self._by_signature = {}
        for name, entry in self._entries.items():
            if entry[0] == "spec":
                self._by_signature[("spec", entry[1], entry[3])] = name
            else:
                self._by_signature[("restrict", entry[1], entry[2])] = name
        self._resolved = {}

    def __len__(self):
        return len(self._entries)

    def __bool__(self):
        return bool(self._entries)

    def __contains__(self, name):
        return name in self._entries

    def __eq__(self, other):
        return isinstance(other, ShatterTable) and self._entries == other._entries

    def items(self):
        return self._entries.items()

    def entry(self, name):
        return self._entries[name]

    def names(self):
        return set(self._entries)

    def name_for(self, signature):
        return self._by_signature.get(signature)

    def extended(self, new_entries) -> "ShatterTable":
        merged = dict(self._entries)
        merged.update(new_entries)
        return ShatterTable(merged)

    def constants(self) -> set:
        out = set()
        for entry in self._entries.values():
            if entry[0] == "spec":
                out.update(c for _p, c in entry[3])
            else:
                out.update(entry[2])
        return out

    def resolve(self, name):
        """Fully composed signature of a name:
        (root, root_arity_or_None, ((position, constant), ...),
         ((position, excluded constants sorted), ...)).

        Exclusions are expressed over root argument positions; a name of
        arity k keeps k free root positions, in order.
        """
        if name in self._resolved:
            return self._resolved[name]
        if name not in self._entries:
            return (name, None, (), ())
        entry = self._entries[name]
        if entry[0] == "spec":
            _kind, base, base_arity, spec = entry
            root, root_arity, root_spec, root_excl = self.resolve(base)
            if root_arity is None:
                root_arity = base_arity
            remaining = self._free_positions(root_arity, root_spec)
            lifted = tuple((remaining[p], c) for p, c in spec)
            new_spec = tuple(sorted(lifted + root_spec))
            # an exclusion on a position that just got fixed is vacuous when
            # the constant escapes it, and marks the name impossible when not
            fixed = dict(new_spec)
            kept = tuple(
                (pos, banned)
                for pos, banned in root_excl
                if pos not in fixed or fixed[pos] in banned
            )
            result = (root, root_arity, new_spec, kept)
        else:
            _kind, base, excluded = entry
            root, root_arity, root_spec, root_excl = self.resolve(base)
            if root_arity is None:
                root_arity = 1
            remaining = self._free_positions(root_arity, root_spec)
            if len(remaining) != 1:
                raise UnsupportedQueryError(
                    f"restriction {name!r} over non-unary predicate {base!r}"
                )
            pos = remaining[0]
            merged = dict(root_excl)
            merged[pos] = tuple(sorted(set(merged.get(pos, ())) | set(excluded)))
            result = (root, root_arity, root_spec, tuple(sorted(merged.items())))
        self._resolved[name] = result
        return result

    @staticmethod
    def _free_positions(arity, spec):
        taken = {p for p, _ in spec}
        return [p for p in range(arity) if p not in taken]

    def base_ground_atom(self, atom: Atom):
        """Equivalent ground atom over the root predicate, with the split-off
        constants re-inserted; None when the atom falls in an excluded part
        (its probability is 0 by construction)."""
        if not atom.is_ground():
            raise ValueError(f"atom is not ground: {atom}")
        name = atom.predicate
        if name not in self._entries:
            return atom
        entry = self._entries[name]
        if entry[0] == "restrict":
            _kind, base, excluded = entry
            if atom.args and atom.args[0].name in excluded:
                return None
            return self.base_ground_atom(Atom(base, atom.args))
        _kind, base, base_arity, spec = entry
        positions = dict(spec)
        args = [None] * base_arity
        it = iter(atom.args)
        for pos in range(base_arity):
            args[pos] = Constant(positions[pos]) if pos in positions else next(it)
        return self.base_ground_atom(Atom(base, tuple(args)))


def atom_signature(atom: Atom, table: ShatterTable):
    """Resolved (root, spec, exclusions) of an atom, folding in the constants
    it carries directly. Two atoms can share a ground instance only if their
    signatures are compatible (see signatures_compatible)."""
    root, root_arity, spec, excl = table.resolve(atom.predicate)
    if root_arity is None:
        root_arity = atom.arity
    remaining = ShatterTable._free_positions(root_arity, spec)
    own = []
    for i, t in enumerate(atom.args):
        if isinstance(t, Constant):
            own.append((remaining[i], t.name))
    return root, tuple(sorted(spec + tuple(own))), excl


def signatures_compatible(sig1, sig2) -> bool:
    """Whether two same-root occurrences can ever ground to a common tuple."""
    root1, spec1, excl1 = sig1
    root2, spec2, excl2 = sig2
    if root1 != root2:
        return False
    d1, d2 = dict(spec1), dict(spec2)
    for spec, excl in ((d1, excl1), (d2, excl2)):
        for pos, banned in excl:
            if pos in spec and spec[pos] in banned:
                return False  # never grounds at all
    for pos, c in d1.items():
        if pos in d2 and d2[pos] != c:
            return False
    for excl, other in ((excl1, d2), (excl2, d1)):
        for pos, banned in excl:
            if pos in other and other[pos] in banned:
                return False
    return True


def _check_shatterable(q: UCQ, table: ShatterTable):
    """Reject mixed specializations of non-unary predicates that can
    co-ground: splitting those soundly needs domain partitioning beyond the
    supported fragment. Unary predicates are exempt (the engine partitions
    their domain exactly)."""
    by_root = {}
    for atom in q.atoms():
        root, spec, excl = atom_signature(atom, table)
        _rname, root_arity, _s, _e = table.resolve(atom.predicate)
        if root_arity is None:
            root_arity = atom.arity
        if root_arity <= 1:
            continue
        by_root.setdefault(root, []).append(((root, spec, excl), atom))
    for root, entries in by_root.items():
        for (s1, a1), (s2, a2) in itertools.combinations(entries, 2):
            if s1[1] == s2[1] and s1[2] == s2[2]:
                continue
            if signatures_compatible(s1, s2):
                raise UnsupportedQueryError(
                    f"cannot shatter: occurrences {a1} and {a2} of predicate "
                    f"{root!r} specialize it on overlapping tuples"
                )


def _taken_names(q: UCQ, table: ShatterTable) -> set:
    taken = set(q.predicates()) | table.names()
    for _name, entry in table.items():
        taken.add(entry[1])
    return taken


def shatter(q: UCQ, table: Optional[ShatterTable] = None, check: bool = True):
    """Split every constant out of every atom.

    Each atom with constants is replaced by an atom over a fresh lower-arity
    predicate specialized on those constants (R(A,x) becomes R_A(x)); an
    all-constant atom becomes a 0-ary predicate. Returns the constant-free
    query together with the mapping table, composed with `table` if given.

    `check=False` skips the overlap rejection; only the inference engine may
    do that, because its independence tests resolve names back to roots.
    """
    table = table or ShatterTable()
    if check:
        _check_shatterable(q, table)
    taken = _taken_names(q, table)
    new_entries = {}

    def specialized_name(predicate, arity, spec):
        signature = ("spec", predicate, spec)
        existing = table.name_for(signature)
        if existing is None:
            existing = {("spec", e[1], e[3]): n for n, e in new_entries.items() if e[0] == "spec"}.get(signature)
        if existing is not None:
            return existing
        candidate = predicate + "".join(f"_{c}" for _pos, c in spec)
        if candidate in taken:
            candidate = candidate + "_p" + "".join(str(p) for p, _c in spec)
        while candidate in taken:
            candidate += "_"
        taken.add(candidate)
        new_entries[candidate] = ("spec", predicate, arity, spec)
        return candidate

    new_disjuncts = []
    changed = False
    for cq in q.disjuncts:
        new_atoms = []
        for atom in cq.atoms:
            spec = tuple(
                (pos, t.name) for pos, t in enumerate(atom.args) if isinstance(t, Constant)
            )
            if not spec:
                new_atoms.append(atom)
                continue
            changed = True
            name = specialized_name(atom.predicate, atom.arity, spec)
            new_atoms.append(Atom(name, tuple(t for t in atom.args if isinstance(t, Variable))))
        new_disjuncts.append(CQ(tuple(new_atoms)))
    if not changed:
        return q, table
    return make_ucq(new_disjuncts), table.extended(new_entries)


def restricted_name(q: UCQ, table: ShatterTable, base: str, excluded):
    """Name (creating a table entry if needed) for the unary predicate `base`
    with the given argument values carved out."""
    excluded = tuple(sorted(excluded))
    signature = ("restrict", base, excluded)
    existing = table.name_for(signature)
    if existing is not None:
        return existing, table
    candidate = base + "_excl_" + "_".join(excluded)
    taken = _taken_names(q, table)
    while candidate in taken:
        candidate += "_"
    return candidate, table.extended({candidate: ("restrict", base, excluded)})


# ---------------------------------------------------------------------------
# Decomposition


def connected_components(cq: CQ) -> list:
    """Partition the atoms into maximal groups linked by shared variables.

    Atoms without variables (ground or 0-ary) each form their own component.
    """
    groups = []  # (variable set, atom list), first-occurrence order
    for atom in cq.atoms:
        avars = set(atom.variables())
        merged = None
        keep = []
        for gvars, gatoms in groups:
            if avars and (gvars & avars):
                if merged is None:
                    merged = (gvars | avars, gatoms + [atom])
                else:
                    merged = (merged[0] | gvars, merged[1] + gatoms)
            else:
                keep.append((gvars, gatoms))
        if merged is None:
            keep.append((avars, [atom]))
        else:
            keep.append(merged)
        groups = keep
    ordered = sorted(groups, key=lambda g: cq.atoms.index(g[1][0]))
    return [CQ(tuple(atoms)) for _vars, atoms in ordered]


def rewrite_as_conjunction(q: UCQ) -> list:
    """Split each disjunct into connected components and distribute the
    disjunction over the conjunction: the result is a list of UCQs whose
    conjunction is equivalent to `q`. Returns [q] when no split exists.
    """
    components = [connected_components(cq) for cq in q.disjuncts]
    if all(len(c) == 1 for c in components):
        return [q]
    conjuncts = []
    seen = set()
    for choice in itertools.product(*components):
        u = make_ucq(choice)
        key = canonicalize(u)
        if key not in seen:
            seen.add(key)
            conjuncts.append(u)
    return conjuncts


def symbolically_independent(a: UCQ, b: UCQ) -> bool:
    """True iff the two queries share no predicate symbols."""
    return not (a.predicates() & b.predicates())


@dataclass(frozen=True)
class Separator:
    """One separator variable per disjunct, substituted simultaneously."""

    per_disjunct: tuple

    def __str__(self):
        names = sorted(set(self.per_disjunct))
        return names[0] if len(names) == 1 else "(" + ",".join(self.per_disjunct) + ")"


def find_separator(q: UCQ, table: Optional[ShatterTable] = None) -> Optional[Separator]:
    """Find a separator: a variable per disjunct occurring in every atom of
    that disjunct such that, for each predicate, the chosen variables sit at
    one consistent argument position. Search order is lexicographic over the
    canonical variable order; first hit wins. None if no separator exists.

    With a shatter table, positions are compared at the root predicate level,
    so derived predicates of a common root must agree on the root position.
    """

    def atom_key_and_positions(atom, v):
        here = frozenset(
            i for i, t in enumerate(atom.args) if isinstance(t, Variable) and t.name == v
        )
        if table is None or atom.predicate not in table:
            return atom.predicate, here
        root, root_arity, spec, _excl = table.resolve(atom.predicate)
        remaining = ShatterTable._free_positions(root_arity, spec)
        return root, frozenset(remaining[i] for i in here)

    per_disjunct = []
    for cq in q.disjuncts:
        candidates = None
        for atom in cq.atoms:
            avars = {t.name for t in atom.args if isinstance(t, Variable)}
            candidates = avars if candidates is None else candidates & avars
            if not candidates:
                return None
        order = cq.variables()
        per_disjunct.append(sorted(candidates, key=order.index))
    for combo in itertools.product(*per_disjunct):
        positions = {}
        ok = True
        for cq, v in zip(q.disjuncts, combo):
            for atom in cq.atoms:
                key, here = atom_key_and_positions(atom, v)
                prev = positions.get(key)
                merged = here if prev is None else prev & here
                if not merged:
                    ok = False
                    break
                positions[key] = merged
            if not ok:
                break
        if ok:
            return Separator(tuple(combo))
    return None
