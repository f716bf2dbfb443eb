"""Tuple-independent probabilistic database: world semantics and the
exhaustive enumeration oracle that grounds all correctness testing.

Desk-scale by design: the oracle enumerates worlds and is capped.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import DataError, OracleLimitError
from .logic import Atom, CQ, Constant, QueryTemplate, ShatterTable, UCQ, Variable

__all__ = [
    "Vocabulary",
    "ProbDatabase",
    "World",
    "tuple_prob",
    "world_prob",
    "models",
    "oracle_query_prob",
    "load_pdb",
    "loads_pdb",
    "save_pdb",
    "dumps_pdb",
    "shatter_database",
    "ORACLE_SUPPORT_CAP",
]

# Worlds enumerated = 2**(number of stochastic tuples); tuples with p in {0,1}
# are folded away and do not count against the cap.
ORACLE_SUPPORT_CAP = 20


@dataclass(frozen=True)
class Vocabulary:
    """Predicates with arities plus an ordered constant domain."""

    predicates: tuple  # of (name, arity)
    domain: tuple  # of constant names

    def __post_init__(self):
        object.__setattr__(self, "predicates", tuple(self.predicates))
        object.__setattr__(self, "domain", tuple(self.domain))
        names = [n for n, _a in self.predicates]
        if len(names) != len(set(names)):
            raise ValueError("predicate names must be unique")
        if len(self.domain) != len(set(self.domain)):
            raise ValueError("domain constants must be unique")

    def arity(self, name: str) -> Optional[int]:
        for n, a in self.predicates:
            if n == name:
                return a
        return None

    def with_constants(self, extra: Iterable[str]) -> "Vocabulary":
        known = set(self.domain)
        new = []
        for c in extra:
            if c not in known:
                known.add(c)
                new.append(c)
        if not new:
            return self
        return Vocabulary(self.predicates, self.domain + tuple(new))

    def with_predicates(self, extra: Iterable) -> "Vocabulary":
        known = {n: a for n, a in self.predicates}
        added = []
        for name, arity in extra:
            if name in known:
                if known[name] != arity:
                    raise DataError(f"predicate {name!r} used with conflicting arities")
                continue
            known[name] = arity
            added.append((name, arity))
        if not added:
            return self
        return Vocabulary(self.predicates + tuple(added), self.domain)

    def herbrand_base(self) -> list:
        base = []
        for name, arity in self.predicates:
            for combo in itertools.product(self.domain, repeat=arity):
                base.append(Atom(name, tuple(Constant(c) for c in combo)))
        return base


def _check_tuple(vocab: Vocabulary, atom: Atom, p: float, formal: bool):
    if not atom.is_ground():
        raise DataError(f"tuple atoms must be ground: {atom}")
    arity = vocab.arity(atom.predicate)
    if arity is not None and arity != atom.arity:
        raise DataError(
            f"atom {atom} has arity {atom.arity}, vocabulary says {arity}"
        )
    if not formal and not (0.0 <= p <= 1.0):
        raise DataError(f"probability {p} of {atom} outside [0, 1] (formal mode not set)")


@dataclass(frozen=True, eq=False)
class ProbDatabase:
    """Finite map from ground atoms to probabilities over a vocabulary.

    `formal` allows values outside [0, 1]; every formula downstream is then
    applied verbatim over the reals.
    """

    vocabulary: Vocabulary
    tuples: Mapping[Atom, float]
    formal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tuples", dict(self.tuples))
        vocab = self.vocabulary.with_predicates(
            (a.predicate, a.arity) for a in self.tuples
        )
        vocab = vocab.with_constants(
            c.name for a in self.tuples for c in a.args
        )
        object.__setattr__(self, "vocabulary", vocab)
        for atom, p in self.tuples.items():
            _check_tuple(self.vocabulary, atom, p, self.formal)

    def __eq__(self, other):
        return (
            isinstance(other, ProbDatabase)
            and self.vocabulary == other.vocabulary
            and self.tuples == other.tuples
            and self.formal == other.formal
        )

    @property
    def domain(self) -> tuple:
        return self.vocabulary.domain

    def tuple_prob(self, atom: Atom) -> float:
        return tuple_prob(self, atom)

    def with_constants(self, extra: Iterable[str]) -> "ProbDatabase":
        vocab = self.vocabulary.with_constants(extra)
        if vocab is self.vocabulary:
            return self
        return ProbDatabase(vocab, self.tuples, self.formal)


@dataclass(frozen=True, eq=False)
class World:
    """Total truth assignment over the Herbrand base of its vocabulary."""

    vocabulary: Vocabulary
    truth: Mapping[Atom, bool]

    def __post_init__(self):
        object.__setattr__(self, "truth", dict(self.truth))

    @classmethod
    def from_true_atoms(cls, vocabulary: Vocabulary, true_atoms: Iterable[Atom]) -> "World":
        true_set = set(true_atoms)
        return cls(vocabulary, {a: (a in true_set) for a in vocabulary.herbrand_base()})

    def true_atoms(self) -> frozenset:
        return frozenset(a for a, v in self.truth.items() if v)


def tuple_prob(db: ProbDatabase, atom: Atom) -> float:
    """Stored probability of a ground atom, 0 if absent (closed world)."""
    if not atom.is_ground():
        raise DataError(f"tuple lookup needs a ground atom, got {atom}")
    arity = db.vocabulary.arity(atom.predicate)
    if arity is not None and arity != atom.arity:
        raise DataError(f"atom {atom} has arity {atom.arity}, vocabulary says {arity}")
    return db.tuples.get(atom, 0.0)


def world_prob(db: ProbDatabase, world: World) -> float:
    """Probability of one world: the product of per-tuple factors."""
    base = db.vocabulary.herbrand_base()
    if set(world.truth) != set(base):
        raise DataError("world is not a total assignment over the Herbrand base")
    p = 1.0
    for atom in base:
        q = db.tuples.get(atom, 0.0)
        p *= q if world.truth[atom] else (1.0 - q)
        if p == 0.0:
            return 0.0
    return p


# ---------------------------------------------------------------------------
# Model checking


def _as_boolean(q) -> UCQ:
    if isinstance(q, QueryTemplate):
        raise DataError(
            f"expected a Boolean query, got template {q.name}({q.free_var}); "
            "instantiate the free variable first"
        )
    return q


def _true_index(true_atoms: Iterable[Atom]) -> dict:
    index = {}
    for atom in true_atoms:
        index.setdefault(atom.predicate, []).append(atom.args)
    return index


def _match_cq(cq: CQ, index: dict, binding: dict, pos: int) -> bool:
    """Backtracking join of the atoms against the index of true atoms."""
    if pos == len(cq.atoms):
        return True
    atom = cq.atoms[pos]
    for args in index.get(atom.predicate, ()):
        if len(args) != atom.arity:
            continue
        trial = dict(binding)
        ok = True
        for t, value in zip(atom.args, args):
            want = value.name
            if isinstance(t, Constant):
                if t.name != want:
                    ok = False
                    break
            else:
                bound = trial.get(t.name)
                if bound is None:
                    trial[t.name] = want
                elif bound != want:
                    ok = False
                    break
        if ok and _match_cq(cq, index, trial, pos + 1):
            return True
    return False


def models(world: World, q: UCQ) -> bool:
    """Herbrand satisfaction: some disjunct has a grounding over the domain
    making all of its atoms true in the world."""
    q = _as_boolean(q)
    index = _true_index(world.true_atoms())
    return any(_match_cq(cq, index, {}, 0) for cq in q.disjuncts)


def satisfies_by_grounding(true_atoms: Iterable[Atom], q: UCQ, domain: Iterable[str]) -> bool:
    """Independent satisfaction check: enumerate all groundings outright.

    Deliberately different machinery from `models` so the two can be tested
    against each other.
    """
    q = _as_boolean(q)
    true_set = set(true_atoms)
    domain = tuple(domain)
    for cq in q.disjuncts:
        variables = cq.variables()
        for combo in itertools.product(domain, repeat=len(variables)):
            env = dict(zip(variables, combo))
            ground = [
                Atom(
                    a.predicate,
                    tuple(Constant(env[t.name]) if isinstance(t, Variable) else t for t in a.args),
                )
                for a in cq.atoms
            ]
            if all(g in true_set for g in ground):
                return True
    return False


def _disjunct_groundings(q: UCQ, domain: tuple, possible: frozenset) -> list:
    """All groundings of each disjunct whose atoms can ever be true."""
    out = set()
    for cq in q.disjuncts:
        variables = cq.variables()
        for combo in itertools.product(domain, repeat=len(variables)):
            env = dict(zip(variables, combo))
            ground = frozenset(
                Atom(
                    a.predicate,
                    tuple(Constant(env[t.name]) if isinstance(t, Variable) else t for t in a.args),
                )
                for a in cq.atoms
            )
            if ground <= possible:
                out.add(ground)
    return sorted(out, key=lambda g: sorted(map(str, g)))


def oracle_query_prob(db: ProbDatabase, q: UCQ, max_support: int = ORACLE_SUPPORT_CAP) -> float:
    """Exact query probability by summing over satisfying worlds.

    Tuples with probability 0 or 1 are folded away; the remaining stochastic
    support is capped because the sum enumerates 2**|support| worlds.
    """
    q = _as_boolean(q)
    db = db.with_constants(q.constants())
    fixed_true = frozenset(a for a, p in db.tuples.items() if p == 1.0)
    support = [(a, p) for a, p in db.tuples.items() if p not in (0.0, 1.0)]
    if len(support) > max_support:
        raise OracleLimitError(
            f"{len(support)} stochastic tuples would mean 2**{len(support)} worlds "
            f"(cap {max_support}); the oracle is a desk-scale testing tool"
        )
    possible = fixed_true | {a for a, _p in support}
    groundings = _disjunct_groundings(q, db.domain, possible)
    if not groundings:
        return 0.0
    k = len(support)
    bit = {atom: i for i, (atom, _p) in enumerate(support)}
    masks = []
    for g in groundings:
        m = 0
        for atom in g:
            if atom in bit:
                m |= 1 << bit[atom]
        masks.append(m)
    # weight of every world, built one tuple at a time
    weights = np.ones(1, dtype=np.float64)
    for _atom, p in support:
        weights = np.concatenate([weights * (1.0 - p), weights * p])
    worlds = np.arange(1 << k, dtype=np.int64)
    satisfied = np.zeros(1 << k, dtype=bool)
    for m in masks:
        satisfied |= (worlds & m) == m
    return float(weights[satisfied].sum())


# ---------------------------------------------------------------------------
# Flat-file format: predicate<TAB>args...<TAB>probability, optional
# "@domain c1 c2 ..." headers, '#' comments.


def loads_pdb(text: str, formal: bool = False) -> ProbDatabase:
    declared = []
    tuples = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("@domain"):
            declared.extend(line.split()[1:])
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise DataError(f"line {lineno}: expected predicate<TAB>args...<TAB>probability")
        predicate, *args, prob_text = parts
        try:
            p = float(prob_text)
        except ValueError:
            raise DataError(f"line {lineno}: bad probability {prob_text!r}") from None
        atom = Atom(predicate.strip(), tuple(Constant(a.strip()) for a in args))
        if atom in tuples:
            raise DataError(f"line {lineno}: duplicate tuple {atom}")
        if not formal and not (0.0 <= p <= 1.0):
            raise DataError(
                f"line {lineno}: probability {p} outside [0, 1]; pass formal mode to allow"
            )
        tuples[atom] = p
    vocab = Vocabulary((), tuple(dict.fromkeys(declared)))
    return ProbDatabase(vocab, tuples, formal=formal)


def load_pdb(path, formal: bool = False) -> ProbDatabase:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return loads_pdb(text, formal=formal)


def dumps_pdb(db: ProbDatabase) -> str:
    lines = []
    if db.domain:
        lines.append("@domain " + " ".join(db.domain))
    for atom, p in db.tuples.items():
        fields = [atom.predicate, *(t.name for t in atom.args), repr(p)]
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def save_pdb(db: ProbDatabase, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_pdb(db))


# ---------------------------------------------------------------------------


def shatter_database(db: ProbDatabase, table: ShatterTable) -> ProbDatabase:
    """Relocate tuples into the derived predicates of a shatter table.

    Tuples of predicates untouched by the table are kept as they are. The
    result assigns the same probability to every query over the shattered
    vocabulary as the original does to the corresponding un-shattered query,
    as long as the query does not also use a touched predicate unsplit (the
    lifted engine's table-resolution path covers that case instead).
    """
    touched = set()
    new_tuples = {}
    entries = []
    for name in sorted(table.names()):
        root, root_arity, spec, excl = table.resolve(name)
        touched.add(root)
        entries.append((name, root, root_arity, dict(spec), dict(excl)))
    for atom, p in db.tuples.items():
        if atom.predicate not in touched:
            new_tuples[atom] = p
    for name, root, root_arity, spec, excl in entries:
        for atom, p in db.tuples.items():
            if atom.predicate != root or atom.arity != root_arity:
                continue
            if any(atom.args[pos].name != c for pos, c in spec.items()):
                continue
            if any(atom.args[pos].name in banned for pos, banned in excl.items()):
                continue
            rest = tuple(t for pos, t in enumerate(atom.args) if pos not in spec)
            new_tuples[Atom(name, rest)] = p
    vocab = Vocabulary(
        tuple(
            (n, a)
            for n, a in db.vocabulary.predicates
            if n not in touched
        ),
        db.domain,
    )
    return ProbDatabase(vocab, new_tuples, formal=db.formal)
