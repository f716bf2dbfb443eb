"""Lifted inference for unions of conjunctive queries.

Computes exact query probabilities in polynomial time for safe queries and
classifies queries safe/unsafe by symbolic execution of the same recursion:

  step 0  ground-atom lookup
  step 1  rewrite into a conjunction of UCQs (connected components)
  step 2  product over symbolically independent conjuncts
  step 3  inclusion-exclusion, cancelling syntactically equal terms first
  step 4  independent-union split of the disjuncts
  step 5  separator variable: product over the domain
  step 6  fail -- no polynomial-time plan exists

Cancellation in step 3 merges terms by canonical form only; queries that are
safe solely through implicate-lattice cancellations are reported unsafe
(conservative, documented).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

from .errors import DataError, UnsafeQueryError, UnsupportedQueryError
from .logic import (
    Atom,
    CQ,
    ShatterTable,
    UCQ,
    Variable,
    _substitute_cq,
    atom_signature,
    canonicalize,
    find_separator,
    format_atom,
    format_ucq,
    make_ucq,
    restricted_name,
    rewrite_as_conjunction,
    shatter,
    signatures_compatible,
)
from .pdb import ProbDatabase, Vocabulary, _as_boolean, tuple_prob

__all__ = [
    "LiftResult",
    "SafetyVerdict",
    "PlanNode",
    "lift",
    "classify",
    "evaluate_query",
]


# ---------------------------------------------------------------------------
# Plan trace


@dataclass(frozen=True)
class PlanNode:
    step: int
    query_text: str
    probability: Optional[float]

    def evaluate(self):
        raise NotImplementedError

    def _children(self):
        return ()

    def render(self, precision: int = 6) -> str:
        return "\n".join(self._lines(0, precision))

    def _prob_text(self, precision):
        if self.probability is None:
            return ""
        return f" = {self.probability:.{precision}f}"

    def _lines(self, depth, precision):
        yield "  " * depth + self._head(precision)
        for label, child in self._children():
            if label:
                yield "  " * (depth + 1) + label
                yield from child._lines(depth + 2, precision)
            else:
                yield from child._lines(depth + 1, precision)

    def _head(self, precision):
        raise NotImplementedError


@dataclass(frozen=True)
class Step0Plan(PlanNode):
    base_text: str

    def evaluate(self):
        return self.probability

    def _head(self, precision):
        base = f" [{self.base_text}]" if self.base_text != self.query_text else ""
        return f"step0 lookup {self.query_text}{base}{self._prob_text(precision)}"


@dataclass(frozen=True)
class Step2Plan(PlanNode):
    parts: tuple

    def evaluate(self):
        p = 1.0
        for part in self.parts:
            p *= part.evaluate()
        return p

    def _children(self):
        return tuple((None, part) for part in self.parts)

    def _head(self, precision):
        return f"step2 independent conjunction of {len(self.parts)}: {self.query_text}{self._prob_text(precision)}"


@dataclass(frozen=True)
class Step3Plan(PlanNode):
    terms: tuple  # of (coefficient, PlanNode)

    def evaluate(self):
        p = 0.0
        for coeff, term in self.terms:
            p += coeff * term.evaluate()
        return p

    def _children(self):
        return tuple((f"{coeff:+d} x", term) for coeff, term in self.terms)

    def _head(self, precision):
        return f"step3 inclusion-exclusion over {len(self.terms)} terms: {self.query_text}{self._prob_text(precision)}"


@dataclass(frozen=True)
class Step4Plan(PlanNode):
    parts: tuple

    def evaluate(self):
        miss = 1.0
        for part in self.parts:
            miss *= 1.0 - part.evaluate()
        return 1.0 - miss

    def _children(self):
        return tuple((None, part) for part in self.parts)

    def _head(self, precision):
        return f"step4 independent disjunction of {len(self.parts)}: {self.query_text}{self._prob_text(precision)}"


@dataclass(frozen=True)
class Step5Plan(PlanNode):
    separator: str
    branches: tuple  # of (constant, PlanNode)

    def evaluate(self):
        miss = 1.0
        for _const, branch in self.branches:
            miss *= 1.0 - branch.evaluate()
        return 1.0 - miss

    def _children(self):
        return tuple((f"{const}:", branch) for const, branch in self.branches)

    def _head(self, precision):
        return (
            f"step5 separator {self.separator} over {len(self.branches)} constants: "
            f"{self.query_text}{self._prob_text(precision)}"
        )


@dataclass(frozen=True)
class LiftResult:
    probability: float
    plan: PlanNode

    def explain(self, precision: int = 6) -> str:
        return self.plan.render(precision)


@dataclass(frozen=True)
class SafetyVerdict:
    safe: bool
    plan: Optional[PlanNode] = None
    blocking: Optional[UCQ] = None

    def __bool__(self):
        return self.safe

    def __str__(self):
        if self.safe:
            return "SAFE"
        return f"UNSAFE: {format_ucq(self.blocking)}"


# ---------------------------------------------------------------------------
# Engine

_EVALUATE = "evaluate"
_CLASSIFY = "classify"


def _unit_signatures(atoms, table):
    by_root = {}
    for atom in atoms:
        sig = atom_signature(atom, table)
        by_root.setdefault(sig[0], []).append(sig)
    return by_root


def _units_dependent(sigs1, sigs2) -> bool:
    """Units share a dependency iff some pair of their atoms can co-ground."""
    for root, group1 in sigs1.items():
        group2 = sigs2.get(root)
        if not group2:
            continue
        for s1 in group1:
            for s2 in group2:
                if signatures_compatible(s1, s2):
                    return True
    return False


def _cluster_dependent(units, table, atoms_of):
    """Group units transitively by probabilistic dependence (same root
    predicate with potentially overlapping ground instances), preserving
    first-occurrence order."""
    sigs = [_unit_signatures(atoms_of(u), table) for u in units]
    groups = []  # list of [unit indices]
    for i in range(len(units)):
        merged = None
        keep = []
        for gidx in groups:
            if any(_units_dependent(sigs[i], sigs[j]) for j in gidx):
                merged = gidx + [i] if merged is None else merged + gidx
            else:
                keep.append(gidx)
        keep.append([i] if merged is None else merged)
        groups = keep
    groups.sort(key=min)
    return [[units[i] for i in sorted(gidx)] for gidx in groups]


def _normalize_names(q: UCQ, table: ShatterTable) -> UCQ:
    """Give atoms whose derived predicates resolve to the same signature one
    shared name (the lexicographically smallest in the query), so that
    canonical dedup and absorption recognize them as the same tuple set."""
    best = {}
    for atom in q.atoms():
        sig = table.resolve(atom.predicate)
        if sig[1] is None:
            continue
        cur = best.get(sig)
        if cur is None or atom.predicate < cur:
            best[sig] = atom.predicate
    if not best:
        return q

    def rename(atom):
        name = best.get(table.resolve(atom.predicate), atom.predicate)
        return atom if name == atom.predicate else Atom(name, atom.args)

    return UCQ(tuple(CQ(tuple(rename(a) for a in cq.atoms)) for cq in q.disjuncts))


def _absorb_disjuncts(q: UCQ) -> UCQ:
    """Drop disjuncts implied by another disjunct (their atom set is a
    superset of the other's, after canonical renaming): D or (D and extra)
    is D. Expects and preserves canonical form."""
    sets = [frozenset(cq.atoms) for cq in q.disjuncts]
    keep = []
    for i, cq in enumerate(q.disjuncts):
        if any(sets[j] < sets[i] for j in range(len(sets)) if j != i):
            continue
        if any(sets[j] == sets[i] for j in range(i)):
            continue
        keep.append(cq)
    if len(keep) == len(q.disjuncts):
        return q
    return UCQ(tuple(keep))


def _absorb_conjuncts(conjuncts) -> list:
    """Drop conjuncts implied by another conjunct (their canonical disjunct
    set is a superset of the other's): D and (D or extra) is D."""
    sets = [frozenset(canonicalize(u).disjuncts) for u in conjuncts]
    keep = []
    for i, unit in enumerate(conjuncts):
        if any(sets[j] < sets[i] for j in range(len(sets)) if j != i):
            continue
        if any(sets[j] == sets[i] for j in range(i)):
            continue
        keep.append(unit)
    return keep


def _ground_unary_constants(atoms, table, grounds=None) -> dict:
    """Constants fixed by fully-ground atoms over unary root predicates."""
    grounds = {root: set(consts) for root, consts in (grounds or {}).items()}
    for atom in atoms:
        root, root_arity, spec, _excl = table.resolve(atom.predicate)
        if root_arity is None:
            root_arity = atom.arity
        if atom.arity == 0 and root_arity == 1 and spec:
            grounds.setdefault(root, set()).add(spec[0][1])
    return grounds


def _expand_unary_mixing(q: UCQ, table: ShatterTable, context_grounds=None):
    """Partition quantified unary atoms away from ground atoms of the same
    root: with C the ground constants, a disjunct D containing U(x) becomes
    D[x/c] for each c in C plus D with U(x) replaced by U-excluding-C.

    Exact: the branches cover exactly the groundings of x in C and outside
    it. Returns (q', table') or None when nothing is mixed.
    """
    changed = False
    while True:
        grounds = _ground_unary_constants(q.atoms(), table, context_grounds)
        target = None
        for cq in q.disjuncts:
            for atom in cq.atoms:
                if atom.arity != 1 or not isinstance(atom.args[0], Variable):
                    continue
                root, root_arity, _spec, excl = table.resolve(atom.predicate)
                if root_arity not in (None, 1):
                    continue
                banned = set(dict(excl).get(0, ()))
                missing = sorted(grounds.get(root, set()) - banned)
                if missing:
                    target = (atom.predicate, tuple(missing))
                    break
            if target:
                break
        if target is None:
            break
        changed = True
        name, missing = target
        rest_name, table = restricted_name(q, table, name, missing)
        new_disjuncts = []
        for cq in q.disjuncts:
            xs = [
                a.args[0].name
                for a in cq.atoms
                if a.predicate == name and a.arity == 1 and isinstance(a.args[0], Variable)
            ]
            if not xs:
                new_disjuncts.append(cq)
                continue
            x = xs[0]  # one variable per round; the loop picks up the rest
            for c in missing:
                new_disjuncts.append(_substitute_cq(cq, x, c))
            new_disjuncts.append(
                CQ(
                    tuple(
                        Atom(rest_name, a.args)
                        if a.predicate == name and a.args == (Variable(x),)
                        else a
                        for a in cq.atoms
                    )
                )
            )
        q, table = shatter(make_ucq(new_disjuncts), table, check=False)
    if not changed:
        return None
    return q, table


class _Engine:
    def __init__(self, db: Optional[ProbDatabase], mode: str, memo: Optional[dict]):
        self.db = db
        self.mode = mode
        self.memo = memo if memo is not None else {}
        self._fresh = 0

    # -- helpers

    def _key(self, q: UCQ, table: ShatterTable):
        return tuple(
            tuple(
                (
                    table.resolve(a.predicate),
                    tuple(t.name for t in a.args),
                )
                for a in cq.atoms
            )
            for cq in q.disjuncts
        )

    def _fresh_constant(self, table: ShatterTable) -> str:
        taken = table.constants()
        while True:
            name = f"K{self._fresh}"
            self._fresh += 1
            if name not in taken:
                return name

    # -- recursion

    def eval(self, q: UCQ, table: ShatterTable):
        q = _absorb_disjuncts(canonicalize(_normalize_names(q, table)))
        key = self._key(q, table)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        result = self._eval(q, table)
        self.memo[key] = result
        return result

    def _eval(self, q: UCQ, table: ShatterTable):
        text = format_ucq(q)

        # step 0: a single ground atom is a tuple lookup
        if len(q.disjuncts) == 1 and len(q.disjuncts[0].atoms) == 1:
            atom = q.disjuncts[0].atoms[0]
            if atom.is_ground():
                if self.mode == _CLASSIFY:
                    return None, Step0Plan(0, text, None, text)
                base = table.base_ground_atom(atom)
                p = 0.0 if base is None else tuple_prob(self.db, base)
                base_text = text if base is None else format_atom(base)
                return p, Step0Plan(0, text, p, base_text)

        # step 1: rewrite into a conjunction of UCQs
        conjuncts = rewrite_as_conjunction(q)
        if len(conjuncts) > 1:
            return self._conjunction(q, text, conjuncts, table)
        if conjuncts[0] != q:
            # the decomposition collapsed to one conjunct (idempotence)
            return self.eval(conjuncts[0], table)

        # preprocessing invariant: quantified unary atoms must not overlap
        # ground atoms of their own root predicate
        expanded = _expand_unary_mixing(q, table)
        if expanded is not None:
            return self.eval(*expanded)

        # step 4: independent split of the union
        if len(q.disjuncts) > 1:
            clusters = _cluster_dependent(list(q.disjuncts), table, lambda cq: cq.atoms)
            if len(clusters) > 1:
                probs, plans = [], []
                for cluster in clusters:
                    p, plan = self.eval(make_ucq(cluster), table)
                    probs.append(p)
                    plans.append(plan)
                prob = None
                if self.mode == _EVALUATE:
                    miss = 1.0
                    for p in probs:
                        miss *= 1.0 - p
                    prob = 1.0 - miss
                return prob, Step4Plan(4, text, prob, tuple(plans))

        # step 5: separator variable
        separator = find_separator(q, table)
        if separator is not None:
            branches = []
            if self.mode == _CLASSIFY:
                # one representative fresh constant, plus the constants the
                # query itself mentions: their branches can differ in shape
                constants = [self._fresh_constant(table)] + sorted(table.constants())
            else:
                constants = self.db.vocabulary.domain
            miss = 1.0
            for const in constants:
                substituted = UCQ(
                    tuple(
                        _substitute_cq(cq, var, const)
                        for cq, var in zip(q.disjuncts, separator.per_disjunct)
                    )
                )
                sub_q, sub_table = shatter(substituted, table, check=False)
                p, plan = self.eval(sub_q, sub_table)
                branches.append((const, plan))
                if self.mode == _EVALUATE:
                    miss *= 1.0 - p
            prob = None if self.mode == _CLASSIFY else 1.0 - miss
            return prob, Step5Plan(5, text, prob, str(separator), tuple(branches))

        # step 6: fail
        raise UnsafeQueryError(q)

    def _conjunction(self, q: UCQ, text: str, conjuncts, table: ShatterTable):
        # resolve unary mixing against the ground constants of the whole
        # conjunction, so equal branches cancel in the inclusion-exclusion
        grounds = _ground_unary_constants(
            [a for u in conjuncts for a in u.atoms()], table, None
        )
        prepared = []
        seen = set()
        for unit in conjuncts:
            expanded = _expand_unary_mixing(unit, table, grounds)
            if expanded is not None:
                unit, table = expanded
            unit = _absorb_disjuncts(canonicalize(unit))
            if unit not in seen:
                seen.add(unit)
                prepared.append(unit)
        conjuncts = _absorb_conjuncts(prepared)
        if len(conjuncts) == 1:
            return self.eval(conjuncts[0], table)
        clusters = _cluster_dependent(conjuncts, table, lambda u: u.atoms())
        if len(clusters) > 1:
            # step 2
            probs, plans = [], []
            for cluster in clusters:
                if len(cluster) == 1:
                    p, plan = self.eval(cluster[0], table)
                else:
                    p, plan = self._inclusion_exclusion(cluster, table)
                probs.append(p)
                plans.append(plan)
            prob = None
            if self.mode == _EVALUATE:
                prob = 1.0
                for p in probs:
                    prob *= p
            return prob, Step2Plan(2, text, prob, tuple(plans))
        return self._inclusion_exclusion(conjuncts, table, text)

    def _inclusion_exclusion(self, conjuncts, table: ShatterTable, text: Optional[str] = None):
        # step 3, cancelling terms with equal canonical forms first
        if text is None:
            text = " ^ ".join(f"({format_ucq(c)})" for c in conjuncts)
        m = len(conjuncts)
        if m > 20:
            raise UnsupportedQueryError(
                f"inclusion-exclusion over {m} mutually dependent conjuncts "
                "exceeds the engine's desk-scale limits"
            )
        aggregated = {}
        for size in range(1, m + 1):
            sign = 1 if size % 2 == 1 else -1
            for subset in itertools.combinations(range(m), size):
                union = _absorb_disjuncts(
                    canonicalize(
                        UCQ(tuple(cq for i in subset for cq in conjuncts[i].disjuncts))
                    )
                )
                aggregated[union] = aggregated.get(union, 0) + sign
        prob = None if self.mode == _CLASSIFY else 0.0
        terms = []
        for union, coeff in aggregated.items():
            if coeff == 0:
                continue
            p, plan = self.eval(union, table)
            terms.append((coeff, plan))
            if self.mode == _EVALUATE:
                prob += coeff * p
        return prob, Step3Plan(3, text, prob, tuple(terms))


# ---------------------------------------------------------------------------
# Public entry points


def _require_shattered(q: UCQ):
    consts = q.constants()
    if consts:
        raise UnsupportedQueryError(
            f"query contains unshattered constants {consts}; apply logic.shatter first"
        )


def lift(
    q: UCQ,
    db: ProbDatabase,
    table: Optional[ShatterTable] = None,
    memo: Optional[dict] = None,
) -> LiftResult:
    """Exact probability of a shattered Boolean UCQ over a tuple-independent
    database.

    `table` maps specialized predicates back to the database's own predicates
    (pass the table returned by logic.shatter, or none when the database was
    relocated with pdb.shatter_database). `memo` may be shared across calls
    that use the same database to reuse sub-results; it must not be shared
    across databases.

    Raises UnsafeQueryError when the recursion reaches the failure step.
    """
    q = _as_boolean(q)
    _require_shattered(q)
    engine = _Engine(db, _EVALUATE, memo)
    prob, plan = engine.eval(q, table or ShatterTable())
    return LiftResult(prob, plan)


def classify(
    q: UCQ,
    vocab: Optional[Vocabulary] = None,
    table: Optional[ShatterTable] = None,
) -> SafetyVerdict:
    """Run the recursion symbolically, without looking at any data.

    Safe iff the failure step is unreachable; the verdict carries either the
    plan skeleton or the blocking subquery. Without a shatter table the
    query's predicates are taken at face value (the standard reading of a
    shattered query); with one, derived predicates resolve to their roots and
    the symbolic execution mirrors what lift() would do exactly.
    """
    q = _as_boolean(q)
    _require_shattered(q)
    if vocab is not None:
        for name, arity in sorted({(a.predicate, a.arity) for a in q.atoms()}):
            known = vocab.arity(name)
            if known is not None and known != arity:
                raise DataError(
                    f"predicate {name!r} used with arity {arity}, vocabulary says {known}"
                )
    engine = _Engine(None, _CLASSIFY, None)
    try:
        _prob, plan = engine.eval(q, table or ShatterTable())
    except UnsafeQueryError as exc:
        return SafetyVerdict(False, None, exc.blocking)
    return SafetyVerdict(True, plan, None)


def evaluate_query(db: ProbDatabase, q: UCQ, memo: Optional[dict] = None) -> LiftResult:
    """Convenience pipeline: extend the domain with the query's constants,
    shatter, and lift against the original database."""
    q = _as_boolean(q)
    db = db.with_constants(q.constants())
    shattered, table = shatter(q)
    return lift(shattered, db, table, memo=memo)
