"""Factorized embedding model over the probabilistic-database semantics.

A model with d components keeps one Bernoulli table over entities and one
over relations per component; a binary fact R(h,t) holds in component i
exactly when the component's entity variables for h and t and its relation
variable for R all hold, so its component probability is the rank-1 product,
and the model probability of any Boolean query is the average over the d
components. Rewriting every binary atom through that definition leaves only
unary and 0-ary atoms, for which the lifted-inference recursion never fails,
so every UCQ is answered in time linear in the domain.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DataError, UnsupportedQueryError
from .lift import lift
from .logic import (
    Atom,
    CQ,
    Constant,
    QueryTemplate,
    UCQ,
    format_atom,
    shatter,
)
from .pdb import ProbDatabase, Vocabulary

__all__ = [
    "UNCONSTRAINED",
    "SQUARED_POSITIVE",
    "MODES",
    "TractorModel",
    "TractorEvaluator",
    "ENTITY_PREDICATE",
    "relation_marker",
    "component_triple_prob",
    "triple_prob",
    "distmult_score",
    "rewrite_unary",
    "query_prob",
    "answer_template",
    "MappingFn",
    "MAPPINGS",
    "sigmoid",
    "score_to_prob",
    "clamp_unit",
    "save_model",
    "load_model",
    "dumps_model",
    "loads_model",
]

UNCONSTRAINED = "neg"  # raw values used as-is; they may leave [0, 1]
SQUARED_POSITIVE = "pos"  # raw parameters are squared, so values are >= 0
MODES = (UNCONSTRAINED, SQUARED_POSITIVE)

# one embedding = the length-d column of values for one entity or relation
Embedding = np.ndarray

ENTITY_PREDICATE = "E"


def relation_marker(relation: str) -> str:
    """0-ary predicate carrying the per-relation variable."""
    return f"T_{relation}"


class TractorModel:
    """d-component mixture of rank-1 factorizations. Immutable at inference
    time; training builds a fresh instance."""

    def __init__(self, entities, relations, entity_raw, relation_raw,
                 mode=UNCONSTRAINED, relation_bias=None):
        self.entities = tuple(entities)
        self.relations = tuple(relations)
        if len(set(self.entities)) != len(self.entities):
            raise DataError("entity names must be unique")
        if len(set(self.relations)) != len(self.relations):
            raise DataError("relation names must be unique")
        self.entity_raw = np.asarray(entity_raw, dtype=np.float64)
        self.relation_raw = np.asarray(relation_raw, dtype=np.float64)
        if self.entity_raw.ndim != 2 or self.entity_raw.shape[1] != len(self.entities):
            raise DataError("entity table must be d x |entities|")
        if self.relation_raw.shape != (self.entity_raw.shape[0], len(self.relations)):
            raise DataError("relation table must be d x |relations|")
        if self.entity_raw.shape[0] < 1:
            raise DataError("at least one mixture component is required")
        if mode not in MODES:
            raise DataError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        if relation_bias is None:
            relation_bias = np.zeros(len(self.relations))
        self.relation_bias = np.asarray(relation_bias, dtype=np.float64)
        if self.relation_bias.shape != (len(self.relations),):
            raise DataError("bias must hold one value per relation")
        if np.any((self.relation_bias < 0.0) | (self.relation_bias > 1.0)):
            raise DataError("bias values must lie in [0, 1]")
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        self._component_dbs = [None] * self.d

    @property
    def d(self) -> int:
        return self.entity_raw.shape[0]

    @property
    def entity_values(self) -> np.ndarray:
        if self.mode == SQUARED_POSITIVE:
            return self.entity_raw**2
        return self.entity_raw

    @property
    def relation_values(self) -> np.ndarray:
        if self.mode == SQUARED_POSITIVE:
            return self.relation_raw**2
        return self.relation_raw

    def entity_embedding(self, entity: str) -> np.ndarray:
        return self.entity_values[:, self._entity(entity)].copy()

    def relation_embedding(self, relation: str) -> np.ndarray:
        return self.relation_values[:, self._relation(relation)].copy()

    def bias(self, relation: str) -> float:
        return float(self.relation_bias[self._relation(relation)])

    def _entity(self, entity: str) -> int:
        try:
            return self.entity_index[entity]
        except KeyError:
            raise DataError(f"unknown entity {entity!r}") from None

    def _relation(self, relation: str) -> int:
        try:
            return self.relation_index[relation]
        except KeyError:
            raise DataError(f"unknown relation {relation!r}") from None

    def component_database(self, i: int) -> ProbDatabase:
        """The component's unary/0-ary tables as a probabilistic database."""
        if not 0 <= i < self.d:
            raise DataError(f"component index {i} outside 0..{self.d - 1}")
        if self._component_dbs[i] is None:
            ev = self.entity_values[i]
            rv = self.relation_values[i]
            tuples = {
                Atom(ENTITY_PREDICATE, (Constant(e),)): float(ev[j])
                for j, e in enumerate(self.entities)
            }
            for j, r in enumerate(self.relations):
                tuples[Atom(relation_marker(r))] = float(rv[j])
            vocab = Vocabulary(
                ((ENTITY_PREDICATE, 1),)
                + tuple((relation_marker(r), 0) for r in self.relations),
                self.entities,
            )
            self._component_dbs[i] = ProbDatabase(vocab, tuples, formal=True)
        return self._component_dbs[i]


# ---------------------------------------------------------------------------
# Triple scoring


def component_triple_prob(model: TractorModel, i: int, head: str, relation: str, tail: str) -> float:
    """Rank-1 component probability: E_i(head) * T_i(relation) * E_i(tail).

    `i` is a 0-based component index.
    """
    if not 0 <= i < model.d:
        raise DataError(f"component index {i} outside 0..{model.d - 1}")
    h = model._entity(head)
    r = model._relation(relation)
    t = model._entity(tail)
    ev, rv = model.entity_values, model.relation_values
    return float(ev[i, h] * rv[i, r] * ev[i, t])


def _mixture_mean(model: TractorModel, head: str, relation: str, tail: str) -> float:
    h = model._entity(head)
    r = model._relation(relation)
    t = model._entity(tail)
    ev, rv = model.entity_values, model.relation_values
    return float(np.sum(ev[:, h] * rv[:, r] * ev[:, t])) / model.d


def triple_prob(model: TractorModel, head: str, relation: str, tail: str) -> float:
    """Average of the component probabilities, then the disjunctive
    per-relation bias folded in as noisy-or (bias 0 is the identity)."""
    p = _mixture_mean(model, head, relation, tail)
    b = model.bias(relation)
    if b == 0.0:
        return p
    return 1.0 - (1.0 - p) * (1.0 - b)


def distmult_score(v_head, v_relation, v_tail) -> float:
    """Trilinear dot product of three equal-length embedding vectors."""
    vh = np.asarray(v_head, dtype=np.float64)
    vr = np.asarray(v_relation, dtype=np.float64)
    vt = np.asarray(v_tail, dtype=np.float64)
    if not (vh.shape == vr.shape == vt.shape) or vh.ndim != 1:
        raise DataError("embedding lengths must match")
    return float(np.sum(vh * vr * vt))


# ---------------------------------------------------------------------------
# Score-to-probability mappings


@dataclass(frozen=True)
class MappingFn:
    """A named monotone map from scores to [0, 1]."""

    name: str
    fn: Callable[[float], float]

    def __call__(self, score: float) -> float:
        return self.fn(score)


def sigmoid(score: float) -> float:
    if score >= 0:
        return 1.0 / (1.0 + math.exp(-score))
    e = math.exp(score)
    return e / (1.0 + e)


MAPPINGS = {"sigmoid": MappingFn("sigmoid", sigmoid)}


def score_to_prob(g: Union[MappingFn, str, Callable[[float], float]], score: float) -> float:
    if isinstance(g, str):
        try:
            g = MAPPINGS[g]
        except KeyError:
            raise DataError(f"unknown mapping {g!r}; known: {sorted(MAPPINGS)}") from None
    return float(g(score))


# ---------------------------------------------------------------------------
# Query evaluation


def _registered(model_or_relations) -> set:
    if isinstance(model_or_relations, TractorModel):
        return set(model_or_relations.relations)
    return set(model_or_relations)


def rewrite_unary(q: UCQ, model_or_relations, table=None) -> UCQ:
    """Replace every binary atom R(s,t) of a registered relation by
    E(s) AND T_R() AND E(t); duplicate atoms produced by the rewrite are
    merged. Unary atoms over external predicates pass through unchanged.

    `table` lets atoms that were already shattered from a registered relation
    (for example R_A(x)) be recognized and rewritten with their constants
    re-inserted. Constants in the output are legitimate: E(c) is a ground
    unary atom, to be shattered before lifting.
    """
    relations = _registered(model_or_relations)
    reserved = {ENTITY_PREDICATE} | {relation_marker(r) for r in relations}

    def expand(atom: Atom):
        if atom.predicate in relations:
            if atom.arity != 2:
                raise DataError(
                    f"relation {atom.predicate!r} must be used as a binary atom, got {format_atom(atom)}"
                )
            head, tail = atom.args
            return [
                Atom(ENTITY_PREDICATE, (head,)),
                Atom(relation_marker(atom.predicate)),
                Atom(ENTITY_PREDICATE, (tail,)),
            ]
        if table is not None and atom.predicate in table:
            root, _arity, spec, excl = table.resolve(atom.predicate)
            if root in relations:
                if excl:
                    raise UnsupportedQueryError(
                        f"cannot rewrite domain-restricted atom {format_atom(atom)}"
                    )
                positions = dict(spec)
                args, it = [], iter(atom.args)
                for pos in range(2):
                    args.append(Constant(positions[pos]) if pos in positions else next(it))
                return expand(Atom(root, tuple(args)))
        if atom.predicate in reserved:
            raise UnsupportedQueryError(
                f"predicate name {atom.predicate!r} is reserved by the rewrite"
            )
        if atom.arity == 2:
            raise DataError(f"unregistered binary predicate {atom.predicate!r}")
        return [atom]

    new_disjuncts = []
    for cq in q.disjuncts:
        out, seen = [], set()
        for atom in cq.atoms:
            for replacement in expand(atom):
                if replacement not in seen:
                    seen.add(replacement)
                    out.append(replacement)
        new_disjuncts.append(CQ(tuple(out)))
    return UCQ(tuple(new_disjuncts))


def query_prob(model: TractorModel, q: UCQ, memos: Optional[list] = None) -> float:
    """Probability of a Boolean UCQ over registered binary relations: the
    average over components of the lifted evaluation of the unary rewrite.

    The rewrite makes the failure step of the recursion unreachable; hitting
    it anyway would be an internal invariant violation, not a user error.
    """
    rewritten = rewrite_unary(q, model)
    shattered, table = shatter(rewritten)
    total = 0.0
    for i in range(model.d):
        memo = memos[i] if memos is not None else None
        try:
            result = lift(shattered, model.component_database(i), table, memo=memo)
        except Exception as exc:  # noqa: BLE001 - re-tag as invariant violation
            from .errors import UnsafeQueryError

            if isinstance(exc, UnsafeQueryError):
                raise AssertionError(
                    f"unary rewrite reached the failure step on {shattered}; "
                    "this violates the safety guarantee"
                ) from exc
            raise
        total += result.probability
    return total / model.d


class TractorEvaluator:
    """Reusable evaluation session: shares per-component memo tables across
    queries against the same model, which makes ranking many candidates of
    one template cheap."""

    def __init__(self, model: TractorModel):
        self.model = model
        self._memos = [dict() for _ in range(model.d)]

    def probability(self, q: UCQ) -> float:
        return query_prob(self.model, q, memos=self._memos)

    def rank(self, template: QueryTemplate, candidates: Sequence[str]) -> list:
        return answer_template(self.model, template, candidates, evaluator=self)


def answer_template(
    model: TractorModel,
    template: QueryTemplate,
    candidates: Sequence[str],
    evaluator: Optional[TractorEvaluator] = None,
) -> list:
    """Score every candidate binding of the template's free variable and
    return (entity, probability) pairs in descending order; ties break by
    the model's entity order, so the ranking is deterministic."""
    candidates = list(candidates)
    if not candidates:
        raise DataError("candidate list must not be empty")
    for c in candidates:
        model._entity(c)
    ev = evaluator or TractorEvaluator(model)
    scored = [(c, ev.probability(template.instantiate(c))) for c in candidates]
    scored.sort(key=lambda pair: (-pair[1], model.entity_index[pair[0]]))
    return scored


def clamp_unit(model: TractorModel) -> TractorModel:
    """Clamp a squared-positive model's values to at most 1 (raw parameters
    to [-1, 1]); with values in [0, 1] every query probability is too."""
    if model.mode != SQUARED_POSITIVE:
        raise DataError("clamp_unit applies to squared-positive models")
    return TractorModel(
        model.entities,
        model.relations,
        np.clip(model.entity_raw, -1.0, 1.0),
        np.clip(model.relation_raw, -1.0, 1.0),
        mode=model.mode,
        relation_bias=model.relation_bias,
    )


# ---------------------------------------------------------------------------
# Model file format (versioned JSON; raw parameters, full float precision)

_FORMAT = "tractor-model"
_VERSION = 1


def dumps_model(model: TractorModel) -> str:
    doc = {
        "format": _FORMAT,
        "version": _VERSION,
        "mode": model.mode,
        "d": model.d,
        "entities": list(model.entities),
        "relations": list(model.relations),
        "E": [list(map(float, row)) for row in model.entity_raw],
        "T": [list(map(float, row)) for row in model.relation_raw],
        "bias": list(map(float, model.relation_bias)),
    }
    return json.dumps(doc, indent=1)


def save_model(model: TractorModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))


def loads_model(text: str) -> TractorModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != _FORMAT:
        raise DataError(f"not a {_FORMAT} document")
    if doc.get("version") != _VERSION:
        raise DataError(f"unsupported model version {doc.get('version')!r}")
    try:
        model = TractorModel(
            doc["entities"],
            doc["relations"],
            doc["E"],
            doc["T"],
            mode=doc["mode"],
            relation_bias=doc.get("bias"),
        )
    except KeyError as exc:
        raise DataError(f"model file missing field {exc}") from exc
    if model.d != doc.get("d"):
        raise DataError("model file d does not match table shape")
    return model


def load_model(path) -> TractorModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return loads_model(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
