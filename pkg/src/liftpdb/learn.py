"""Knowledge-base ingestion, desk-scale max-margin training with Adam,
query-set generation by edge walking, and ranking metrics (AUC / APR).

Training operates on the trilinear scores (d times the mixture mean, bias
excluded), so the unconstrained model learns exactly what a same-shaped
DistMult scorer would.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field as dataclasses_field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DataError, TrainingDivergedError
from .logic import Constant, QueryTemplate
from .templates import ANSWER_VARS, instantiate, template
from .tractor import (
    MODES,
    SQUARED_POSITIVE,
    UNCONSTRAINED,
    TractorEvaluator,
    TractorModel,
)

LOG = logging.getLogger(__name__)

__all__ = [
    "KnowledgeBase",
    "TrainConfig",
    "AdamState",
    "EvalQuery",
    "EvalQuerySet",
    "RankingReport",
    "TemplateMetrics",
    "load_triples",
    "loads_triples",
    "save_triples",
    "split",
    "negative_sample",
    "loss_and_grads",
    "adam_step",
    "train",
    "generate_queries",
    "save_query_set",
    "load_query_set",
    "loads_query_set",
    "auc",
    "percentile_rank",
    "apr",
    "evaluate_query_set",
    "link_prediction_auc",
    "planted_kb",
]


# ---------------------------------------------------------------------------
# Knowledge base


@dataclass(frozen=True, eq=False)
class KnowledgeBase:
    """Deduplicated (head, relation, tail) triples with deterministic
    first-appearance entity and relation ordering."""

    triples: tuple
    entities: tuple
    relations: tuple

    def __post_init__(self):
        object.__setattr__(self, "_set", frozenset(self.triples))

    @classmethod
    def from_triples(cls, triples: Iterable, entities=None, relations=None) -> "KnowledgeBase":
        seen = set()
        kept = []
        ent_order = dict.fromkeys(entities or ())
        rel_order = dict.fromkeys(relations or ())
        for h, r, t in triples:
            triple = (h, r, t)
            if triple in seen:
                continue
            seen.add(triple)
            kept.append(triple)
            ent_order.setdefault(h)
            rel_order.setdefault(r)
            ent_order.setdefault(t)
        return cls(tuple(kept), tuple(ent_order), tuple(rel_order))

    @property
    def triple_set(self) -> frozenset:
        return self._set

    def __len__(self):
        return len(self.triples)

    def __contains__(self, triple):
        return triple in self._set

    def __eq__(self, other):
        return (
            isinstance(other, KnowledgeBase)
            and self.triples == other.triples
            and self.entities == other.entities
            and self.relations == other.relations
        )


def loads_triples(text: str) -> KnowledgeBase:
    triples = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not all(p.strip() for p in parts):
            raise DataError(f"line {lineno}: expected head<TAB>relation<TAB>tail")
        h, r, t = (p.strip() for p in parts)
        triples.append((h, r, t))
    return KnowledgeBase.from_triples(triples)


def load_triples(path) -> KnowledgeBase:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return loads_triples(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def save_triples(kb: KnowledgeBase, path):
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in kb.triples:
            fh.write(f"{h}\t{r}\t{t}\n")


def split(kb: KnowledgeBase, test_fraction: float, seed: int):
    """Disjoint train/test split of the triples; both halves keep the full
    entity/relation universe so models can cover held-out edges."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must be strictly between 0 and 1")
    rng = random.Random(seed)
    indices = list(range(len(kb.triples)))
    rng.shuffle(indices)
    n_test = round(len(indices) * test_fraction)
    test_idx = set(indices[:n_test])
    train = [t for i, t in enumerate(kb.triples) if i not in test_idx]
    test = [t for i, t in enumerate(kb.triples) if i in test_idx]
    return (
        KnowledgeBase.from_triples(train, kb.entities, kb.relations),
        KnowledgeBase.from_triples(test, kb.entities, kb.relations),
    )


_NEGATIVE_ATTEMPT_CAP = 100_000


def negative_sample(kb: KnowledgeBase, triple, k: int, seed: int) -> list:
    """k corruptions of the triple: replace head or tail (uniform coin) with a
    uniform random entity, rejecting anything present in the knowledge base."""
    if k < 1:
        raise DataError("k must be at least 1")
    rng = random.Random(seed)
    h, r, t = triple
    out = []
    attempts = 0
    while len(out) < k:
        attempts += 1
        if attempts > _NEGATIVE_ATTEMPT_CAP:
            raise DataError(
                f"could not find {k} negatives for {triple} in {_NEGATIVE_ATTEMPT_CAP} attempts"
            )
        e = kb.entities[rng.randrange(len(kb.entities))]
        corrupted = (e, r, t) if rng.random() < 0.5 else (h, r, e)
        if corrupted in kb.triple_set:
            continue
        out.append(corrupted)
    return out


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    d: int = 128
    margin: float = 1.0
    negatives_per_positive: int = 2
    batch_size: int = 256
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 50
    seed: int = 0
    mode: str = UNCONSTRAINED

    def __post_init__(self):
        for name in ("d", "negatives_per_positive", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be positive")
        for name in ("margin", "learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")
        if self.mode not in MODES:
            raise DataError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
            0,
        )


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; pure, returns fresh arrays."""
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for key, p in params.items():
        g = grads[key]
        m = b1 * state.m[key] + (1.0 - b1) * g
        v = b2 * state.v[key] + (1.0 - b2) * g**2
        m_hat = m / (1.0 - b1**step)
        v_hat = v / (1.0 - b2**step)
        new_params[key] = p - config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        new_m[key] = m
        new_v[key] = v
    return new_params, AdamState(new_m, new_v, step)


def _effective(raw: np.ndarray, mode: str) -> np.ndarray:
    return raw**2 if mode == SQUARED_POSITIVE else raw


def _pair_loss_and_raw_grads(E_raw, T_raw, mode, pos_idx, neg_idx, margin):
    """Hinge loss over (positive, negative) rows and its gradient with
    respect to the raw parameter tables.

    Scores are trilinear products of the effective tables; at the hinge kink
    the inactive branch's subgradient (zero) is taken.
    """
    E_eff = _effective(E_raw, mode).T  # (n_entities, d)
    T_eff = _effective(T_raw, mode).T  # (n_relations, d)
    ph, pr, pt = pos_idx
    nh, nr, nt = neg_idx
    s_pos = np.sum(E_eff[ph] * T_eff[pr] * E_eff[pt], axis=1)
    s_neg = np.sum(E_eff[nh] * T_eff[nr] * E_eff[nt], axis=1)
    hinge = margin - s_pos + s_neg
    active = hinge > 0.0
    loss = float(hinge[active].sum())
    gE = np.zeros_like(E_eff)
    gT = np.zeros_like(T_eff)
    if active.any():
        for idx, coeff in ((pos_idx, -1.0), (neg_idx, 1.0)):
            h, r, t = (a[active] for a in idx)
            eh, er, et = E_eff[h], T_eff[r], E_eff[t]
            np.add.at(gE, h, coeff * er * et)
            np.add.at(gE, t, coeff * eh * er)
            np.add.at(gT, r, coeff * eh * et)
    gE = gE.T
    gT = gT.T
    if mode == SQUARED_POSITIVE:
        gE = gE * 2.0 * E_raw
        gT = gT * 2.0 * T_raw
    return loss, gE, gT


def _triple_indices(model: TractorModel, triples) -> tuple:
    h = np.array([model.entity_index[x[0]] for x in triples], dtype=np.int64)
    r = np.array([model.relation_index[x[1]] for x in triples], dtype=np.int64)
    t = np.array([model.entity_index[x[2]] for x in triples], dtype=np.int64)
    return h, r, t


def loss_and_grads(model: TractorModel, positives, negatives, margin: float):
    """Max-margin loss over paired rows: positives[i] against negatives[i].

    Returns (loss, grads) with grads shaped like the raw E, T and bias
    tables; the loss ignores the bias, so its gradient is zero.
    """
    positives = list(positives)
    negatives = list(negatives)
    if len(positives) != len(negatives):
        raise DataError("positives and negatives must pair up row by row")
    if not positives:
        raise DataError("need at least one pair")
    pos_idx = _triple_indices(model, positives)
    neg_idx = _triple_indices(model, negatives)
    loss, gE, gT = _pair_loss_and_raw_grads(
        model.entity_raw, model.relation_raw, model.mode, pos_idx, neg_idx, margin
    )
    grads = {"E": gE, "T": gT, "bias": np.zeros_like(model.relation_bias)}
    return loss, grads


def train(
    kb: KnowledgeBase,
    cfg: TrainConfig,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> TractorModel:
    """Seeded max-margin training with negative sampling and Adam.

    Every random draw flows from cfg.seed, so two runs produce identical
    models. Raises TrainingDivergedError when the loss turns non-finite.
    """
    if not kb.triples:
        raise DataError("knowledge base is empty")
    rng = np.random.default_rng(cfg.seed)
    d = cfg.d
    n_ent, n_rel = len(kb.entities), len(kb.relations)
    scale = 0.5 / np.sqrt(d)
    params = {
        "E": rng.uniform(-scale, scale, (d, n_ent)),
        "T": rng.uniform(-scale, scale, (d, n_rel)),
        "bias": np.zeros(n_rel),
    }
    state = AdamState.for_params(params)
    ent_index = {e: i for i, e in enumerate(kb.entities)}
    rel_index = {r: i for i, r in enumerate(kb.relations)}
    h_all = np.array([ent_index[h] for h, _r, _t in kb.triples], dtype=np.int64)
    r_all = np.array([rel_index[r] for _h, r, _t in kb.triples], dtype=np.int64)
    t_all = np.array([ent_index[t] for _h, _r, t in kb.triples], dtype=np.int64)
    id_set = {(int(a), int(b), int(c)) for a, b, c in zip(h_all, r_all, t_all)}
    k = cfg.negatives_per_positive
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(kb.triples))
        epoch_loss = 0.0
        for start in range(0, len(perm), cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            h, r, t = h_all[sel], r_all[sel], t_all[sel]
            nh, nr, nt = _corrupt_ids(rng, h, r, t, n_ent, id_set, k)
            pos_idx = (np.repeat(h, k), np.repeat(r, k), np.repeat(t, k))
            loss, gE, gT = _pair_loss_and_raw_grads(
                params["E"], params["T"], cfg.mode, pos_idx, (nh, nr, nt), cfg.margin
            )
            epoch_loss += loss
            grads = {"E": gE, "T": gT, "bias": np.zeros(n_rel)}
            params, state = adam_step(params, grads, state, cfg)
        finite = (
            np.isfinite(epoch_loss)
            and np.isfinite(params["E"]).all()
            and np.isfinite(params["T"]).all()
        )
        if not finite:
            raise TrainingDivergedError(
                f"training diverged at epoch {epoch} (non-finite loss or parameters); "
                "try a lower learning rate"
            )
        LOG.info("epoch %d loss %.6f", epoch, epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
    return TractorModel(
        kb.entities, kb.relations, params["E"], params["T"], mode=cfg.mode, relation_bias=params["bias"]
    )


def _corrupt_ids(rng, h, r, t, n_entities, id_set, k):
    """Head-or-tail corruption on index arrays, rejecting known triples."""
    ch = np.repeat(h, k).copy()
    cr = np.repeat(r, k).copy()
    ct = np.repeat(t, k).copy()
    replace_head = rng.random(len(ch)) < 0.5
    pending = np.arange(len(ch))
    for _round in range(100):
        if len(pending) == 0:
            return ch, cr, ct
        drawn = rng.integers(0, n_entities, len(pending))
        mask = replace_head[pending]
        ch[pending] = np.where(mask, drawn, ch[pending])
        ct[pending] = np.where(mask, ct[pending], drawn)
        pending = np.array(
            [i for i in pending if (int(ch[i]), int(cr[i]), int(ct[i])) in id_set],
            dtype=np.int64,
        )
    raise DataError("could not corrupt a batch without hitting known triples")


# ---------------------------------------------------------------------------
# Query-set generation


@dataclass(frozen=True)
class EvalQuery:
    template_id: str
    query: QueryTemplate
    answer: str
    negatives: tuple
    # ground edges the sampler walked; in-memory metadata for checkers, not
    # part of the file format or of equality
    edges: tuple = dataclasses_field(default=(), compare=False)


@dataclass(frozen=True)
class EvalQuerySet:
    entries: tuple

    def __len__(self):
        return len(self.entries)


class _EdgeIndex:
    def __init__(self, triples):
        self.all = list(triples)
        self.by_rel = {}
        self.by_rel_head = {}
        self.by_rel_tail = {}
        self.by_head = {}
        self.by_tail = {}
        for e in self.all:
            h, r, t = e
            self.by_rel.setdefault(r, []).append(e)
            self.by_rel_head.setdefault((r, h), []).append(e)
            self.by_rel_tail.setdefault((r, t), []).append(e)
            self.by_head.setdefault(h, []).append(e)
            self.by_tail.setdefault(t, []).append(e)

    def candidates(self, rel, head, tail):
        if rel is not None and head is not None:
            return [e for e in self.by_rel_head.get((rel, head), []) if tail in (None, e[2])]
        if rel is not None and tail is not None:
            return self.by_rel_tail.get((rel, tail), [])
        if rel is not None:
            return self.by_rel.get(rel, [])
        if head is not None:
            return [e for e in self.by_head.get(head, []) if tail in (None, e[2])]
        if tail is not None:
            return self.by_tail.get(tail, [])
        return self.all


def _bind_atom(binding, atom, edge):
    """Try to unify an atom's placeholders with a concrete edge; returns an
    extended binding or None on conflict. The free variable never binds here.
    """
    h, r, t = edge
    trial = dict(binding)
    for key, value in ((atom.predicate, r), (atom.args[0].name, h), (atom.args[1].name, t)):
        bound = trial.get(key)
        if bound is None:
            trial[key] = value
        elif bound != value:
            return None
    return trial


def _walk_disjunct(rng, atoms, binding, index, free_var, skip=()):
    """Complete the atoms by random edge walks consistent with the binding.

    The free variable never constrains the walk and never gets bound here;
    atoms containing it only bind their other placeholders. Returns the
    extended binding or None when the walk gets stuck.
    """
    remaining = [a for a in atoms if a not in skip]
    while remaining:
        remaining.sort(
            key=lambda a: -sum(
                1
                for name in (a.predicate, a.args[0].name, a.args[1].name)
                if name != free_var and name in binding
            )
        )
        atom = remaining.pop(0)
        names = (atom.predicate, atom.args[0].name, atom.args[1].name)
        rel = binding.get(names[0])
        head = None if names[1] == free_var else binding.get(names[1])
        tail = None if names[2] == free_var else binding.get(names[2])
        pool = index.candidates(rel, head, tail)
        if not pool:
            return None
        h, r, t = pool[rng.randrange(len(pool))]
        pairs = [(names[0], r)]
        if names[1] != free_var:
            pairs.append((names[1], h))
        if names[2] != free_var:
            pairs.append((names[2], t))
        trial = dict(binding)
        ok = True
        for key, value in pairs:
            bound = trial.get(key)
            if bound is None:
                trial[key] = value
            elif bound != value:
                ok = False
                break
        if not ok:
            return None
        binding = trial
    return binding


def _kb_answers(index, query: QueryTemplate) -> set:
    """All entities that satisfy the instantiated template in the KB.

    Only disjuncts mentioning the free variable define answers; disjuncts
    without it cannot distinguish candidates.
    """
    answers = set()
    for cq in query.body.disjuncts:
        names = {v for a in cq.atoms for v in a.variables()}
        if query.free_var not in names:
            continue
        ordered = sorted(
            cq.atoms,
            key=lambda a: sum(1 for t in a.args if isinstance(t, Constant)),
            reverse=True,
        )
        def extend(binding, pos):
            if pos == len(ordered):
                answers.add(binding[query.free_var])
                return
            atom = ordered[pos]
            want = []
            for term in atom.args:
                if isinstance(term, Constant):
                    want.append(term.name)
                else:
                    want.append(binding.get(term.name))
            for h, r, t in index.candidates(atom.predicate, want[0], want[1]):
                if r != atom.predicate:
                    continue
                trial = dict(binding)
                ok = True
                for term, value in zip(atom.args, (h, t)):
                    if isinstance(term, Constant):
                        if term.name != value:
                            ok = False
                            break
                    else:
                        bound = trial.get(term.name)
                        if bound is None:
                            trial[term.name] = value
                        elif bound != value:
                            ok = False
                            break
                if ok:
                    extend(trial, pos + 1)
        extend({}, 0)
    return answers


def generate_queries(
    train: KnowledgeBase,
    test: KnowledgeBase,
    template_id: str,
    n: int,
    seed: int,
    pool_size: int = 1000,
) -> EvalQuerySet:
    """Sample template instantiations by walking edges of train+test such
    that every query uses at least one test-only edge; the answer is the
    entity witnessing the parameterized variable, negatives are uniform
    non-answers."""
    tpl = template(template_id)
    rng = random.Random(seed)
    full = KnowledgeBase.from_triples(
        list(train.triples) + list(test.triples), train.entities, train.relations
    )
    test_only = [t for t in test.triples if t not in train.triple_set]
    if not test_only:
        raise DataError("no test-only edges to anchor queries on")
    index = _EdgeIndex(full.triples)
    answer_var = ANSWER_VARS.get(template_id, tpl.free_var)
    uses_free = [
        cq for cq in tpl.body.disjuncts
        if any(v == tpl.free_var for a in cq.atoms for v in a.variables())
    ]
    seedable = uses_free or list(tpl.body.disjuncts)
    entries = []
    attempts_cap = max(200 * n, 1000)
    attempts = 0
    while len(entries) < n:
        attempts += 1
        if attempts > attempts_cap:
            raise DataError(
                f"template {template_id} pattern not realizable often enough in this KB "
                f"({len(entries)}/{n} after {attempts - 1} attempts)"
            )
        edge = test_only[rng.randrange(len(test_only))]
        anchor_cq = seedable[rng.randrange(len(seedable))]
        # anchor the test-only edge at a random atom of the chosen disjunct
        atom = anchor_cq.atoms[rng.randrange(len(anchor_cq.atoms))]
        if tpl.free_var in (atom.args[0].name, atom.args[1].name):
            free_at_head = atom.args[0].name == tpl.free_var
            binding = {}
            names = (atom.predicate, atom.args[0].name, atom.args[1].name)
            pairs = [(names[0], edge[1])]
            pairs.append((names[2], edge[2]) if free_at_head else (names[1], edge[0]))
            witness = edge[0] if free_at_head else edge[2]
            ok = True
            for key, value in pairs:
                if binding.setdefault(key, value) != value:
                    ok = False
            if not ok:
                continue
            binding[tpl.free_var] = witness
        else:
            binding = _bind_atom({}, atom, edge)
            if binding is None:
                continue
        binding = _walk_disjunct(rng, anchor_cq.atoms, binding, index, None, skip=(atom,))
        if binding is None:
            continue
        for cq in tpl.body.disjuncts:
            if cq is anchor_cq:
                continue
            binding = _walk_disjunct(rng, cq.atoms, binding, index, tpl.free_var)
            if binding is None:
                break
        if binding is None:
            continue
        answer = binding.get(answer_var) or binding.get(tpl.free_var)
        if answer is None:
            continue
        relations = {a.predicate: binding[a.predicate] for cq in tpl.body.disjuncts for a in cq.atoms}
        constants = {
            term.name: binding[term.name]
            for cq in tpl.body.disjuncts
            for a in cq.atoms
            for term in a.args
            if isinstance(term, Constant)
        }
        instance = instantiate(tpl, relations, constants)
        answers = _kb_answers(index, instance) or {answer}
        negatives_pool = [e for e in full.entities if e not in answers]
        if not negatives_pool:
            continue
        size = min(pool_size, len(negatives_pool))
        negatives = tuple(rng.sample(negatives_pool, size))
        walked = []
        for cq in tpl.body.disjuncts:
            for a in cq.atoms:
                arg_names = (a.args[0].name, a.args[1].name)
                if cq is not anchor_cq and tpl.free_var in arg_names:
                    continue  # the walk left the free side open there
                values = [binding.get(a.predicate)]
                values.extend(binding.get(name) for name in arg_names)
                if all(v is not None for v in values):
                    walked.append((values[1], values[0], values[2]))
        entries.append(
            EvalQuery(template_id, instance, answer, negatives, tuple(walked))
        )
    return EvalQuerySet(tuple(entries))


# ---------------------------------------------------------------------------
# Query-set files: one query per line plus ;answer=...;negs=...


def save_query_set(qs: EvalQuerySet, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_query_set(qs))


def dumps_query_set(qs: EvalQuerySet) -> str:
    from .logic import format_query

    lines = []
    for entry in qs.entries:
        lines.append(
            f"{format_query(entry.query)};answer={entry.answer};negs={','.join(entry.negatives)}"
        )
    return "\n".join(lines) + "\n"


def loads_query_set(text: str, base_dir=None) -> EvalQuerySet:
    from pathlib import Path

    from .logic import parse_query

    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(";")
        if len(parts) < 3:
            raise DataError(f"line {lineno}: expected query;answer=...;negs=...")
        query_text = parts[0]
        fields = {}
        for part in parts[1:]:
            if "=" not in part:
                raise DataError(f"line {lineno}: bad field {part!r}")
            key, value = part.split("=", 1)
            fields[key.strip()] = value.strip()
        if "answer" not in fields or "negs" not in fields:
            raise DataError(f"line {lineno}: answer= and negs= are required")
        query = parse_query(query_text)
        if not isinstance(query, QueryTemplate):
            raise DataError(f"line {lineno}: query must be a template with a free variable")
        negs = fields["negs"]
        if negs.startswith("@"):
            neg_path = Path(negs[1:])
            if base_dir is not None and not neg_path.is_absolute():
                neg_path = Path(base_dir) / neg_path
            try:
                negatives = tuple(
                    x.strip() for x in neg_path.read_text(encoding="utf-8").splitlines() if x.strip()
                )
            except OSError as exc:
                raise DataError(f"line {lineno}: cannot read negatives file: {exc}") from exc
        else:
            negatives = tuple(x.strip() for x in negs.split(",") if x.strip())
        if not negatives:
            raise DataError(f"line {lineno}: empty negative pool")
        entries.append(EvalQuery(query.name, query, fields["answer"], negatives))
    return EvalQuerySet(tuple(entries))


def load_query_set(path) -> EvalQuerySet:
    from pathlib import Path

    try:
        with open(path, "r", encoding="utf-8") as fh:
            return loads_query_set(fh.read(), base_dir=Path(path).parent)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Metrics


def auc(pos_scores, neg_scores) -> float:
    """Probability that a random positive outranks a random negative, ties
    counted half (Mann-Whitney)."""
    pos = np.asarray(list(pos_scores), dtype=np.float64)
    neg = np.asarray(list(neg_scores), dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise DataError("both score lists must be nonempty")
    scores = np.concatenate([pos, neg])
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def percentile_rank(answer_score: float, neg_scores) -> float:
    """Percentile of the answer within its negative pool, in [0, 100]."""
    neg = np.asarray(list(neg_scores), dtype=np.float64)
    if neg.size == 0:
        raise DataError("negative pool must be nonempty")
    below = np.count_nonzero(neg < answer_score)
    ties = np.count_nonzero(neg == answer_score)
    return float(100.0 * (below + 0.5 * ties) / neg.size)


def apr(per_query) -> float:
    """Average percentile rank over (answer_score, negative_scores) pairs."""
    ranks = [percentile_rank(score, negs) for score, negs in per_query]
    if not ranks:
        raise DataError("need at least one query")
    return float(np.mean(ranks))


@dataclass(frozen=True)
class TemplateMetrics:
    template_id: str
    n_queries: int
    auc: float
    apr: float


@dataclass(frozen=True)
class RankingReport:
    per_template: tuple
    overall_auc: float
    overall_apr: float
    per_query: tuple  # (template_id, answer, answer_score, negative_scores)


def _score_entries(model: TractorModel, entries) -> list:
    evaluator = TractorEvaluator(model)
    scored = []
    for entry in entries:
        answer_score = evaluator.probability(entry.query.instantiate(entry.answer))
        neg_scores = tuple(
            evaluator.probability(entry.query.instantiate(neg)) for neg in entry.negatives
        )
        scored.append((entry.template_id, entry.answer, answer_score, neg_scores))
    return scored


def evaluate_query_set(model: TractorModel, qs: EvalQuerySet, threads: int = 1) -> RankingReport:
    """Score every entry and aggregate ROC AUC and average percentile rank
    per template plus macro-averaged overall numbers. Deterministic for any
    thread count: results are combined in entry order."""
    entries = list(qs.entries)
    if not entries:
        raise DataError("query set is empty")
    if threads > 1 and len(entries) > 1:
        import concurrent.futures
        from functools import partial

        chunk = max(1, (len(entries) + threads - 1) // threads)
        chunks = [entries[i : i + chunk] for i in range(0, len(entries), chunk)]
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            scored = [row for rows in pool.map(partial(_score_entries, model), chunks) for row in rows]
    else:
        scored = _score_entries(model, entries)
    by_template = {}
    for row in scored:
        by_template.setdefault(row[0], []).append(row)
    per_template = []
    for template_id, rows in by_template.items():
        pos = [r[2] for r in rows]
        neg = [s for r in rows for s in r[3]]
        per_template.append(
            TemplateMetrics(
                template_id,
                len(rows),
                auc(pos, neg),
                apr([(r[2], r[3]) for r in rows]),
            )
        )
    overall_auc = float(np.mean([m.auc for m in per_template]))
    overall_apr = float(np.mean([m.apr for m in per_template]))
    return RankingReport(tuple(per_template), overall_auc, overall_apr, tuple(scored))


def link_prediction_auc(
    model: TractorModel,
    positives: Sequence,
    kb: KnowledgeBase,
    seed: int,
    negatives_per_positive: int = 10,
) -> float:
    """ROC AUC of trilinear scores on held-out triples against sampled
    corruptions absent from the full knowledge base."""
    E, T = model.entity_values, model.relation_values
    ent_index, rel_index = model.entity_index, model.relation_index

    def score(h, r, t):
        return float(np.sum(E[:, ent_index[h]] * T[:, rel_index[r]] * E[:, ent_index[t]]))

    pos_scores = [score(*x) for x in positives]
    neg_scores = []
    for i, triple in enumerate(positives):
        for neg in negative_sample(kb, triple, negatives_per_positive, seed + i):
            neg_scores.append(score(*neg))
    return auc(pos_scores, neg_scores)


# ---------------------------------------------------------------------------
# Synthetic data


def planted_kb(
    n_entities: int = 500,
    n_relations: int = 10,
    d: int = 16,
    seed: int = 0,
    density: float = 0.01,
):
    """Knowledge base of the top-scoring triples of a random rank-1 mixture.

    Returns (kb, ground_truth_model); the facts are exactly the triples whose
    mixture score exceeds the (1 - density) quantile, so a trained model of
    the same shape can recover the ranking.
    """
    rng = np.random.default_rng(seed)
    entities = tuple(f"N{i}" for i in range(n_entities))
    relations = tuple(f"R{i}" for i in range(n_relations))
    E = rng.uniform(0.0, 1.0, (d, n_entities))
    T = rng.uniform(0.0, 1.0, (d, n_relations))
    truth = TractorModel(entities, relations, E, T, mode=UNCONSTRAINED)
    scores = np.einsum("di,dr,dj->irj", E, T, E) / d
    threshold = np.quantile(scores, 1.0 - density)
    triples = [
        (entities[i], relations[r], entities[j])
        for i, r, j in np.argwhere(scores > threshold)
    ]
    return KnowledgeBase.from_triples(triples, entities, relations), truth
