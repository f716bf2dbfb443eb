import math
import random
import time

import pytest

from liftpdb.errors import DataError, UnsafeQueryError, UnsupportedQueryError
from liftpdb.lift import Step0Plan, classify, evaluate_query, lift
from liftpdb.logic import (
    Atom,
    Constant,
    UCQ,
    canonicalize,
    parse_query,
    shatter,
    substitute,
)
from liftpdb.pdb import (
    ProbDatabase,
    Vocabulary,
    oracle_query_prob,
    shatter_database,
)
from liftpdb.templates import TEMPLATE_IDS, instantiate

from conftest import random_pdb, random_ucq


def ground(pred, *args):
    return Atom(pred, tuple(Constant(a) for a in args))


def db_of(tuples, domain=()):
    return ProbDatabase(Vocabulary((), tuple(domain)), tuples)


# ---------------------------------------------------------------------------
# base cases


def test_step0_single_ground_atom():
    q, table = shatter(parse_query("R(A,B)"))
    db = db_of({ground("R", "A", "B"): 0.35})
    result = lift(q, db, table)
    assert result.probability == pytest.approx(0.35, abs=1e-12)
    assert isinstance(result.plan, Step0Plan)


def test_step2_independent_predicates_product():
    db = db_of(
        {
            ground("R", "C0"): 0.3,
            ground("R", "C1"): 0.6,
            ground("S", "C0"): 0.5,
        },
        domain=("C0", "C1"),
    )
    q = parse_query("EXISTS x,y. R(x) AND S(y)")
    got = lift(q, db).probability
    want = (1 - 0.7 * 0.4) * 0.5
    assert got == pytest.approx(want, abs=1e-12)


def test_step5_independent_union_closed_form():
    db = db_of({ground("R_A", "B"): 0.5, ground("R_A", "C"): 0.5}, domain=("B", "C"))
    q = parse_query("EXISTS x. R_A(x)")
    result = lift(q, db)
    assert result.probability == pytest.approx(0.75, abs=1e-12)
    assert result.probability == pytest.approx(oracle_query_prob(db, q), abs=1e-9)


def test_q1_matches_oracle_on_figure_db(scientists_db):
    q1 = parse_query("EXISTS x,y. Scientist(x) AND CoAuthor(x,y)")
    got = evaluate_query(scientists_db, q1).probability
    assert got == pytest.approx(oracle_query_prob(scientists_db, q1), abs=1e-9)
    assert got == pytest.approx(0.94456, abs=1e-9)


def test_lift_rejects_unshattered_constants(scientists_db):
    with pytest.raises(UnsupportedQueryError):
        lift(parse_query("Scientist(Einstein)"), scientists_db)


def test_lift_rejects_template(scientists_db):
    with pytest.raises(DataError):
        lift(parse_query("Q(t) = Scientist(t)"), scientists_db)


# ---------------------------------------------------------------------------
# randomized oracle equivalence


SAFE_TEMPLATES = ("Q1", "Q2", "Q3", "Q5", "Q6", "Q7", "Q8", "Q9")


def test_randomized_template_instances_match_oracle():
    rng = random.Random(13)
    domain = ("C0", "C1", "C2", "C3")
    for trial in range(160):
        tid = SAFE_TEMPLATES[trial % len(SAFE_TEMPLATES)]
        db = random_pdb(rng, n_tuples=rng.randint(6, 10), preds=(("R", 2), ("S", 2), ("T", 2)), domain=domain)
        consts = {k: rng.choice(domain) for k in "ABC"}
        q = instantiate(tid, {"R": "R", "S": "S", "T": "T"}, consts, answer=rng.choice(domain))
        got = evaluate_query(db, q).probability
        want = oracle_query_prob(db, q)
        assert got == pytest.approx(want, abs=1e-9), (tid, consts)


def test_randomized_free_queries_match_oracle():
    rng = random.Random(29)
    checked = 0
    for _ in range(600):
        q = random_ucq(rng, max_disjuncts=2, max_atoms=3)
        db = random_pdb(rng, n_tuples=rng.randint(4, 9))
        try:
            got = evaluate_query(db, q).probability
        except (UnsafeQueryError, UnsupportedQueryError):
            continue
        checked += 1
        assert got == pytest.approx(oracle_query_prob(db, q), abs=1e-9), str(q)
    assert checked > 300


# ---------------------------------------------------------------------------
# structural invariants


def test_step5_external_recomputation():
    rng = random.Random(7)
    db = random_pdb(rng, n_tuples=8, preds=(("R", 2),))
    q = parse_query("EXISTS x,y. R(x,y)")
    shattered, table = shatter(q)
    total = lift(shattered, db, table).probability
    canon = canonicalize(shattered)
    miss = 1.0
    for const in db.domain:
        qc = substitute(canon, "v0", const)
        qc2, t2 = shatter(qc, table)
        miss *= 1.0 - lift(qc2, db, t2).probability
    assert total == pytest.approx(1.0 - miss, abs=1e-12)


def test_inclusion_exclusion_two_way_consistency():
    # P(Q1 and Q2) = P(Q1) + P(Q2) - P(Q1 or Q2), checked against the oracle
    rng = random.Random(19)
    checked = 0
    for _ in range(60):
        db = random_pdb(rng, n_tuples=8)
        qa = random_ucq(rng, max_disjuncts=1, p_const=0.0)
        qb = random_ucq(rng, max_disjuncts=1, p_const=0.0)
        # quantifiers are per-disjunct: keep the variable namespaces apart
        from liftpdb.logic import CQ, Variable

        qb = UCQ(
            tuple(
                CQ(
                    tuple(
                        Atom(
                            a.predicate,
                            tuple(Variable(t.name + "2") for t in a.args),
                        )
                        for a in cq.atoms
                    )
                )
                for cq in qb.disjuncts
            )
        )
        union = UCQ(qa.disjuncts + qb.disjuncts)
        try:
            pa = evaluate_query(db, qa).probability
            pb = evaluate_query(db, qb).probability
            pu = evaluate_query(db, union).probability
        except (UnsafeQueryError, UnsupportedQueryError):
            continue
        conj = UCQ((type(qa.disjuncts[0])(qa.disjuncts[0].atoms + qb.disjuncts[0].atoms),))
        want = oracle_query_prob(db, conj)
        assert pa + pb - pu == pytest.approx(want, abs=1e-9)
        checked += 1
    assert checked > 20


def test_plan_reevaluation_reproduces_probability(scientists_db):
    q1 = parse_query("EXISTS x,y. Scientist(x) AND CoAuthor(x,y)")
    result = evaluate_query(scientists_db, q1)
    assert result.plan.evaluate() == result.probability

    def leaves(node):
        kids = [child for _label, child in node._children()]
        if not kids:
            yield node
        for k in kids:
            yield from leaves(k)

    assert all(isinstance(leaf, Step0Plan) for leaf in leaves(result.plan))


def test_determinism_identical_plans(scientists_db):
    q1 = parse_query("EXISTS x,y. Scientist(x) AND CoAuthor(x,y)")
    a = evaluate_query(scientists_db, q1)
    b = evaluate_query(scientists_db, q1)
    assert a.probability == b.probability
    assert a.explain() == b.explain()


def test_unsafe_error_carries_blocking_subquery():
    h0, table = shatter(parse_query("EXISTS x,y. R(A,x) AND S(x,y) AND T(y,B)"))
    db = db_of({ground("S", "C0", "C1"): 0.5}, domain=("C0", "C1"))
    with pytest.raises(UnsafeQueryError) as err:
        lift(h0, db, table)
    blocking = err.value.blocking
    assert blocking.predicates() == {"R_A", "S", "T_B"}


def test_memo_shared_across_calls(scientists_db):
    q1 = parse_query("EXISTS x,y. Scientist(x) AND CoAuthor(x,y)")
    memo = {}
    a = evaluate_query(scientists_db, q1, memo=memo)
    entries = len(memo)
    assert entries > 0
    b = evaluate_query(scientists_db, q1, memo=memo)
    assert len(memo) == entries
    assert a.probability == b.probability


def test_lift_on_relocated_database_equals_table_path(scientists_db):
    q1 = parse_query("EXISTS x,y. Scientist(x) AND CoAuthor(Einstein,y)")
    shattered, table = shatter(q1)
    via_table = lift(shattered, scientists_db.with_constants(q1.constants()), table)
    moved = shatter_database(scientists_db.with_constants(q1.constants()), table)
    via_reloc = lift(shattered, moved)
    assert via_table.probability == pytest.approx(via_reloc.probability, abs=1e-12)


def test_ground_unary_mixing_is_exact():
    # E(A) and EXISTS x. E(x) over the same predicate: absorption applies
    db = db_of({ground("E", "A"): 0.3, ground("E", "B"): 0.5}, domain=("A", "B"))
    q = parse_query("EXISTS x. E(A) AND E(x)")
    got = evaluate_query(db, q).probability
    assert got == pytest.approx(0.3, abs=1e-12)
    q_or = parse_query("E(A) OR EXISTS x. E(x)")
    assert evaluate_query(db, q_or).probability == pytest.approx(
        1 - 0.7 * 0.5, abs=1e-12
    )


# ---------------------------------------------------------------------------
# classification


def test_classify_h0_unsafe():
    h0, _ = shatter(parse_query("EXISTS x,y. R(A,x) AND S(x,y) AND T(y,B)"))
    verdict = classify(h0)
    assert not verdict.safe
    assert verdict.blocking is not None
    assert str(verdict).startswith("UNSAFE: ")


def test_classify_dichotomy_table():
    rels = {"R": "R", "S": "S", "T": "T"}
    consts = {"A": "A", "B": "B", "C": "C"}
    expected_unsafe = {"Q4", "Q10", "Q11"}
    for tid in TEMPLATE_IDS:
        q = instantiate(tid, rels, consts, answer="D")
        shattered, _ = shatter(q)
        verdict = classify(shattered)
        assert verdict.safe == (tid not in expected_unsafe), tid
        if verdict.safe:
            assert verdict.plan is not None
        else:
            assert verdict.blocking is not None


def test_classify_safe_matches_successful_evaluation():
    # with the shatter table, classification mirrors evaluation exactly
    rng = random.Random(41)
    agreements = 0
    for _ in range(200):
        q = random_ucq(rng, p_const=0.3)
        try:
            shattered, table = shatter(q)
            verdict = classify(shattered, table=table)
        except UnsupportedQueryError:
            continue
        db = random_pdb(rng, n_tuples=6)
        if verdict.safe:
            lift(shattered, db.with_constants(q.constants()), table)  # must not raise
        else:
            with pytest.raises((UnsafeQueryError, UnsupportedQueryError)):
                lift(shattered, db.with_constants(q.constants()), table)
        agreements += 1
    assert agreements > 100


def test_classify_vocabulary_arity_check():
    q, _ = shatter(parse_query("EXISTS x. R(x,x)"))
    vocab = Vocabulary((("R", 1),), ("A",))
    with pytest.raises(DataError):
        classify(q, vocab)


def test_classify_rejects_constants():
    with pytest.raises(UnsupportedQueryError):
        classify(parse_query("R(A,B)"))


# ---------------------------------------------------------------------------
# scaling


def test_polynomial_scaling_on_two_atom_chain():
    rng = random.Random(55)
    times = {}
    for n in (64, 128, 256):
        domain = tuple(f"C{i}" for i in range(n))
        tuples = {}
        for const in domain:
            if rng.random() < 0.7:
                tuples[ground("R_A", const)] = round(rng.random(), 3)
        db = db_of(tuples, domain=domain)
        q = parse_query("EXISTS x. R_A(x)")
        best = math.inf
        for _ in range(3):
            t0 = time.perf_counter()
            lift(q, db)
            best = min(best, time.perf_counter() - t0)
        times[n] = best
    # log-log slope across the doublings stays well under quadratic
    slope1 = math.log(times[128] / times[64], 2)
    slope2 = math.log(times[256] / times[128], 2)
    assert max(slope1, slope2) < 2.5, times
