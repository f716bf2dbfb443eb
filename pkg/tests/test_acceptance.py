"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
complete. Tolerances are fixed here, not configurable.
"""

import math
import random
import time

import numpy as np

from liftpdb import learn, tractor
from liftpdb.lift import classify, evaluate_query
from liftpdb.logic import parse_query, shatter
from liftpdb.pdb import loads_pdb, oracle_query_prob
from liftpdb.templates import TEMPLATE_IDS, instantiate

from conftest import random_pdb


def _report(number, name):
    print(f"ACCEPTANCE {number} ({name}): PASS")


def test_criterion_1_paper_figure_regressions():
    start = time.perf_counter()
    one = tractor.TractorModel(["A", "B", "C"], ["R"], [[0.2, 0.4, 0.8]], [[0.5]])
    assert abs(tractor.triple_prob(one, "A", "R", "B") - 0.04) <= 1e-9
    two = tractor.TractorModel(
        ["A", "B", "C"], ["R"], [[0.2, 0.4, 0.8], [0.6, 0.5, 0.2]], [[0.5], [1.0]]
    )
    assert abs(tractor.triple_prob(two, "A", "R", "B") - 0.17) <= 1e-9
    assert abs(tractor.triple_prob(two, "B", "R", "C") - 0.13) <= 1e-9
    assert abs(tractor.triple_prob(two, "A", "R", "C") - 0.10) <= 1e-9
    assert round(tractor.sigmoid(-0.6), 2) == 0.35
    assert round(tractor.sigmoid(0.2), 2) == 0.55
    assert round(tractor.sigmoid(2.3), 2) == 0.91
    pair = loads_pdb("Scientist\tEinstein\t0.8\nScientist\tErdos\t0.8\n")
    both = parse_query("Scientist(Einstein) AND Scientist(Erdos)")
    assert abs(oracle_query_prob(pair, both) - 0.64) <= 1e-9
    assert abs(evaluate_query(pair, both).probability - 0.64) <= 1e-9
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"took {elapsed:.2f}s"
    _report(1, "paper-figure regressions")


def test_criterion_2_oracle_equivalence_randomized():
    start = time.perf_counter()
    rng = random.Random(2024)
    domain = ("C0", "C1", "C2", "C3")
    templates = ("Q1", "Q2", "Q3", "Q5", "Q6", "Q7", "Q8", "Q9")
    n_cases = 520
    for trial in range(n_cases):
        tid = templates[trial % len(templates)]
        db = random_pdb(
            rng,
            n_tuples=rng.randint(6, 12),
            preds=(("R", 2), ("S", 2), ("T", 2)),
            domain=domain,
        )
        consts = {k: rng.choice(domain) for k in "ABC"}
        q = instantiate(
            tid, {"R": "R", "S": "S", "T": "T"}, consts, answer=rng.choice(domain)
        )
        got = evaluate_query(db, q).probability
        want = oracle_query_prob(db, q)
        assert abs(got - want) <= 1e-9, (tid, consts, got, want)
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0, f"took {elapsed:.1f}s"
    _report(2, f"oracle equivalence on {n_cases} randomized instances")


def test_criterion_3_dichotomy_table():
    start = time.perf_counter()
    rels = {"R": "R", "S": "S", "T": "T"}
    consts = {"A": "A", "B": "B", "C": "C"}
    expected_unsafe = {"Q4", "Q10", "Q11"}
    h0, _ = shatter(parse_query("EXISTS x,y. R(A,x) AND S(x,y) AND T(y,B)"))
    assert not classify(h0).safe
    for tid in TEMPLATE_IDS:
        q = instantiate(tid, rels, consts, answer="D")
        shattered, _table = shatter(q)
        verdict = classify(shattered)
        assert verdict.safe == (tid not in expected_unsafe), tid
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"took {elapsed:.2f}s"
    _report(3, "dichotomy verdicts for H0 and Q1-Q11")


def test_criterion_4_unary_safety_theorem():
    start = time.perf_counter()
    rng = random.Random(4)
    entities = tuple(f"N{i}" for i in range(6))
    relations = ("R1", "R2", "R3")
    gen = np.random.default_rng(4)
    model = tractor.TractorModel(
        entities, relations, gen.uniform(0, 1, (1, 6)), gen.uniform(0, 1, (1, 3))
    )
    evaluator = tractor.TractorEvaluator(model)
    n = 10_000
    for i in range(n):
        tid = TEMPLATE_IDS[i % len(TEMPLATE_IDS)]
        rels = {p: relations[rng.randrange(3)] for p in "RST"}
        consts = {p: entities[rng.randrange(6)] for p in "ABC"}
        q = instantiate(tid, rels, consts, answer=entities[rng.randrange(6)])
        rewritten = tractor.rewrite_unary(q, model)
        shattered, table = shatter(rewritten)
        assert classify(shattered, table=table).safe, (tid, rels, consts)
        evaluator.probability(q)  # a step-6 hit would raise AssertionError
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    _report(4, f"{n} rewritten instantiations all safe and evaluable")


def test_criterion_5_distmult_equivalence():
    gen = np.random.default_rng(55)
    rng = random.Random(55)
    n_models = 1000
    dims = (1, 2, 16, 128)
    for trial in range(n_models):
        d = dims[trial % len(dims)]
        n_ent = rng.randint(4, 7)
        entities = tuple(f"N{i}" for i in range(n_ent))
        scale = 0.5 / math.sqrt(d)
        model = tractor.TractorModel(
            entities,
            ("R",),
            gen.uniform(-scale, scale, (d, n_ent)),
            gen.uniform(-scale, scale, (d, 1)),
        )
        head, tail = rng.sample(entities, 2)
        score = tractor.distmult_score(
            model.entity_embedding(head),
            model.relation_embedding("R"),
            model.entity_embedding(tail),
        )
        assert abs(d * tractor.triple_prob(model, head, "R", tail) - score) <= 1e-12
        # ranking equality against a reference scorer on the same embeddings
        anchor = entities[0]
        candidates = list(entities[1:])
        ours = [
            e
            for e, _p in tractor.answer_template(
                model, parse_query(f"Q1(t) = R({anchor},t)"), candidates
            )
        ]
        reference = sorted(
            candidates,
            key=lambda e: (
                -tractor.distmult_score(
                    model.entity_embedding(anchor),
                    model.relation_embedding("R"),
                    model.entity_embedding(e),
                ),
                model.entity_index[e],
            ),
        )
        assert ours == reference, (d, anchor, candidates)
    _report(5, f"DistMult score and ranking equality over {n_models} models")


def test_criterion_6_linear_scaling_q4():
    gen = np.random.default_rng(66)
    times = {}
    for n in (1000, 2000, 4000):
        entities = tuple(f"N{i}" for i in range(n))
        model = tractor.TractorModel(
            entities,
            ("R1", "R2", "R3"),
            gen.uniform(0, 1, (2, n)),
            gen.uniform(0, 1, (2, 3)),
        )
        q = instantiate(
            "Q4",
            {"R": "R1", "S": "R2", "T": "R3"},
            {"A": "N0", "B": "N1", "C": "N2"},
            answer="N3",
        )
        tractor.TractorEvaluator(model).probability(q)  # warm the component tables
        best = math.inf
        for _ in range(5):
            evaluator = tractor.TractorEvaluator(model)
            t0 = time.perf_counter()
            evaluator.probability(q)
            best = min(best, time.perf_counter() - t0)
        times[n] = best
    growth1 = times[2000] / times[1000]
    growth2 = times[4000] / times[2000]
    assert growth1 <= 2.5 and growth2 <= 2.5, times
    _report(6, f"Q4 runtime growth per doubling {growth1:.2f}x / {growth2:.2f}x")


def test_criterion_7_gradient_check():
    gen = np.random.default_rng(77)
    rng = random.Random(77)
    entities = ["A", "B", "C", "D", "E1"]
    relations = ["R", "S"]
    h = 1e-6
    checked = 0
    for mode in (tractor.UNCONSTRAINED, tractor.SQUARED_POSITIVE):
        target = 50 if mode == tractor.UNCONSTRAINED else 100
        while checked < target:
            E = gen.normal(scale=0.8, size=(3, 5))
            T = gen.normal(scale=0.8, size=(3, 2))
            model = tractor.TractorModel(entities, relations, E, T, mode=mode)
            pos = [tuple(rng.sample(entities, 2)) for _ in range(3)]
            pos = [(a, rng.choice(relations), b) for a, b in pos]
            neg = [tuple(rng.sample(entities, 2)) for _ in range(3)]
            neg = [(a, rng.choice(relations), b) for a, b in neg]
            loss, grads = learn.loss_and_grads(model, pos, neg, margin=1.0)
            # probe one coordinate of each table per point
            for key, table in (("E", E), ("T", T)):
                i = int(gen.integers(0, table.shape[0]))
                j = int(gen.integers(0, table.shape[1]))
                up, down = table.copy(), table.copy()
                up[i, j] += h
                down[i, j] -= h
                if key == "E":
                    m_up = tractor.TractorModel(entities, relations, up, T, mode=mode)
                    m_down = tractor.TractorModel(entities, relations, down, T, mode=mode)
                else:
                    m_up = tractor.TractorModel(entities, relations, E, up, mode=mode)
                    m_down = tractor.TractorModel(entities, relations, E, down, mode=mode)
                fd = (
                    learn.loss_and_grads(m_up, pos, neg, 1.0)[0]
                    - learn.loss_and_grads(m_down, pos, neg, 1.0)[0]
                ) / (2 * h)
                analytic = grads[key][i, j]
                denominator = max(1.0, abs(fd), abs(analytic))
                assert abs(analytic - fd) / denominator <= 1e-5, (mode, key, analytic, fd)
            checked += 1
    _report(7, f"analytic gradients match central differences at {checked} points")


def test_criterion_8_planted_model_learning():
    start = time.perf_counter()
    kb, _truth = learn.planted_kb(
        n_entities=500, n_relations=10, d=16, seed=20, density=0.01
    )
    train_kb, test_kb = learn.split(kb, 0.1, seed=21)
    cfg = learn.TrainConfig(d=16, epochs=50, seed=22, mode=tractor.SQUARED_POSITIVE)
    model = learn.train(train_kb, cfg)
    link_auc = learn.link_prediction_auc(model, test_kb.triples, kb, seed=23)
    assert link_auc >= 0.90, link_auc
    query_aucs = {}
    for tid, seed in (("Q3", 24), ("Q5", 25)):
        qs = learn.generate_queries(train_kb, test_kb, tid, 120, seed=seed, pool_size=40)
        report = learn.evaluate_query_set(model, qs)
        query_aucs[tid] = report.per_template[0].auc
        assert report.per_template[0].auc >= 0.80, (tid, report.per_template[0])
    elapsed = time.perf_counter() - start
    assert elapsed < 600.0, f"took {elapsed:.0f}s"
    _report(
        8,
        "planted-model link AUC %.3f, query AUC Q3 %.3f / Q5 %.3f in %.0fs"
        % (link_auc, query_aucs["Q3"], query_aucs["Q5"], elapsed),
    )


def test_criterion_9_metric_units():
    assert learn.auc([1.0, 0.9, 0.8], [0.1, 0.2]) == 1.0
    assert learn.apr([(1.0, [0.0] * 1000)]) == 100.0
    assert learn.auc([0.5, 0.5], [0.5, 0.5]) == 0.5
    assert learn.apr([(0.5, [0.5] * 10)]) == 50.0
    assert learn.apr([(0.0, [1.0] * 1000)]) == 0.0
    assert learn.auc([0.9, 0.4], [0.5, 0.1]) == 0.75
    _report(9, "metric unit values")
