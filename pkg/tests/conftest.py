from pathlib import Path

import pytest

from liftpdb.logic import Atom, CQ, Constant, Variable, make_ucq
from liftpdb.pdb import ProbDatabase, Vocabulary, load_pdb
from liftpdb.tractor import TractorModel

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def scientists_db():
    return load_pdb(DATA / "scientists.pdb")


@pytest.fixture(scope="session")
def mapped_scores_db():
    return load_pdb(DATA / "mapped_scores.pdb")


@pytest.fixture()
def one_component_model():
    # worked single-component example: E over {A,B,C}, one relation R
    return TractorModel(["A", "B", "C"], ["R"], [[0.2, 0.4, 0.8]], [[0.5]])


@pytest.fixture()
def two_component_model():
    return TractorModel(
        ["A", "B", "C"], ["R"], [[0.2, 0.4, 0.8], [0.6, 0.5, 0.2]], [[0.5], [1.0]]
    )


@pytest.fixture()
def two_relation_model():
    return TractorModel(
        ["A", "B", "C"],
        ["R", "S"],
        [[0.2, 0.4, 0.8], [0.6, 0.5, 0.2]],
        [[0.5, 0.3], [1.0, 0.7]],
    )


DOMAIN = ("C0", "C1", "C2", "C3")
PRED_POOL = (("R", 2), ("S", 2), ("T", 2), ("U", 1), ("V", 1), ("W", 0))
VAR_POOL = ("x", "y", "z")


def random_term(rng, p_const=0.4):
    if rng.random() < p_const:
        return Constant(rng.choice(DOMAIN))
    return Variable(rng.choice(VAR_POOL))


def random_cq(rng, max_atoms=3, p_const=0.4, preds=PRED_POOL):
    atoms = []
    for _ in range(rng.randint(1, max_atoms)):
        name, arity = rng.choice(preds)
        atoms.append(Atom(name, tuple(random_term(rng, p_const) for _ in range(arity))))
    return CQ(tuple(atoms))


def random_ucq(rng, max_disjuncts=2, max_atoms=3, p_const=0.4, preds=PRED_POOL):
    return make_ucq(
        [random_cq(rng, max_atoms, p_const, preds) for _ in range(rng.randint(1, max_disjuncts))]
    )


def random_pdb(rng, n_tuples=8, preds=PRED_POOL, domain=DOMAIN):
    tuples = {}
    for _ in range(n_tuples * 3):
        if len(tuples) >= n_tuples:
            break
        name, arity = rng.choice(preds)
        atom = Atom(name, tuple(Constant(rng.choice(domain)) for _ in range(arity)))
        tuples.setdefault(atom, round(rng.random(), 3))
    return ProbDatabase(Vocabulary((), domain), tuples)
