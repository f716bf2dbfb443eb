"""The eleven evaluation query templates.

R, S, T are placeholder relations, A, B, C placeholder constants, t the
parameterized variable to be ranked over candidate entities. Q2 and Q11 do
not mention t (their bodies score identically for every candidate) and Q10
mentions it in one disjunct only; instantiation simply substitutes where t
occurs.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Mapping, Optional, Union

from .errors import DataError
from .logic import Atom, CQ, Constant, QueryTemplate, UCQ, parse_query

__all__ = [
    "TEMPLATE_TEXT",
    "TEMPLATE_IDS",
    "ANSWER_VARS",
    "template",
    "instantiate",
]

TEMPLATE_TEXT = {
    "Q1": "Q1(t) = R(A,t)",
    "Q2": "Q2(t) = EXISTS x. R(A,x)",
    "Q3": "Q3(t) = EXISTS x. R(A,x) AND S(x,t)",
    "Q4": "Q4(t) = EXISTS x,y. R(A,x) AND S(x,y) AND T(y,t)",
    "Q5": "Q5(t) = R(A,t) AND S(B,t)",
    "Q6": "Q6(t) = R(A,t) AND S(B,t) AND T(C,t)",
    "Q7": "Q7(t) = EXISTS x. R(A,x) AND S(x,t) OR EXISTS y. R(A,y) AND T(y,t)",
    "Q8": "Q8(t) = EXISTS x. R(A,x) AND S(x,t) AND T(B,t)",
    "Q9": "Q9(t) = EXISTS x. R(A,x) AND S(B,x) AND T(x,t)",
    "Q10": "Q10(t) = EXISTS x1,y1. R(A,x1) AND S(x1,y1) OR EXISTS x2,y2. S(x2,y2) AND T(y2,t)",
    "Q11": "Q11(t) = EXISTS x,y,z. R(A,x) AND S(x,y) AND T(y,z)",
}

TEMPLATE_IDS = tuple(TEMPLATE_TEXT)

# Witness variable used as the answer when the free variable is absent.
ANSWER_VARS = {"Q2": "x", "Q11": "z"}


@lru_cache(maxsize=None)
def template(template_id: str) -> QueryTemplate:
    try:
        text = TEMPLATE_TEXT[template_id]
    except KeyError:
        raise DataError(f"unknown template {template_id!r}; known: {', '.join(TEMPLATE_IDS)}") from None
    return parse_query(text)


def _map_term(term, constants: Mapping[str, str], free_var: str, answer: Optional[str]):
    if isinstance(term, Constant):
        try:
            return Constant(constants[term.name])
        except KeyError:
            raise DataError(f"no binding for template constant {term.name!r}") from None
    if term.name == free_var:
        return Constant(answer) if answer is not None else term
    return term


def instantiate(
    tpl: Union[str, QueryTemplate],
    relations: Mapping[str, str],
    constants: Mapping[str, str],
    answer: Optional[str] = None,
) -> Union[QueryTemplate, UCQ]:
    """Replace placeholder relations and constants by concrete names.

    With `answer` given, the free variable is substituted too and the result
    is a Boolean UCQ; otherwise a template over the same free variable.
    """
    if isinstance(tpl, str):
        tpl = template(tpl)
    disjuncts = []
    for cq in tpl.body.disjuncts:
        atoms = []
        for atom in cq.atoms:
            try:
                predicate = relations[atom.predicate]
            except KeyError:
                raise DataError(f"no binding for template relation {atom.predicate!r}") from None
            atoms.append(
                Atom(
                    predicate,
                    tuple(_map_term(t, constants, tpl.free_var, answer) for t in atom.args),
                )
            )
        disjuncts.append(CQ(tuple(atoms)))
    body = UCQ(tuple(disjuncts))
    if answer is not None:
        return body
    return QueryTemplate(tpl.name, tpl.free_var, body)
