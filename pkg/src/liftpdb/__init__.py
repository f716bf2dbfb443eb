"""liftpdb: a tractable probabilistic database engine.

Evaluates unions of conjunctive queries over tuple-independent probabilistic
databases with the standard lifted-inference recursion (including the
safe/unsafe dichotomy classification), and over a factorized relational
embedding model under which every such query runs in time linear in the
domain. Ships with a desk-scale trainer and ranking evaluator.
"""

from .errors import (
    DataError,
    LiftpdbError,
    OracleLimitError,
    ParseError,
    TrainingDivergedError,
    UnsafeQueryError,
    UnsupportedQueryError,
)
from .logic import (
    CQ,
    UCQ,
    Atom,
    Constant,
    QueryTemplate,
    ShatterTable,
    Variable,
    canonicalize,
    connected_components,
    find_separator,
    format_query,
    format_ucq,
    parse_query,
    rewrite_as_conjunction,
    shatter,
    substitute,
    symbolically_independent,
)
from .pdb import (
    ProbDatabase,
    Vocabulary,
    World,
    load_pdb,
    models,
    oracle_query_prob,
    save_pdb,
    shatter_database,
    tuple_prob,
    world_prob,
)
from .lift import LiftResult, SafetyVerdict, classify, evaluate_query, lift
from .tractor import (
    TractorEvaluator,
    TractorModel,
    answer_template,
    component_triple_prob,
    distmult_score,
    load_model,
    query_prob,
    rewrite_unary,
    save_model,
    score_to_prob,
    sigmoid,
    triple_prob,
)
from .learn import (
    EvalQuery,
    EvalQuerySet,
    KnowledgeBase,
    RankingReport,
    TrainConfig,
    adam_step,
    apr,
    auc,
    evaluate_query_set,
    generate_queries,
    load_triples,
    loss_and_grads,
    negative_sample,
    planted_kb,
    split,
    train,
)
from .templates import TEMPLATE_IDS, TEMPLATE_TEXT, instantiate, template

__version__ = "0.1.0"
