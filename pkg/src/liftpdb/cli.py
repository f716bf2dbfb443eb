"""Command-line surface.

Exit codes: 0 success, 1 usage or selftest failure, 2 data error,
3 unsafe query (pdb-query only).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import (
    DataError,
    LiftpdbError,
    OracleLimitError,
    ParseError,
    TrainingDivergedError,
    UnsafeQueryError,
    UnsupportedQueryError,
)
from .lift import classify, evaluate_query
from .logic import QueryTemplate, format_query, format_ucq, parse_query, shatter
from .pdb import load_pdb, oracle_query_prob
from .templates import TEMPLATE_IDS
from . import learn, tractor

SEED_ENV = "LIFTPDB_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _fmt(p: float, full: bool) -> str:
    return f"{p:.17g}" if full else f"{p:.6f}"


def _default_seed(value):
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise DataError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def _read_query_file(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return parse_query(text)


def _boolean_query(path):
    q = _read_query_file(path)
    if isinstance(q, QueryTemplate):
        raise DataError(
            f"{path} holds template {q.name}({q.free_var}); a Boolean query is required here"
        )
    return q


def _read_lines(path):
    try:
        return [x.strip() for x in Path(path).read_text(encoding="utf-8").splitlines() if x.strip()]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Commands


def _cmd_pdb_query(args) -> int:
    db = load_pdb(args.database, formal=args.formal)
    q = _boolean_query(args.query)
    result = evaluate_query(db, q)
    if args.json:
        doc = {"query": format_ucq(q), "probability": result.probability}
        if args.explain:
            doc["plan"] = result.explain().splitlines()
        print(json.dumps(doc))
    else:
        print(_fmt(result.probability, args.full))
        if args.explain:
            print(result.explain(), file=sys.stderr)
    return 0


def _cmd_pdb_oracle(args) -> int:
    db = load_pdb(args.database, formal=args.formal)
    q = _boolean_query(args.query)
    p = oracle_query_prob(db, q)
    if args.json:
        print(json.dumps({"query": format_ucq(q), "probability": p}))
    else:
        print(_fmt(p, args.full))
    return 0


def _fresh_candidate_constant(q: QueryTemplate) -> str:
    taken = set(q.body.constants())
    name = "Cand"
    while name in taken:
        name += "_"
    return name


def _cmd_safety(args) -> int:
    q = _read_query_file(args.query)
    if isinstance(q, QueryTemplate):
        q = q.instantiate(_fresh_candidate_constant(q))
    shattered, _table = shatter(q)
    verdict = classify(shattered)
    if args.json:
        doc = {"safe": verdict.safe}
        if not verdict.safe:
            doc["blocking"] = format_ucq(verdict.blocking)
        print(json.dumps(doc))
    else:
        print(str(verdict))
    return 0


def _cmd_tractor_train(args) -> int:
    kb = learn.load_triples(args.triples)
    cfg = learn.TrainConfig(
        d=args.d,
        mode=args.mode,
        margin=args.margin,
        negatives_per_positive=args.negatives,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        seed=_default_seed(args.seed),
    )
    def report(epoch, loss):
        print(f"epoch {epoch} loss {loss:.6f}", file=sys.stderr)

    model = learn.train(kb, cfg, on_epoch=report)
    tractor.save_model(model, args.output)
    print(f"wrote {args.output}")
    return 0


def _cmd_tractor_query(args) -> int:
    model = tractor.load_model(args.model)
    q = _boolean_query(args.query)
    p = tractor.query_prob(model, q)
    if args.json:
        print(json.dumps({"query": format_ucq(q), "probability": p}))
    else:
        # evaluation is unclamped; only the displayed value is
        shown = p if args.raw else min(1.0, max(0.0, p))
        print(_fmt(shown, args.full))
    return 0


def _cmd_tractor_rank(args) -> int:
    model = tractor.load_model(args.model)
    q = _read_query_file(args.query)
    if not isinstance(q, QueryTemplate):
        raise DataError(f"{args.query} must hold a template with a free variable")
    candidates = _read_lines(args.candidates)
    ranked = tractor.answer_template(model, q, candidates)
    if args.json:
        print(json.dumps({"template": format_query(q), "ranking": [[e, s] for e, s in ranked]}))
    else:
        for entity, score in ranked:
            print(f"{entity}\t{_fmt(score, args.full)}")
    return 0


def _cmd_gen_queries(args) -> int:
    seed = _default_seed(args.seed)
    if args.train and args.test:
        train_kb = learn.load_triples(args.train)
        test_kb = learn.load_triples(args.test)
        union = learn.KnowledgeBase.from_triples(
            list(train_kb.triples) + list(test_kb.triples)
        )
        train_kb = learn.KnowledgeBase.from_triples(train_kb.triples, union.entities, union.relations)
        test_kb = learn.KnowledgeBase.from_triples(test_kb.triples, union.entities, union.relations)
    elif args.triples:
        kb = learn.load_triples(args.triples)
        train_kb, test_kb = learn.split(kb, args.test_fraction, seed)
    else:
        raise DataError("provide either --train and --test, or -t/--triples")
    qs = learn.generate_queries(
        train_kb, test_kb, args.template, args.n, seed, pool_size=args.negatives
    )
    text = learn.dumps_query_set(qs)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        print(f"wrote {len(qs)} queries to {args.output}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_eval(args) -> int:
    from . import report as report_mod

    model = tractor.load_model(args.model)
    qs = learn.load_query_set(args.queries)
    threads = args.threads if args.threads else (os.cpu_count() or 1)
    rep = learn.evaluate_query_set(model, qs, threads=threads)
    if args.json:
        doc = {
            "per_template": [
                {"template": m.template_id, "queries": m.n_queries, "auc": m.auc, "apr": m.apr}
                for m in rep.per_template
            ],
            "overall": {"auc": rep.overall_auc, "apr": rep.overall_apr},
        }
        print(json.dumps(doc))
    else:
        print(report_mod.format_metrics_table(rep))
    if args.report:
        out = Path(args.report)
        out.mkdir(parents=True, exist_ok=True)
        report_mod.write_metrics_tsv(rep, out / "metrics.tsv")
        report_mod.write_metrics_figure(rep, out / "metrics.png")
        print(f"report written to {out / 'metrics.tsv'} and {out / 'metrics.png'}", file=sys.stderr)
    return 0


def _cmd_selftest(args) -> int:
    from .pdb import loads_pdb

    checks = []

    def check(name, got, want, tolerance=1e-9):
        ok = abs(got - want) <= tolerance
        checks.append((name, ok, got, want))

    one = tractor.TractorModel(["A", "B", "C"], ["R"], [[0.2, 0.4, 0.8]], [[0.5]])
    check("single-component P(R(A,B)) = 0.04", tractor.triple_prob(one, "A", "R", "B"), 0.04)
    two = tractor.TractorModel(
        ["A", "B", "C"], ["R"], [[0.2, 0.4, 0.8], [0.6, 0.5, 0.2]], [[0.5], [1.0]]
    )
    check("two-component P(R(A,B)) = 0.17", tractor.triple_prob(two, "A", "R", "B"), 0.17)
    check("two-component P(R(B,C)) = 0.13", tractor.triple_prob(two, "B", "R", "C"), 0.13)
    check("two-component P(R(A,C)) = 0.10", tractor.triple_prob(two, "A", "R", "C"), 0.10)
    check("query path agrees with triple path", tractor.query_prob(two, parse_query("R(A,B)")),
          tractor.triple_prob(two, "A", "R", "B"), 1e-12)
    check("sigmoid(-0.6) -> 0.35", round(tractor.sigmoid(-0.6), 2), 0.35, 0.0)
    check("sigmoid(0.2) -> 0.55", round(tractor.sigmoid(0.2), 2), 0.55, 0.0)
    check("sigmoid(2.3) -> 0.91", round(tractor.sigmoid(2.3), 2), 0.91, 0.0)
    pair = loads_pdb("Scientist\tEinstein\t0.8\nScientist\tErdos\t0.8\n")
    both = parse_query("Scientist(Einstein) AND Scientist(Erdos)")
    check("independent product 0.8*0.8 = 0.64 (oracle)", oracle_query_prob(pair, both), 0.64)
    check("independent product 0.8*0.8 = 0.64 (lifted)",
          evaluate_query(pair, both).probability, 0.64)

    failed = 0
    for name, ok, got, want in checks:
        if ok:
            print(f"PASS {name}")
        else:
            failed += 1
            print(f"FAIL {name}: got {got!r}, wanted {want!r}")
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 1


# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="liftpdb", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        return p

    p = add("pdb-query", _cmd_pdb_query, "lifted query probability on a probabilistic database")
    p.add_argument("-d", "--database", required=True)
    p.add_argument("-q", "--query", required=True)
    p.add_argument("--explain", action="store_true", help="print the plan trace to stderr")
    p.add_argument("--formal", action="store_true", help="allow probabilities outside [0,1]")
    p.add_argument("--full", action="store_true", help="print 17 significant digits")
    p.add_argument("--json", action="store_true")

    p = add("pdb-oracle", _cmd_pdb_oracle, "same probability by world enumeration (desk scale)")
    p.add_argument("-d", "--database", required=True)
    p.add_argument("-q", "--query", required=True)
    p.add_argument("--formal", action="store_true")
    p.add_argument("--full", action="store_true")
    p.add_argument("--json", action="store_true")

    p = add("safety", _cmd_safety, "classify a query SAFE or UNSAFE")
    p.add_argument("-q", "--query", required=True)
    p.add_argument("--json", action="store_true")

    p = add("tractor-train", _cmd_tractor_train, "train a factorized model on a triples file")
    p.add_argument("-t", "--triples", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--d", type=int, default=128, help="component count (default 128)")
    p.add_argument("--mode", choices=tractor.MODES, default=tractor.UNCONSTRAINED)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--negatives", type=int, default=2, help="negatives per positive")
    p.add_argument("--seed", type=int, default=None)

    p = add("tractor-query", _cmd_tractor_query, "Boolean query probability under a model")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-q", "--query", required=True)
    p.add_argument("--raw", action="store_true", help="print without clamping into [0,1]")
    p.add_argument("--full", action="store_true")
    p.add_argument("--json", action="store_true")

    p = add("tractor-rank", _cmd_tractor_rank, "rank candidate answers of a template")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-q", "--query", required=True, help="file holding a query template")
    p.add_argument("--candidates", required=True, help="file with one entity per line")
    p.add_argument("--full", action="store_true")
    p.add_argument("--json", action="store_true")

    p = add("gen-queries", _cmd_gen_queries, "sample an evaluation query set from a KB")
    p.add_argument("--template", required=True, choices=list(TEMPLATE_IDS))
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--train", help="training triples TSV")
    p.add_argument("--test", help="held-out triples TSV")
    p.add_argument("-t", "--triples", help="full triples TSV to split")
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--negatives", type=int, default=1000, help="negative pool size per query")
    p.add_argument("-o", "--output")

    p = add("eval", _cmd_eval, "rank a query set and report AUC/APR per template")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--threads", type=int, default=0, help="worker processes (default: all cores)")
    p.add_argument("--report", help="directory for metrics.tsv and metrics.png")
    p.add_argument("--json", action="store_true")

    add("selftest", _cmd_selftest, "run the built-in regression checks")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except UnsafeQueryError as exc:
        print(f"UNSAFE: {format_ucq(exc.blocking)}", file=sys.stderr)
        return 3
    except (ParseError, DataError, OracleLimitError, UnsupportedQueryError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LiftpdbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
