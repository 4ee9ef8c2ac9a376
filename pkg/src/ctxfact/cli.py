"""Command-line frontend: derive contexts, split, train, evaluate,
analyze context pairs, and produce ad-hoc recommendations.

Reports go to standard output, progress to standard error. Exit codes:
0 success, 1 usage or validation error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import re
import sys

from .dataspace import (
    ColumnSchema,
    build_dataspace,
    derive_seasonality,
    derive_sequentiality,
    load_transactions,
    time_split,
    write_transactions,
)
from .errors import (
    ConfigError,
    ConsistencyError,
    CtxfactError,
    PersistenceError,
    RowError,
    SchemaError,
    SolverError,
)
from .independence import SUPPORT_WEIGHTED, UNIFORM, context_divergence_table
from .mixing import (
    ComposedDimension,
    build_mixing_matrix,
    load_assignments,
    session_assignments,
    train_extended,
)
from .preference import default_aliases, parse_model, validate_model
from .ranking import Query, evaluate_recall, recommend_topn
from .solver import TrainConfig, train
from .store import load_model, save_model
from .weighting import WeightingScheme

USAGE_ERROR = 1
DATA_ERROR = 2
NUMERICAL_ERROR = 3

_WIDTH_KEYWORDS = {"week": 604800, "day": 86400, "hour": 3600, "minute": 60}
_WIDTH_PATTERN = re.compile(r"^(\d+)([smhd])$")
_WIDTH_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parse_bands(text: str, season_length: int) -> list[int]:
    """Band boundaries from either a comma list of offsets or a width
    shorthand (``day``, ``4h``, ``1800``)."""
    text = text.strip()
    if "," in text:
        try:
            return [int(x) for x in text.split(",") if x.strip() != ""]
        except ValueError:
            raise ConfigError(f"unparsable band boundaries {text!r}") from None
    if text in _WIDTH_KEYWORDS:
        width = _WIDTH_KEYWORDS[text]
    else:
        match = _WIDTH_PATTERN.match(text)
        if match:
            width = int(match.group(1)) * _WIDTH_UNITS[match.group(2)]
        else:
            try:
                width = int(text)
            except ValueError:
                raise ConfigError(f"unparsable band specification {text!r}") from None
    if width <= 0:
        raise ConfigError("band width must be positive")
    return list(range(0, season_length, width))


def _parse_lambda(text: str):
    """Either a shared coefficient or ``dim=value`` pairs with ``*`` default."""
    if "=" not in text:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"unparsable regularization {text!r}") from None
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise ConfigError(f"unparsable regularization entry {part!r}")
        key, value = part.split("=", 1)
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"unparsable regularization value {value!r}") from None
    return out


def _add_schema_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--user-col", default="user", help="user column name")
    parser.add_argument("--item-col", default="item", help="item column name")
    parser.add_argument("--time-col", default="ts", help="timestamp column name")
    parser.add_argument("--rating-col", default=None, help="rating column name (explicit mode)")


def _schema_for(path, args) -> ColumnSchema:
    """Column schema with every non-core header column as a context."""
    with open(path, newline="", encoding="utf-8") as fh:
        header_line = fh.readline()
    if not header_line:
        raise SchemaError(f"{path}: empty file, expected a header row")
    header = next(csv.reader([header_line], delimiter="\t"))
    core = {args.user_col, args.item_col, args.time_col}
    if args.rating_col:
        core.add(args.rating_col)
    contexts = tuple(c for c in header if c not in core)
    return ColumnSchema(
        user=args.user_col,
        item=args.item_col,
        timestamp=args.time_col,
        rating=args.rating_col,
        contexts=contexts,
    )


def _load_table(path, args):
    return load_transactions(path, _schema_for(path, args))


def cmd_derive(args) -> int:
    table = _load_table(args.input, args)
    derived_any = False
    if args.season_length is not None or args.bands is not None:
        if args.season_length is None or args.bands is None:
            raise ConfigError("--season-length and --bands must be given together")
        boundaries = _parse_bands(args.bands, args.season_length)
        table = derive_seasonality(
            table, args.season_length, boundaries, column=args.season_col
        )
        derived_any = True
    if args.sequential:
        table = derive_sequentiality(table, column=args.sequential_col)
        derived_any = True
    if args.session_gap is not None:
        if args.session_out is None:
            raise ConfigError("--session-gap needs --session-out for the assignment file")
        ids, assignments = session_assignments(table, gap_seconds=args.session_gap)
        table = table.with_context(args.session_col, ids)
        with open(args.session_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            writer.writerow(["property", "entity", "strength"])
            for prop, entity, strength in assignments:
                writer.writerow([prop, entity, repr(strength)])
        derived_any = True
    if not derived_any:
        raise ConfigError("nothing to derive: give --season-length/--bands, --sequential, or --session-gap")
    write_transactions(table, args.out)
    print(f"wrote {len(table)} rows to {args.out}", file=sys.stderr)
    return 0


def cmd_split(args) -> int:
    table = _load_table(args.input, args)
    train_part, test_part = time_split(table, args.at)
    write_transactions(train_part, args.train_out)
    write_transactions(test_part, args.test_out)
    print(
        f"split at {args.at}: {len(train_part)} train rows, {len(test_part)} test rows",
        file=sys.stderr,
    )
    return 0


def _dimension_order(args, table) -> list[str]:
    if args.dims:
        return [d.strip() for d in args.dims.split(",") if d.strip()]
    return [table.user_col, table.item_col, *table.context_columns]


def cmd_train(args) -> int:
    table = _load_table(args.input, args)
    dims = _dimension_order(args, table)
    dataspace = build_dataspace(table, dims)

    aliases = default_aliases(
        dataspace.names, user_dim=dataspace.user_dim, item_dim=dataspace.item_dim
    )
    model = parse_model(args.model, aliases)
    for diag in validate_model(model, dataspace):
        print(f"{diag.level}: {diag.message}", file=sys.stderr)

    if args.weighting == "implicit":
        scheme = WeightingScheme.implicit(alpha=args.alpha)
    else:
        scheme = WeightingScheme.explicit()

    config = TrainConfig(
        k=args.k,
        epochs=args.epochs,
        regularization=_parse_lambda(args.regularization),
        solver=args.solver,
        cg_iters=args.cg_iters,
        cg_tol=args.cg_tol,
        seed=args.seed,
        init_scale=args.init_scale,
        n_threads=args.threads,
    )

    composed = {}
    for spec in args.mixing or ():
        if "=" not in spec:
            raise ConfigError(f"--mixing expects dim=FILE, got {spec!r}")
        dim, path = spec.split("=", 1)
        mixing = build_mixing_matrix(
            load_assignments(path),
            dataspace.vocabulary(dim),
            normalization=args.mixing_normalization,
        )
        composed[dim] = ComposedDimension(
            mixing,
            learning=args.learning,
            ridge=args.ridge,
            batch_size=args.batch_size,
        )

    if composed:
        fm = train_extended(
            dataspace,
            model,
            scheme,
            config,
            composed,
            progress=sys.stderr,
            track_loss=args.track_loss,
        )
    else:
        fm = train(
            dataspace, model, scheme, config, progress=sys.stderr, track_loss=args.track_loss
        )
    save_model(fm, args.out)
    print(f"saved model to {args.out}", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    fm = load_model(args.model)
    test = _load_table(args.test, args)
    if len(test) == 0:
        raise ConfigError(f"{args.test}: test table is empty")
    train_table = _load_table(args.train, args) if args.train else None
    hit_log = [] if args.hit_log else None
    results = evaluate_recall(
        fm,
        test,
        train_table,
        ns=args.n or (20,),
        sequential_column=args.sequential_col,
        exclude_seen=args.exclude_seen,
        hit_log=hit_log,
    )
    for result in results:
        print(f"n={result.n} hits={result.hits} events={result.events} recall={result.recall:.6f}")
    if args.hit_log:
        with open(args.hit_log, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            writer.writerow(["row", "user", "item", "rank"])
            for entry in hit_log:
                writer.writerow(entry)
    return 0


def cmd_analyze_context(args) -> int:
    table = _load_table(args.input, args)
    columns = None
    if args.columns:
        columns = [c.strip() for c in args.columns.split(",") if c.strip()]
    rows = context_divergence_table(
        table, columns, smoothing_eps=args.eps, averaging=args.averaging
    )
    print("c1\tc2\tavg_kl")
    for c1, c2, value in rows:
        print(f"{c1}\t{c2}\t{value:.6f}")
    return 0


def cmd_recommend(args) -> int:
    fm = load_model(args.model)
    target = args.target_dim or (fm.dim_names[1] if len(fm.dim_names) > 1 else fm.dim_names[0])
    if target not in fm.dim_names:
        raise ConfigError(f"unknown target dimension {target!r}")
    fixed = {}
    for spec in args.fix or ():
        if "=" not in spec:
            raise ConfigError(f"--fix expects dim=entity, got {spec!r}")
        dim, entity = spec.split("=", 1)
        if dim == target:
            raise ConfigError(f"cannot fix the target dimension {dim!r}")
        if dim not in fm.dim_names:
            raise ConfigError(f"unknown dimension {dim!r}")
        fixed[dim] = fm.vocabulary(dim).get(entity, -1)
    missing = [d for d in fm.dim_names if d != target and d not in fixed]
    if missing:
        raise ConfigError(f"no entity fixed for dimension(s): {', '.join(missing)}")
    vocab = fm.vocabulary(target)
    for rank, (idx, score) in enumerate(
        recommend_topn(fm, Query(fixed, target, n=args.n)), start=1
    ):
        print(f"{rank}\t{vocab.entity(idx)}\t{score:.6f}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ctxfact", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("derive", help="add derived context columns to a transaction file")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    _add_schema_args(p)
    p.add_argument("--season-length", type=int, default=None, help="season length in seconds")
    p.add_argument("--bands", default=None, help="band width (day, 4h, 1800) or boundary list")
    p.add_argument("--season-col", default="season")
    p.add_argument("--sequential", action="store_true", help="derive the previous-item context")
    p.add_argument("--sequential-col", default="prev_item")
    p.add_argument("--session-gap", type=int, default=None, help="session gap in seconds")
    p.add_argument("--session-col", default="txn")
    p.add_argument("--session-out", default=None, help="session assignment TSV output")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("split", help="time-based train/test split")
    p.add_argument("input")
    p.add_argument("--at", type=int, required=True, help="split timestamp (test starts here)")
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    _add_schema_args(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a factor model")
    p.add_argument("input")
    _add_schema_args(p)
    p.add_argument("--dims", default=None, help="ordered dimension columns (default: user,item,contexts)")
    p.add_argument("--model", required=True, help='preference model, e.g. "UI+USI+UQI"')
    p.add_argument("--k", type=int, default=80)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lambda", dest="regularization", default="0.1",
                   help="shared value or dim=value list with optional *=default")
    p.add_argument("--alpha", type=float, default=40.0)
    p.add_argument("--weighting", choices=("implicit", "explicit"), default="implicit")
    p.add_argument("--solver", choices=("direct", "cg"), default="direct")
    p.add_argument("--cg-iters", type=int, default=10)
    p.add_argument("--cg-tol", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-scale", type=float, default=0.5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--track-loss", action="store_true", help="log the exact objective (small data)")
    p.add_argument("--mixing", action="append", metavar="DIM=FILE",
                   help="property assignment file for a composed dimension")
    p.add_argument("--mixing-normalization", choices=("none", "l2"), default="none")
    p.add_argument("--learning", choices=("two-phase", "direct"), default="two-phase")
    p.add_argument("--ridge", type=float, default=1e-6)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="key=value defaults file (flags override)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="recall@N over a time-split test set")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--train", default=None)
    _add_schema_args(p)
    p.add_argument("--n", type=int, action="append", help="cutoff; repeatable")
    p.add_argument("--sequential-col", default=None)
    p.add_argument("--exclude-seen", action="store_true")
    p.add_argument("--hit-log", default=None, help="per-event hit log TSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze-context", help="average KL divergence for context pairs")
    p.add_argument("input")
    _add_schema_args(p)
    p.add_argument("--columns", default=None, help="comma list (default: all context columns)")
    p.add_argument("--eps", type=float, default=1e-9)
    p.add_argument("--averaging", choices=(UNIFORM, SUPPORT_WEIGHTED), default=SUPPORT_WEIGHTED)
    p.set_defaults(func=cmd_analyze_context)

    p = sub.add_parser("recommend", help="top-N items for a fixed user and context")
    p.add_argument("--model", required=True)
    p.add_argument("--fix", action="append", metavar="DIM=ENTITY",
                   help="fixed entity per non-target dimension; repeatable")
    p.add_argument("--target-dim", default=None, help="ranked dimension (default: second)")
    p.add_argument("--n", type=int, default=20)
    p.set_defaults(func=cmd_recommend)

    return parser


def _expand_config(argv: list[str]) -> list[str]:
    """Inline a ``--config`` key=value file as flags right after the
    subcommand, so explicit flags still override it."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        raise ConfigError("--config needs a file argument")
    path = argv[at + 1]
    injected: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            flag = "--" + key.strip().lstrip("-")
            value = value.strip()
            if value.lower() in ("true", "false"):
                if value.lower() == "true":
                    injected.append(flag)
            else:
                injected.extend([flag, value])
    rest = [a for i, a in enumerate(argv) if i not in (at, at + 1)]
    return rest[:1] + injected + rest[1:]


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        argv = _expand_config(list(argv))
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except (SolverError, ConsistencyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return NUMERICAL_ERROR
    except (SchemaError, RowError, PersistenceError) as err:
        print(f"error: {err}", file=sys.stderr)
        return DATA_ERROR
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return DATA_ERROR
    except CtxfactError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
