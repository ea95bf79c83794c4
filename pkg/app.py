"""
Command-line entry point

    python app.py <subcommand> [flags]

Subcommands: stats, derive-labels, fit-ltl, train, rank, evaluate,
cross-validate, synth-gen. Exit status is 0 on success, 1 on usage errors and
2 on data errors.
"""

import argparse
import json
import logging
import os
import sys
import traceback
from dataclasses import dataclass
from logging.handlers import RotatingFileHandler

import config as app_config
from controllers.evaluation_controller import (
    CvConfig,
    cross_validate,
    cross_validate_oracle,
    evaluate,
    write_comparison_tsv,
    write_cv_report,
)
from controllers.labeling_controller import derive_labels, label_pairwise, read_human_judgments
from controllers.ranking_controller import (
    PredictedRanking,
    RankRequest,
    build_feature_index,
    build_training_set,
    dump_features,
    predict_qpvs,
    rank_listwise,
    rank_pointwise,
    read_candidate_lists,
)
from controllers.stats_controller import compute_stats
from models.label_model import MovementConfig, Scenario, Strategy, read_labels, write_labels
from models.qpv_model import card_universe, read_qpv_log, serialize_qpv_log
from models.store import read_jsonl, write_bytes, write_json
from utils.errors import DataError, LabelError, QpvRankError, UsageError
from utils.gbt import GbtConfig, fit_gbt, load_model, save_model
from utils.ltl import FitConfig, fit_all, ltl_card_values, read_ltl_models, write_ltl_models, write_value_reports

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


# ==================== LOGGING ====================

def setup_logging(level='INFO', log_file='', max_size=10485760, backup_count=5):
    """Root logger to stderr, plus a size-rotating file when log_file is set"""
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        directory = os.path.dirname(os.path.abspath(log_file))
        os.makedirs(directory, exist_ok=True)
        handlers.append(RotatingFileHandler(log_file, maxBytes=max_size, backupCount=backup_count,
                                            encoding='utf-8'))
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)


@dataclass
class ProgressReporter:
    """JSON progress events on stderr, one object per line; silent unless enabled"""

    command: str
    seed: int
    enabled: bool = False

    def emit(self, *, event, **payload):
        if not self.enabled:
            return
        record = {"event": event, "command": self.command, "seed": self.seed}
        record.update(payload)
        sys.stderr.write(json.dumps(record, ensure_ascii=False) + "\n")
        sys.stderr.flush()

    def start(self, **details):
        self.emit(event="start", details=details)

    def progress(self, stage, **details):
        self.emit(event="progress", stage=stage, **details)

    def complete(self, **details):
        self.emit(event="complete", details=details)

    def error(self, *, code, message, hint=None):
        payload = {"code": code, "message": message}
        if hint:
            payload["hint"] = hint
        self.emit(event="error", **payload)


# ==================== ARGUMENTS ====================

class CliParser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; usage problems exit 1 here"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    common = CliParser(add_help=False)
    common.add_argument('--config', help='KEY=value settings file')
    common.add_argument('--seed', type=int, help='seed for every random choice')
    common.add_argument('--workers', type=int, help='worker threads (0 = all cores)')
    common.add_argument('--progress', action='store_true', help='JSON progress events on stderr')
    common.add_argument('-v', '--verbose', action='store_true')
    common.add_argument('-q', '--quiet', action='store_true')

    gbt = CliParser(add_help=False)
    gbt.add_argument('--trees', type=int)
    gbt.add_argument('--leaves', type=int)
    gbt.add_argument('--shrinkage', type=float)
    gbt.add_argument('--min-leaf', type=int, dest='min_leaf')

    movement = CliParser(add_help=False)
    movement.add_argument('--d-plus', type=float, dest='d_plus')
    movement.add_argument('--d-minus', type=float, dest='d_minus')

    parser = CliParser(prog='app.py', description='Reformulation-labeled card ranking toolkit')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=CliParser)

    p = sub.add_parser('stats', parents=[common], help='dataset statistics')
    p.add_argument('-i', '--input', required=True)
    p.add_argument('-o', '--output')
    p.add_argument('--plot-dir', dest='plot_dir')
    p.add_argument('--plot-query', dest='plot_queries', action='append', default=[])

    p = sub.add_parser('derive-labels', parents=[common, movement], help='labels from a QPV log')
    p.add_argument('-i', '--input', required=True)
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--strategy', required=True)
    p.add_argument('--positives', choices=['all', 'post-reform'], default='all')
    p.add_argument('--include-abandoned', action='store_true', dest='include_abandoned')
    p.add_argument('--no-combine', action='store_true', dest='no_combine')
    p.add_argument('--raw-pairs', action='store_true', dest='raw_pairs',
                   help='apl only: write the preference pairs themselves')
    p.add_argument('--unsigned-pairs', action='store_true', dest='unsigned_pairs',
                   help='apl only: apply the positive-pair rule to negative pairs too')
    p.add_argument('--ltl-models', dest='ltl_models')
    p.add_argument('--judgments')

    p = sub.add_parser('fit-ltl', parents=[common], help='fit per-query credit models')
    p.add_argument('-i', '--input', required=True)
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--values', help='TSV of expected card values')
    p.add_argument('--l2', type=float)
    p.add_argument('--max-iterations', type=int, dest='max_iterations')

    p = sub.add_parser('train', parents=[common, gbt], help='train a boosted-tree ranker')
    p.add_argument('-i', '--input', required=True, help='labels file')
    p.add_argument('--log', required=True, help='QPV log the features come from')
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--features', help='write the feature table as TSV')

    p = sub.add_parser('rank', parents=[common], help='rank candidate cards for one query')
    p.add_argument('--model', required=True)
    p.add_argument('--log', required=True)
    p.add_argument('--query', required=True)
    p.add_argument('--cards', required=True, help='comma-separated card types')
    p.add_argument('--max-size', type=int, dest='max_size')
    p.add_argument('--listwise', action='store_true')
    p.add_argument('--candidate-lists', dest='candidate_lists')
    p.add_argument('-o', '--output')

    p = sub.add_parser('evaluate', parents=[common], help='exact-match metrics')
    p.add_argument('-i', '--input', required=True, help='evaluation QPV log')
    p.add_argument('-o', '--output')
    p.add_argument('--predictions', help='JSONL of {qpv_id, query, ranking}')
    p.add_argument('--model')
    p.add_argument('--log', help='training QPV log for the feature index')
    p.add_argument('--listwise', action='store_true')

    p = sub.add_parser('cross-validate', parents=[common, gbt, movement], help='k-fold evaluation')
    p.add_argument('-i', '--input', required=True)
    p.add_argument('-o', '--output')
    p.add_argument('--strategy', required=True)
    p.add_argument('--folds', type=int)
    p.add_argument('--judgments')
    p.add_argument('--truth', help='ground-truth file; adds an oracle row')
    p.add_argument('--tsv', help='write a Method/TPR/TNR/1-TNR/F comparison table')

    p = sub.add_parser('synth-gen', parents=[common], help='generate a synthetic QPV log')
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--truth')
    p.add_argument('--judgments')
    p.add_argument('--sessions', type=int)
    p.add_argument('--queries', type=int)
    p.add_argument('--card-types', type=int, dest='card_types')

    return parser


def _override(base, **flags):
    """Explicit flags win over config-file and environment values"""
    result = dict(base)
    result.update({k: v for k, v in flags.items() if v is not None})
    return result


def _strategy(name):
    try:
        return Strategy.parse(name)
    except LabelError as e:
        raise UsageError(e.message) from None


def _require_files(*paths):
    for path in paths:
        if path and not os.path.isfile(path):
            raise UsageError(f"input file not found: {path}")


# ==================== COMMANDS ====================

def cmd_stats(args, ctx):
    _require_files(args.input)
    report = compute_stats(read_qpv_log(args.input))
    payload = report.to_dict()
    if args.output:
        write_json(args.output, payload)
    else:
        sys.stdout.write(json.dumps(payload, ensure_ascii=False, indent=2) + "\n")
    if args.plot_dir:
        from utils.plots import write_stats_charts
        write_stats_charts(report, args.plot_dir, args.plot_queries)
    return {"num_qpvs": report.num_qpvs}


def cmd_derive_labels(args, ctx):
    _require_files(args.input, args.ltl_models, args.judgments)
    strategy = _strategy(args.strategy)
    qpvs = read_qpv_log(args.input)

    if args.raw_pairs:
        if strategy is not Strategy.APL:
            raise UsageError("--raw-pairs only applies to --strategy apl")
        labels = label_pairwise(qpvs)
    else:
        ltl_models = None
        if strategy is Strategy.LTL:
            if args.ltl_models:
                ltl_models = read_ltl_models(args.ltl_models)
            else:
                ltl_models = fit_all(qpvs, FitConfig(**app_config.get_fit_config(ctx.values)),
                                     workers=ctx.workers, progress=ctx.bars)
        judgments = read_human_judgments(args.judgments) if args.judgments else None
        movement = MovementConfig(**_override(app_config.get_movement_config(ctx.values),
                                              d_plus=args.d_plus, d_minus=args.d_minus))
        labels = derive_labels(strategy, qpvs, movement_config=movement, combine=not args.no_combine,
                               positives=args.positives, include_abandoned=args.include_abandoned,
                               flip_negative_pairs=not args.unsigned_pairs, ltl_models=ltl_models,
                               judgments=judgments)
    write_labels(args.output, labels)
    return {"labels": len(labels)}


def cmd_fit_ltl(args, ctx):
    _require_files(args.input)
    qpvs = read_qpv_log(args.input)
    fit_config = FitConfig(**_override(app_config.get_fit_config(ctx.values), l2_lambda=args.l2,
                                       max_iterations=args.max_iterations))
    models = fit_all(qpvs, fit_config, workers=ctx.workers, progress=ctx.bars)
    write_ltl_models(args.output, models)
    if args.values:
        by_query = {}
        for qpv in qpvs:
            by_query.setdefault(qpv.query, []).append(qpv)
        write_value_reports(args.values, [ltl_card_values(models[q], by_query[q]) for q in sorted(models)])
    return {"models": len(models)}


def _gbt_config(args, ctx):
    return GbtConfig(**_override(app_config.get_gbt_config(ctx.values), num_trees=args.trees,
                                 max_leaf_nodes=args.leaves, shrinkage=args.shrinkage,
                                 min_samples_per_leaf=args.min_leaf, seed=ctx.seed))


def cmd_train(args, ctx):
    _require_files(args.input, args.log)
    labels = read_labels(args.input)
    if not labels:
        raise DataError(f"no labels in {args.input}")
    qpvs = read_qpv_log(args.log)
    index = build_feature_index(qpvs, smoothing=ctx.values['FEATURE_SMOOTHING'])
    data = build_training_set(labels, index, collapse=True)
    model = fit_gbt(data, _gbt_config(args, ctx))
    save_model(args.output, model)
    if args.features:
        dump_features(args.features, index)
    return {"rows": data.num_rows, "trees": len(model.trees)}


def cmd_rank(args, ctx):
    _require_files(args.model, args.log, args.candidate_lists)
    model = load_model(args.model)
    index = build_feature_index(read_qpv_log(args.log), smoothing=ctx.values['FEATURE_SMOOTHING'])
    cards = tuple(c.strip() for c in args.cards.split(',') if c.strip())
    request = RankRequest(args.query, cards, args.max_size)
    if args.listwise or args.candidate_lists:
        candidates = read_candidate_lists(args.candidate_lists) if args.candidate_lists else None
        predicted = rank_listwise(model, index, request, candidates)
    else:
        predicted = rank_pointwise(model, index, request)
    if args.output:
        write_json(args.output, predicted.to_dict())
    else:
        sys.stdout.write(json.dumps(predicted.to_dict(), ensure_ascii=False) + "\n")
    return {"ranking": list(predicted.ranking)}


def read_predictions(path):
    """JSONL of {qpv_id, query, ranking[, score]} records"""
    predictions = {}
    for record in read_jsonl(path):
        try:
            predictions[record["qpv_id"]] = PredictedRanking(record["query"], tuple(record["ranking"]),
                                                             float(record.get("score", 0.0)))
        except (KeyError, TypeError) as e:
            raise DataError(f"malformed prediction record in {path}: {e}") from None
    return predictions


def cmd_evaluate(args, ctx):
    _require_files(args.input, args.predictions, args.model, args.log)
    qpvs = read_qpv_log(args.input)
    if args.predictions:
        predictions = read_predictions(args.predictions)
    elif args.model and args.log:
        model = load_model(args.model)
        train = read_qpv_log(args.log)
        index = build_feature_index(train, universe=card_universe([*train, *qpvs]),
                                    smoothing=ctx.values['FEATURE_SMOOTHING'])
        index.assert_disjoint(qpvs)
        scenario = Scenario.LISTWISE if args.listwise else Scenario.POINTWISE
        predictions = predict_qpvs(model, index, qpvs, scenario)
    else:
        raise UsageError("evaluate needs --predictions, or --model together with --log")

    report = evaluate(predictions, qpvs)
    if args.output:
        write_json(args.output, report.to_dict())
    else:
        sys.stdout.write(json.dumps(report.to_dict()) + "\n")
    return report.to_dict()


def cmd_cross_validate(args, ctx):
    _require_files(args.input, args.judgments, args.truth)
    strategy = _strategy(args.strategy)
    if strategy is Strategy.HUMAN and not args.judgments:
        raise UsageError("--strategy human needs --judgments")
    qpvs = read_qpv_log(args.input)
    cv_config = CvConfig(**_override(app_config.get_cv_config(ctx.values), num_folds=args.folds,
                                     seed=ctx.seed))
    movement = MovementConfig(**_override(app_config.get_movement_config(ctx.values),
                                          d_plus=args.d_plus, d_minus=args.d_minus))
    judgments = read_human_judgments(args.judgments) if args.judgments else None

    ctx.reporter.progress("folds", strategy=strategy.value, num_folds=cv_config.num_folds)
    reports = [cross_validate(qpvs, strategy, _gbt_config(args, ctx), cv_config, movement_config=movement,
                              fit_config=FitConfig(**app_config.get_fit_config(ctx.values)),
                              judgments=judgments, smoothing=ctx.values['FEATURE_SMOOTHING'],
                              workers=ctx.workers, progress=ctx.bars)]
    if args.truth:
        from synth.log_generator import read_truth
        reports.append(cross_validate_oracle(qpvs, read_truth(args.truth), cv_config))

    if args.output:
        write_cv_report(args.output, reports)
    else:
        sys.stdout.write(json.dumps(reports[0].to_dict(), indent=2) + "\n")
    if args.tsv:
        write_comparison_tsv(args.tsv, reports)
    return reports[0].summary


def cmd_synth_gen(args, ctx):
    from synth.log_generator import (WorldConfig, build_world, generate_judgments, generate_log,
                                     write_judgments, write_truth)

    world_config = WorldConfig(**_override(app_config.get_world_config(ctx.values), seed=ctx.seed,
                                           num_sessions=args.sessions, num_queries=args.queries,
                                           num_card_types=args.card_types))
    world = build_world(world_config)
    qpvs, truth = generate_log(world_config, progress=ctx.bars, world=world)
    write_bytes(args.output, serialize_qpv_log(qpvs))
    if args.truth:
        write_truth(args.truth, truth)
    if args.judgments:
        write_judgments(args.judgments, generate_judgments(
            world, num_queries=ctx.values['SYNTH_JUDGMENT_QUERIES'], noise=ctx.values['SYNTH_JUDGMENT_NOISE']))
    return {"qpvs": len(qpvs)}


COMMANDS = {
    'stats': cmd_stats,
    'derive-labels': cmd_derive_labels,
    'fit-ltl': cmd_fit_ltl,
    'train': cmd_train,
    'rank': cmd_rank,
    'evaluate': cmd_evaluate,
    'cross-validate': cmd_cross_validate,
    'synth-gen': cmd_synth_gen,
}


@dataclass
class RunContext:
    values: dict
    seed: int
    workers: int
    bars: bool
    reporter: ProgressReporter


# ==================== ENTRY POINT ====================

def run(argv=None):
    """
    Parse argv, run one subcommand and map failures to exit codes

    Returns:
        0 on success, 1 on usage errors, 2 on data errors
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    reporter = ProgressReporter(command=argv[0] if argv else '', seed=None)
    try:
        args = build_parser().parse_args(argv)
        reporter = ProgressReporter(command=args.command, seed=None, enabled=args.progress)
        values = app_config.settings(app_config.load_config_file(args.config) if args.config else None)

        level = 'DEBUG' if args.verbose else 'WARNING' if args.quiet else values['LOG_LEVEL'].upper()
        setup_logging(level, values['LOG_FILE'], values['LOG_MAX_SIZE'], values['LOG_BACKUP_COUNT'])
        problems = app_config.validate_config(values)
        if problems:
            raise UsageError("; ".join(problems))

        seed = args.seed if args.seed is not None else values['SEED']
        workers = args.workers if args.workers is not None else values['WORKERS']
        reporter = ProgressReporter(command=args.command, seed=seed, enabled=args.progress)
        ctx = RunContext(values, seed, workers, bars=not args.progress and sys.stderr.isatty(), reporter=reporter)

        reporter.start(argv=argv)
        result = COMMANDS[args.command](args, ctx)
        reporter.complete(**(result or {}))
        return 0
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 0
    except QpvRankError as e:
        logger.error(f"❌ {e.message}")
        reporter.error(code=type(e).__name__, message=e.message, hint=e.hint)
        return e.exit_code
    except OSError as e:
        logger.error(f"❌ {e}")
        reporter.error(code=type(e).__name__, message=str(e))
        return 2
    except Exception as e:
        logger.error(f"❌ Unexpected {type(e).__name__}: {e}")
        logger.error(traceback.format_exc())
        reporter.error(code=type(e).__name__, message=str(e))
        return 2


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
