"""
Command line: `pysafelane validate|run|compare|plots`.

Exit status is 0 on success, 1 when a run fails one of its acceptance properties (or its replay check), 2 on a
missing file, schema violation or failed audit.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .client import SafeLaneClient
from .errors import ConfigError, SafeLaneError
from .plots import emit_plots

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_CONFIG = 2
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
REPLAY_CSV_TOLERANCE = 1e-6


def _build_parser():
    parser = argparse.ArgumentParser(prog='pysafelane', description='Lane keeping MPC with a barrier safety filter.')
    parser.add_argument('-v', '--verbose', action='store_true', help='log at DEBUG level')
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    validate = sub.add_parser('validate', help='audit scenario files without running them')
    validate.add_argument('scenarios', nargs='+')

    run = sub.add_parser('run', help='run scenarios and write CSV logs with JSON summaries')
    run.add_argument('scenarios', nargs='+')
    run.add_argument('--out', required=True, help='output directory')
    run.add_argument('--workers', type=int, default=1, help='parallel worker processes for batches')
    run.add_argument('--no-replay', action='store_true', help='skip the replay consistency check')

    compare = sub.add_parser('compare', help='run two scenarios and compare their metrics')
    compare.add_argument('first')
    compare.add_argument('second')
    compare.add_argument('--out', help='also keep the logs of both runs here')
    compare.add_argument('--min-reduction', type=float, default=None,
                         help='required relative peak-override reduction of the second run')

    plots = sub.add_parser('plots', help='write SVG figures for the logs in a directory')
    plots.add_argument('log_dir')
    plots.add_argument('--out', default=None)
    return parser


def run_scenario(path, out_dir=None, replay=True):
    """
    Worker for one scenario; returns (name, summary, problems). Problems are acceptance failures and replay
    violations. Configuration errors propagate.
    """
    client = SafeLaneClient.from_file(path)
    sim_log = client.run()
    summary = client.summary(sim_log)
    problems = list(summary['acceptance']['failed'])
    if replay:
        report = client.replay(sim_log)
        summary['replay_violations'] = len(report.violations)
        problems += ['replay: {0} inconsistent samples'.format(len(report.violations))] if report.violations else []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, '{0}.csv'.format(client.name))
        sim_log.to_csv(csv_path)
        if replay:
            reread = client.replay(type(sim_log).from_csv(csv_path), tol=REPLAY_CSV_TOLERANCE)
            if reread.violations:
                problems.append('replay of {0}: {1} inconsistent samples'.format(csv_path, len(reread.violations)))
        with open(os.path.join(out_dir, '{0}.json'.format(client.name)), 'w', encoding='utf-8') as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write('\n')
    return client.name, summary, problems


def _batch(paths, out_dir, workers, replay):
    if workers <= 1 or len(paths) == 1:
        return [run_scenario(path, out_dir, replay) for path in paths]
    with ProcessPoolExecutor(max_workers=min(workers, len(paths))) as pool:
        futures = [pool.submit(run_scenario, path, out_dir, replay) for path in paths]
        return [future.result() for future in futures]


def _print_summary(name, summary):
    print('{0}: min h_l={1:.4g} min h_r={2:.4g} min d={3} peak override={4:.4g} rad '
          'infeasible mpc/filter={5}/{6} singularities={7}'.format(
              name, summary['min_h_l'], summary['min_h_r'],
              'n/a' if summary['min_d'] is None else '{0:.4g}'.format(summary['min_d']),
              summary['peak_override'], summary['mpc_infeasible_steps'], summary['filter_infeasible_steps'],
              summary['singularities']))


def _validate(args):
    for path in args.scenarios:
        SafeLaneClient.from_file(path).validate()
        print('{0}: ok'.format(path))
    return EXIT_OK


def _run(args):
    for path in args.scenarios:
        SafeLaneClient.from_file(path).validate()
    status = EXIT_OK
    for name, summary, problems in _batch(args.scenarios, args.out, args.workers, not args.no_replay):
        _print_summary(name, summary)
        for problem in problems:
            print('  FAILED {0}'.format(problem))
            status = EXIT_ACCEPTANCE
    return status


def _compare(args):
    first = SafeLaneClient.from_file(args.first)
    second = SafeLaneClient.from_file(args.second)
    first.validate()
    second.validate()
    results = _batch([args.first, args.second], args.out, 2, True)
    status = EXIT_OK
    for name, summary, problems in results:
        _print_summary(name, summary)
        if problems:
            status = EXIT_ACCEPTANCE
    peak_a, peak_b = results[0][1]['peak_override'], results[1][1]['peak_override']
    ratio = peak_b / peak_a if peak_a > 0 else float('inf')
    print('peak override ratio {0}/{1} = {2:.4g}'.format(results[1][0], results[0][0], ratio))
    required = args.min_reduction
    if required is None:
        required = second.acceptance.peak_override_reduction
    if required is not None and not ratio <= 1.0 - required:
        print('  FAILED reduction {0:.4g} below the required {1:.4g}'.format(1.0 - ratio, required))
        status = EXIT_ACCEPTANCE
    return status


def _plots(args):
    for plot in emit_plots(args.log_dir, args.out):
        print(plot.path)
    return EXIT_OK


COMMANDS = {'validate': _validate, 'run': _run, 'compare': _compare, 'plots': _plots}


def run_cli(argv=None):
    """Entry point; returns the exit status instead of exiting."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        print(str(err), file=sys.stderr)
        return EXIT_CONFIG
    except SafeLaneError as err:
        print(str(err), file=sys.stderr)
        return EXIT_ACCEPTANCE


def main():
    sys.exit(run_cli())
