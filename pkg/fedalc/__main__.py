# Copyright 2026 fedalc contributors
#
# Permission is hereby granted, free of charge, to any person obtaining a copy of
# this software and associated documentation files (the "Software"), to deal in
# the Software without restriction, including without limitation the rights to
# use, copy, modify, merge, publish, distribute, sublicense, and/or sell copies
# of the Software, and to permit persons to whom the Software is furnished to do
# so, subject to the following conditions:
#
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.

import logging
import sys

import fedalc
import fedalc.cli
import fedalc.data
import fedalc.federation
import fedalc.verify

logger = logging.getLogger(__name__)

COMMANDS = {
    'prepare': fedalc.data.cmd_prepare,
    'run': fedalc.federation.cmd_run,
    'verify': fedalc.verify.main,
}


def main(command: str, **kwargs) -> int:
    """dispatches a subcommand, returning a process exit code"""
    logger.debug(f"{command}: {kwargs}")
    result = COMMANDS[command](**kwargs)
    # verify returns its own exit code
    return result if isinstance(result, int) else 0


def cli_main():
    import argparse

    ap = argparse.ArgumentParser(
        description="Simulates federated learning with only positive labels.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,)
    ap.add_argument(
        '--version', action='version', version=fedalc.__version__)
    sub = ap.add_subparsers(dest='command', required=True)

    prepare = sub.add_parser(
        'prepare', help="split an XMLC dataset into train/val/test files",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,)
    fedalc.data.add_prepare_args(prepare)

    run = sub.add_parser(
        'run', help="run an experiment from a config file",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,)
    fedalc.federation.add_run_args(run)

    verify = sub.add_parser(
        'verify', help="check the implementation against oracles",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,)
    fedalc.verify.add_verify_args(verify)

    for parser in (prepare, run, verify):
        fedalc.cli.add_log_options(parser)

    kwargs = fedalc.cli.cli_common(ap, args=ap.parse_args())
    try:
        sys.exit(main(**kwargs))
    except Exception as err:
        logger.error(f"{kwargs['command']} failed: {err}")
        raise


if __name__ == '__main__':
    cli_main()
