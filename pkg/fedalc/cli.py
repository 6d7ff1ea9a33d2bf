import logging
import os

from typing import (
    TYPE_CHECKING,
    Dict,
    MutableMapping,
)

import fedalc
import fedalc.settings
import fedalc.utils

if TYPE_CHECKING:
    from argparse import ArgumentParser, Namespace
else:
    ArgumentParser = None
    Namespace = None

logger = logging.getLogger(__name__)


def console_level(verbose: bool) -> int:
    """
    :returns: the console log level, |verbose| or the FEDALC_LOG_LEVEL
    environment variable (which wins if set to a valid level name)

    >>> console_level(True) == logging.DEBUG
    True
    """
    level = logging.DEBUG if verbose else logging.INFO
    env = os.environ.get(fedalc.settings.LOG_LEVEL_ENV)
    if env:
        env_level = logging.getLevelName(env.upper())
        if isinstance(env_level, int):
            level = env_level
    return level


def configure_logging(kwargs: MutableMapping) -> MutableMapping:
    # configure logging
    log_file = kwargs['log_file']
    if log_file == fedalc.settings.DEFAULT_LOG_FILE:
        fedalc.utils.ensure_config_path()
    fh = logging.FileHandler(log_file)
    fh.setLevel(logging.DEBUG)
    fh.setFormatter(logging.Formatter(
        '%(asctime)s::%(levelname)s::%(name)s::%(message)s'))
    ch = logging.StreamHandler()
    ch.setFormatter(logging.Formatter())
    ch.setLevel(console_level(kwargs['verbose']))
    # noinspection PyArgumentList
    logging.basicConfig(
        level=logging.DEBUG,
        handlers=(fh, ch),
    )
    del kwargs['verbose'], kwargs['log_file']
    return kwargs


def add_log_options(ap: ArgumentParser):
    """appends --log-file and --verbose to |ap| (or a subparser)"""
    ap.add_argument(
        '-l', '--log-file', help="where to store log file",
        default=fedalc.settings.DEFAULT_LOG_FILE,)
    ap.add_argument(
        '-v', '--verbose', help="prints DEBUG log level (logged anyway in "
        "--log-file)",
        action='store_true',)


def cli_common(ap: ArgumentParser,
               log: bool = True,
               args: Namespace = None,) -> Dict:
    """
    Appends common command line options to an argument parser and returns
    kwargs ready to unpack into a main function. values that are None are
    stripped

    :arg ap: the argparse.ArgumentParser to append options to

    :param log: appends --log-file and --verbose
    :param args: an already parsed Namespace (used by subcommands, whose
    parsers already carry the log options)
    """
    if args is None:
        if log:
            add_log_options(ap)
        # parse the arguments, getting the result back in dict format
        kwargs = vars(ap.parse_args())
    else:
        kwargs = dict(vars(args))

    if log:
        kwargs = configure_logging(kwargs)

    # strip out the None values, so as to leave defaults in main() untouched.
    return {k: v for k, v in kwargs.items() if v is not None}


if __name__ == '__main__':
    import doctest
    doctest.testmod()
