import abc
import argparse
import logging
import os
import sys
from typing import List, Optional

from semisup.contrast.config import (
    ExperimentConfig,
    config,
    init_logging,
    load_experiment_config,
)
from semisup.contrast.exc import (
    CheckpointFormatError,
    CommandError,
    ConfigurationError,
    DatasetFormatError,
    DomainError,
    EnumerationTooLarge,
    InvalidJoint,
    NonFiniteGradient,
    ShapeError,
    TrainingDiverged,
    VerificationFailed,
)
from semisup.contrast.utils import split_list

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3


class BaseCommand(metaclass=abc.ABCMeta):
    logger: logging.Logger = None

    #: Whether the command takes --config/--override.
    uses_experiment_config = True

    @property
    @abc.abstractmethod
    def name(self) -> str:
        """
        :return: The short name for the command.
        """

    @property
    @abc.abstractmethod
    def description(self) -> str:
        """
        :return: The description for this command
        """

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog="semisup-contrast {}".format(self.name), description=self.description
        )

        log_g = parser.add_mutually_exclusive_group()

        log_g.add_argument(
            "--debug",
            action="store_true",
            default=config.DEBUG,
            help="Whether to log at debug level.",
        )

        log_g.add_argument(
            "--quiet",
            action="store_true",
            default=False,
            help="Whether to suppress non-error log output.",
        )

        parser.add_argument(
            "--color",
            action="store_true",
            default=False,
            help="Whether to output logs with color.",
        )

        parser.add_argument(
            "--output-dir",
            default=config.OUTPUT_DIR,
            help="Directory all output files are written to (default: %(default)s).",
        )

        if self.uses_experiment_config:
            parser.add_argument(
                "--config",
                default=None,
                help="Experiment config file (flat key=value lines).",
            )

            parser.add_argument(
                "--override",
                action="append",
                default=[],
                metavar="KEY=VALUE",
                help="Override one config key; may be repeated.",
            )

        return parser

    def init_logging(self, options):
        """
        Initialize the logging subsystem and create a logger for this class, using passed in argparse options.

        :param options: Argparse options.
        """
        if options.quiet:
            loglevel = logging.ERROR
        elif options.debug:
            loglevel = logging.DEBUG
        else:
            loglevel = logging.INFO

        init_logging(loglevel=loglevel, color=options.color)

        self.logger = logging.getLogger("semisup.contrast.cli.{}".format(self.name))

    def load_config(self, args) -> ExperimentConfig:
        """
        Load the experiment config named by the options and log the complete
        effective configuration.
        """
        if args.config is not None and not os.path.isfile(args.config):
            raise CommandError("config file not found: {}".format(args.config))
        cfg = load_experiment_config(args.config, args.override)
        self.logger.info("Effective configuration:")
        for key, value in cfg.to_flat():
            self.logger.info("  {}={}".format(key, value))
        return cfg

    def output_path(self, args, *parts: str) -> str:
        """A path under the output directory, creating the directory."""
        if not os.path.isdir(args.output_dir):
            os.makedirs(args.output_dir)
        return os.path.join(args.output_dir, *parts)

    def run(self, argv: Optional[List[str]] = None) -> int:
        """
        Parse arguments, execute and map the outcome to an exit code.

        :return: 0 success, 1 verification failure, 2 usage or config error,
            3 I/O or file format error.
        """
        parser = self.build_parser()
        assert (
            parser is not None
        ), "{}.build_parser() method did not return a parser object.".format(
            self.__class__.__name__
        )

        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return e.code if isinstance(e.code, int) else EXIT_USAGE

        self.init_logging(args)

        try:
            self.execute(args)
        except (
            CommandError,
            ConfigurationError,
            DomainError,
            EnumerationTooLarge,
            InvalidJoint,
            ShapeError,
        ) as e:
            parser.print_usage(sys.stderr)
            self.logger.error(str(e))
            return EXIT_USAGE
        except (VerificationFailed, TrainingDiverged, NonFiniteGradient) as e:
            self.logger.error(str(e))
            return EXIT_FAILED
        except (OSError, DatasetFormatError, CheckpointFormatError) as e:
            self.logger.error(str(e))
            return EXIT_IO
        return EXIT_OK

    @abc.abstractmethod
    def execute(self, args):
        """
        Perform actual implementation for this command.

        :param args: The parsed options/args from argparse.
        """


def int_list(value: str) -> List[int]:
    """argparse type for comma-separated integers."""
    try:
        return [int(v) for v in split_list(value)]
    except ValueError:
        raise argparse.ArgumentTypeError(
            "expected comma-separated integers, got {!r}".format(value)
        )
