"""
The `semisup-contrast` entry point: `semisup-contrast <verb> [options]`.
"""

import sys
from typing import Dict, List, Optional, Type

from semisup.contrast.cli import EXIT_USAGE, BaseCommand
from semisup.contrast.cli.ablate import AblateCommand
from semisup.contrast.cli.evaluate import EvaluateCommand
from semisup.contrast.cli.export_features import ExportFeaturesCommand
from semisup.contrast.cli.grad_check import GradCheckCommand
from semisup.contrast.cli.make_data import MakeDataCommand
from semisup.contrast.cli.train import TrainCommand
from semisup.contrast.cli.verify_bound import VerifyBoundCommand

COMMANDS: Dict[str, Type[BaseCommand]] = {
    cls.name: cls
    for cls in (
        TrainCommand,
        EvaluateCommand,
        VerifyBoundCommand,
        GradCheckCommand,
        ExportFeaturesCommand,
        MakeDataCommand,
        AblateCommand,
    )
}

USAGE = "usage: semisup-contrast {{{}}} [options]\n".format(",".join(COMMANDS))


def dispatch(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if argv and argv[0] in ("-h", "--help"):
        sys.stdout.write(USAGE)
        return 0
    if not argv:
        sys.stderr.write(USAGE)
        return EXIT_USAGE
    verb = argv[0]
    if verb not in COMMANDS:
        sys.stderr.write(USAGE)
        sys.stderr.write("semisup-contrast: unknown command {!r}\n".format(verb))
        return EXIT_USAGE
    return COMMANDS[verb]().run(argv[1:])


def main():
    raise SystemExit(dispatch())


if __name__ == "__main__":
    main()
