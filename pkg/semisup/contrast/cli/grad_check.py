from semisup.contrast.diffcore import check_primitives
from semisup.contrast.exc import VerificationFailed
from semisup.contrast.numerics import Rng
from semisup.contrast.trainer import check_total_loss_gradients
from semisup.contrast.utils.csvio import write_csv

from . import BaseCommand

REPORT_FILE = "grad_check.csv"
REPORT_HEADER = ("check", "max_rel_error", "checked", "excluded", "pass")


class GradCheckCommand(BaseCommand):
    """
    Compare reverse-mode gradients against central finite differences, for
    every primitive and for the full model plus total loss.
    """

    name = "grad-check"

    description = "Check analytic gradients against finite differences."

    uses_experiment_config = False

    def build_parser(self):
        parser = super().build_parser()

        parser.add_argument(
            "--trials",
            type=int,
            default=20,
            help="Random model and loss configurations to check.",
        )

        parser.add_argument(
            "--primitive-trials",
            type=int,
            default=10,
            help="Random inputs per primitive.",
        )

        parser.add_argument("--h", type=float, default=1e-5, help="Finite-difference step.")

        parser.add_argument(
            "--tol",
            type=float,
            default=1e-4,
            help="Relative error tolerance for the model checks.",
        )

        parser.add_argument(
            "--primitive-tol",
            type=float,
            default=1e-6,
            help="Relative error tolerance for the primitive checks.",
        )

        parser.add_argument("--seed", type=int, default=0, help="Seed.")

        return parser

    def execute(self, args):
        results = [
            ("primitive " + name, report)
            for name, report in check_primitives(
                Rng(args.seed).derive("primitives"),
                trials=args.primitive_trials,
                h=args.h,
                tol=args.primitive_tol,
            )
        ]
        results += check_total_loss_gradients(
            seed=args.seed, trials=args.trials, h=args.h, tol=args.tol
        )

        path = write_csv(
            self.output_path(args, REPORT_FILE),
            REPORT_HEADER,
            (
                (name, r.max_rel_error, r.checked, r.excluded, r.passed)
                for name, r in results
            ),
        )
        failures = [(name, r) for name, r in results if not r.passed]
        for name, report in failures:
            self.logger.error("{}: {}".format(name, report))
        self.logger.info(
            "{} checks, {} failed; report {}".format(len(results), len(failures), path)
        )
        if failures:
            name, report = failures[0]
            raise VerificationFailed("gradient check failed: {}: {}".format(name, report))


def main():
    raise SystemExit(GradCheckCommand().run())


if __name__ == "__main__":
    main()
