from semisup.contrast.exc import VerificationFailed
from semisup.contrast.mi_oracle import BoundCase, BoundSweep, first_failure
from semisup.contrast.utils.csvio import write_csv

from . import BaseCommand

SWEEP_FILE = "bound_sweep.csv"


class VerifyBoundCommand(BaseCommand):
    """
    Check MI >= log n - InfoNCE exactly on seeded random discrete joints.
    """

    name = "verify-bound"

    description = "Verify the contrastive mutual-information bound on random joints."

    uses_experiment_config = False

    def build_parser(self):
        parser = super().build_parser()

        parser.add_argument("--joints", type=int, default=200, help="Number of joints.")

        parser.add_argument(
            "--max-outcomes",
            type=int,
            default=5,
            help="Largest outcome count per variable.",
        )

        parser.add_argument(
            "--max-n", type=int, default=4, help="Largest sample count n (>= 2)."
        )

        parser.add_argument(
            "--tol", type=float, default=1e-9, help="A case passes when gap >= -tol."
        )

        parser.add_argument("--seed", type=int, default=0, help="Sweep seed.")

        return parser

    def execute(self, args):
        sweep = BoundSweep(
            joints=args.joints,
            max_outcomes=args.max_outcomes,
            max_n=args.max_n,
            tol=args.tol,
            seed=args.seed,
            logger=self.logger,
        )
        cases = list(sweep.run())
        path = write_csv(
            self.output_path(args, SWEEP_FILE),
            BoundCase.CSV_HEADER,
            (case.csv_row() for case in cases),
        )
        worst = min(case.report.gap for case in cases)
        self.logger.info(
            "Wrote {} cases to {}; smallest gap {:.3e}".format(len(cases), path, worst)
        )

        failure = first_failure(cases)
        if failure is not None:
            raise VerificationFailed(
                "bound violated: seed={} m_r={} m_s={} n={} gap={!r}".format(
                    failure.seed, failure.m_r, failure.m_s, failure.n, failure.report.gap
                )
            )


def main():
    raise SystemExit(VerifyBoundCommand().run())


if __name__ == "__main__":
    main()
