from semisup.contrast.exc import VerificationFailed
from semisup.contrast.trainer import ARMS, ordering_holds, run_ablation
from semisup.contrast.utils import split_list
from semisup.contrast.utils.csvio import write_csv

from . import BaseCommand, int_list

SUMMARY_FILE = "ablation_summary.csv"


class AblateCommand(BaseCommand):
    """
    Train the full method and its ablations over several seeds and
    summarize their test accuracy.
    """

    name = "ablate"

    description = "Run the loss-term ablation over seeds."

    def build_parser(self):
        parser = super().build_parser()

        parser.add_argument(
            "--seeds",
            type=int_list,
            default=[0, 1, 2, 3, 4],
            help="Comma-separated seeds (default: 0,1,2,3,4).",
        )

        parser.add_argument(
            "--labels-per-class",
            type=int_list,
            default=None,
            help="Comma-separated labeled-set sizes to sweep (default: from config).",
        )

        parser.add_argument(
            "--arms",
            default=",".join(ARMS),
            help="Comma-separated arms (default: %(default)s).",
        )

        parser.add_argument(
            "--require-ordering",
            action="store_true",
            default=False,
            help="Fail unless full >= supervised_only in mean test accuracy.",
        )

        return parser

    def execute(self, args):
        cfg = self.load_config(args)
        summaries = run_ablation(
            cfg,
            seeds=args.seeds,
            labels_per_class=args.labels_per_class,
            arms=split_list(args.arms),
            output_dir=self.output_path(args, "ablation"),
            logger=self.logger,
        )

        sweep = args.labels_per_class is not None
        header = ("arm", "seeds", "mean_test_acc", "std_test_acc")
        if sweep:
            header = ("labels_per_class",) + header
        rows = []
        for s in summaries:
            row = (s.arm, ";".join(str(v) for v in s.seeds), s.mean_test_acc, s.std_test_acc)
            rows.append(((s.labels_per_class,) + row) if sweep else row)
            self.logger.info(
                "labels_per_class={} {:<22} mean={:.4f} std={:.4f}".format(
                    s.labels_per_class, s.arm, s.mean_test_acc, s.std_test_acc
                )
            )
        path = write_csv(self.output_path(args, SUMMARY_FILE), header, rows)
        self.logger.info("Wrote {}".format(path))

        if args.require_ordering and not ordering_holds(summaries):
            raise VerificationFailed("mean test accuracy of full is below supervised_only")


def main():
    raise SystemExit(AblateCommand().run())


if __name__ == "__main__":
    main()
