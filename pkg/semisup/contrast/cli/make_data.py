from semisup.contrast.config import write_experiment_config
from semisup.contrast.data import Dataset
from semisup.contrast.exc import CommandError
from semisup.contrast.trainer import load_datasets
from semisup.contrast.utils.csvio import write_csv

from . import BaseCommand

DATA_CONFIG_FILE = "dataset.cfg"


def _sample_rows(ds: Dataset):
    for i, (label, x) in enumerate(zip(ds.y, ds.x)):
        yield [i, int(label)] + [float(v) for v in x]


class MakeDataCommand(BaseCommand):
    """
    Materialize a synthetic dataset: the effective config that regenerates it
    and, optionally, the samples themselves.
    """

    name = "make-data"

    description = "Write a synthetic dataset config (and optionally its samples)."

    def build_parser(self):
        parser = super().build_parser()

        parser.add_argument(
            "--samples",
            action="store_true",
            default=False,
            help="Also write train.csv and test.csv with the raw samples.",
        )

        return parser

    def execute(self, args):
        cfg = self.load_config(args)
        if cfg.data.kind != "blobs":
            raise CommandError("make-data only materializes synthetic (blobs) datasets")

        path = self.output_path(args, DATA_CONFIG_FILE)
        write_experiment_config(cfg, path)
        self.logger.info("Wrote {}".format(path))

        if args.samples:
            train, test = load_datasets(cfg.data, cfg.train.seed)
            header = ["sample_index", "label"] + [
                "x{}".format(i) for i in range(train.input_dim)
            ]
            for filename, ds in (("train.csv", train), ("test.csv", test)):
                if ds is None:
                    continue
                write_csv(self.output_path(args, filename), header, _sample_rows(ds))
                self.logger.info("Wrote {} samples to {}".format(len(ds), filename))


def main():
    raise SystemExit(MakeDataCommand().run())


if __name__ == "__main__":
    main()
