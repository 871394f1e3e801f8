import os

from semisup.contrast.trainer import export_features, prepare_data
from semisup.contrast.utils.checkpoint import load_checkpoint

from . import BaseCommand
from .train import CHECKPOINT_FILE


class ExportFeaturesCommand(BaseCommand):
    """
    Write the encoder features of a dataset split for external visualization.
    """

    name = "export-features"

    description = "Export learned features as CSV."

    def build_parser(self):
        parser = super().build_parser()

        parser.add_argument(
            "--checkpoint",
            default=None,
            help="Checkpoint to load (default: model.ckpt in the output directory).",
        )

        parser.add_argument(
            "--split",
            choices=("test", "train"),
            default="test",
            help="Which split to export.",
        )

        parser.add_argument(
            "--filename",
            default="features.csv",
            help="Output file name inside the output directory.",
        )

        return parser

    def execute(self, args):
        cfg = self.load_config(args)
        params = load_checkpoint(
            args.checkpoint or os.path.join(args.output_dir, CHECKPOINT_FILE)
        )
        data = prepare_data(cfg)
        ds = data.train if args.split == "train" or data.test is None else data.test
        path = export_features(params, ds, self.output_path(args, args.filename))
        self.logger.info("Wrote {} feature rows to {}".format(len(ds), path))


def main():
    raise SystemExit(ExportFeaturesCommand().run())


if __name__ == "__main__":
    main()
