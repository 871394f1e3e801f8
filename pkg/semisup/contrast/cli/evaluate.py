import os

from semisup.contrast.trainer import evaluate, prepare_data
from semisup.contrast.utils.checkpoint import load_checkpoint

from . import BaseCommand
from .train import CHECKPOINT_FILE


class EvaluateCommand(BaseCommand):
    """
    Report the accuracy of a trained checkpoint on the experiment's test set.
    """

    name = "eval"

    description = "Evaluate a checkpoint and print its accuracy."

    def build_parser(self):
        parser = super().build_parser()

        parser.add_argument(
            "--checkpoint",
            default=None,
            help="Checkpoint to evaluate (default: model.ckpt in the output directory).",
        )

        parser.add_argument(
            "--split",
            choices=("test", "train"),
            default="test",
            help="Which split to evaluate on.",
        )

        return parser

    def execute(self, args):
        cfg = self.load_config(args)
        path = args.checkpoint or os.path.join(args.output_dir, CHECKPOINT_FILE)
        params = load_checkpoint(path)
        data = prepare_data(cfg)
        ds = data.train if args.split == "train" or data.test is None else data.test
        accuracy = evaluate(params, ds)
        self.logger.info("{} accuracy on {} ({} samples)".format(path, ds.name, len(ds)))
        print("accuracy={:.6f}".format(accuracy))


def main():
    raise SystemExit(EvaluateCommand().run())


if __name__ == "__main__":
    main()
