from semisup.contrast.config import write_experiment_config
from semisup.contrast.trainer import (
    Trainer,
    convergence_report,
    prepare_data,
    stats_banner,
    write_metrics_csv,
)

from . import BaseCommand

METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "model.ckpt"
CONFIG_FILE = "config.cfg"


class TrainCommand(BaseCommand):
    """
    Train a model and write the metrics table, checkpoint and effective config.
    """

    name = "train"

    description = "Train the double-contrast semi-supervised model."

    def execute(self, args):
        cfg = self.load_config(args)
        data = prepare_data(cfg)
        self.logger.info(
            "Training on {} samples ({} labeled), {} test samples".format(
                len(data.train),
                len(data.split.labeled_idx),
                len(data.test) if data.test is not None else 0,
            )
        )
        write_experiment_config(cfg, self.output_path(args, CONFIG_FILE))

        trainer = Trainer(cfg.train, policy=cfg.augment, model=cfg.model, logger=self.logger)
        result = trainer.fit(
            data.train,
            data.split,
            test=data.test,
            checkpoint_path=self.output_path(args, CHECKPOINT_FILE),
        )
        path = write_metrics_csv(
            self.output_path(args, METRICS_FILE),
            result.metrics,
            banner=cfg.to_flat() + stats_banner(data.stats),
        )
        self.logger.info("Wrote metrics {}".format(path))

        if result.metrics:
            report = convergence_report(result.metrics, cfg.train.milestones)
            self.logger.info(
                "Total loss epoch {}: {:.6f} -> epoch {}: {:.6f}".format(
                    report.first_epoch, report.first_loss, report.last_epoch, report.last_loss
                )
            )


def main():
    raise SystemExit(TrainCommand().run())


if __name__ == "__main__":
    main()
