"""Command-line entry point.

    fracnet generate --config study.cfg --out runs/a
    fracnet simulate --config study.cfg --out runs/a
    fracnet features --config study.cfg --out runs/a
    fracnet train    --config study.cfg --out runs/a
    fracnet report   --config study.cfg --out runs/a
    fracnet all      --config study.cfg --out runs/a

Exit codes: 0 success, 2 completed with partial failures, 1 fatal error.
The FRACNET_OUT and FRACNET_WORKERS environment variables override the
output directory and worker count; an explicit --out wins over both.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import dataset as ds
from . import pipeline
from .config import StudyConfig, load_config

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracnet",
        description="Fracture-network dissolution study pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("generate", "generate the network ensemble"),
            ("simulate", "run reactive simulations for every rate constant"),
            ("features", "assemble the feature dataset CSV"),
            ("train", "train the regression models"),
            ("report", "train (if needed) and emit tables and plots"),
            ("all", "run every stage")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--out", help="output directory")
    return parser


def _load(args) -> tuple[StudyConfig, str]:
    cfg = load_config(args.config) if args.config else StudyConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    out = args.out or os.environ.get("FRACNET_OUT") or cfg.output_dir
    return cfg, out


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg, out = _load(args)
        summary = pipeline.EnsembleSummary()
        if args.command == "generate":
            summary = pipeline.generate_stage(cfg, out)
            print(f"generated {len(summary.generated)} networks "
                  f"({len(summary.skipped_disconnected)} disconnected draws "
                  f"skipped) in {out}/networks")
        elif args.command == "simulate":
            summary = pipeline.generate_stage(cfg, out)
            summary = pipeline.simulate_stage(cfg, out, summary)
            print(f"simulated {len(summary.simulated)} runs, reused "
                  f"{len(summary.reused)}, failed {len(summary.failed)}")
        elif args.command == "features":
            summary = pipeline.generate_stage(cfg, out)
            summary = pipeline.simulate_stage(cfg, out, summary)
            path = pipeline.features_stage(cfg, out, summary)
            print(f"dataset written: {path}")
        elif args.command in ("train", "report"):
            csv_path = os.path.join(out, "features", "dataset.csv")
            if not os.path.exists(csv_path):
                print(f"no dataset at {csv_path}; run `fracnet features` "
                      "first", file=sys.stderr)
                return EXIT_FATAL
            table = ds.FeatureTable.from_csv(csv_path)
            study = pipeline.train_models(table, cfg)
            if args.command == "report":
                files = pipeline.report_stage(study, out)
                print(f"report: {len(files)} files under {out}/report")
            else:
                for s in study.scores:
                    print(f"{s.model} {s.variant}: train {s.r2_train:.4f} "
                          f"test {s.r2_test:.4f} oob {s.oob:.4f}")
        elif args.command == "all":
            summary, study = pipeline.run_all(cfg, out)
            print(f"networks {len(summary.generated)}, sims "
                  f"{len(summary.simulated) + len(summary.reused)}, failed "
                  f"{len(summary.failed)}; report under {out}/report")
        if summary.has_failures:
            for name, err in summary.failed.items():
                print(f"FAILED {name}:\n{err}", file=sys.stderr)
            return EXIT_PARTIAL
        return EXIT_OK
    except Exception as exc:  # fatal
        print(f"fatal: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
