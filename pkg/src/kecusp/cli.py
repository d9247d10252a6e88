import argparse
import json
import logging
import os
import sys

import sentry_sdk
from dotenv import load_dotenv
from pydantic import ValidationError

from kecusp.core.geom import DomainError
from kecusp.core.lab_run import DiagnosticFailure, LabRun
from kecusp.services.analysis import AnalysisError
from kecusp.services.collapse import LatticeError
from kecusp.services.solver import SolverError
from kecusp.utils.config_loader import (
    PRESETS_DIR,
    ConfigError,
    available_presets,
    format_validation_error,
    load_config,
    load_json,
    load_preset,
)
from kecusp.utils.logger import setup_logging

load_dotenv()

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_DIAGNOSTIC = 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kecusp",
        description="Numerical lab for Kähler-Einstein metrics near cusps and cone singularities.",
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="path to a JSON run config")
    source.add_argument(
        "--preset", help=f"name of a bundled preset ({', '.join(available_presets())})"
    )
    source.add_argument("--dump-preset", metavar="NAME", help="print a bundled preset and exit")
    parser.add_argument("--out", help="output directory (overrides output_dir and KECUSP_OUT_DIR)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, help="worker threads for independent solves")
    return parser


def _resolve(args):
    config = load_config(args.config) if args.config else load_preset(args.preset)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if overrides:
        # revalidate so overridden fields go through the same checks
        config = type(config).model_validate({**config.model_dump(mode="json"), **overrides})
    out_dir = args.out or os.getenv("KECUSP_OUT_DIR") or config.output_dir
    return config, out_dir


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(os.getenv("KECUSP_LOG_LEVEL", "INFO"))

    if args.dump_preset:
        path = os.path.join(PRESETS_DIR, f"{args.dump_preset}.json")
        try:
            print(json.dumps(load_json(path), indent=2))
        except ConfigError:
            logger.error(
                f"Unknown preset '{args.dump_preset}'. Available presets: {', '.join(available_presets())}"
            )
            return EXIT_CONFIG
        return EXIT_OK

    try:
        config, out_dir = _resolve(args)
        LabRun(config, out_dir).run()
    except ValidationError as e:
        logger.error(f"Invalid config: {format_validation_error(e)}")
        return EXIT_CONFIG
    except (ConfigError, DomainError) as e:
        logger.error(f"Invalid config: {e}")
        return EXIT_CONFIG
    except SolverError as e:
        logger.error(f"Solver failed: {e}")
        return EXIT_SOLVER
    except (DiagnosticFailure, AnalysisError, LatticeError) as e:
        logger.error(f"Diagnostics failed: {e}")
        return EXIT_DIAGNOSTIC
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        with sentry_sdk.new_scope() as scope:
            scope.set_tag("task", "lab_run")
            sentry_sdk.capture_exception(e)
        return EXIT_INTERNAL
    logger.info(f"Artifacts written to {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sentry_sdk.init(dsn=os.getenv("SENTRY_DSN"), traces_sample_rate=1.0)
    sys.exit(main())
