"""verify: run the oracle checks and print one report per line."""
from spaars.commands.common import load_config
from spaars.schemas.verify_schemas import VerifyConfig
from spaars.services.verify_service import CHECKS, verify_service
from spaars.utils.errors import SpaarsError, VerificationFailure
from spaars.utils.logger import log_error


def register(subparsers):
    parser = subparsers.add_parser("verify", help="Numerically check the guarantees")
    parser.add_argument("--checks", nargs="*", choices=CHECKS, help="Subset of checks (default: all)")
    parser.add_argument("--artifacts-dir", default="verify")
    parser.add_argument("--config", help="VerifyConfig JSON file")
    parser.add_argument("--seed", type=int, default=0)
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    try:
        config = load_config(args.config, VerifyConfig)
        reports = verify_service.run_suite(args.checks, args.artifacts_dir, seed=args.seed, config=config)
        for report in reports:
            print(report.model_dump_json())
        print(f"{'check':<40} {'measured':>12} {'bound':>12} status")
        for report in reports:
            print(f"{report.name:<40} {report.measured:>12.6g} {report.bound:>12.6g} {report.status}")

        failed = [r.name for r in reports if r.counts_as_failure]
        if failed:
            raise VerificationFailure(f"Failed checks: {failed}")
        return 0
    except SpaarsError as e:
        log_error("verify failed", error=str(e))
        raise
    except Exception as e:
        log_error("verify failed - unexpected error", error=str(e))
        raise
