"""gen-data: roll out a behaviour policy and write an offline dataset."""
from spaars.commands.common import ensure_writable, parse_options
from spaars.models.environment import ENV_REGISTRY
from spaars.services.env_service import env_service
from spaars.utils.checkpoint import resolve_output
from spaars.utils.errors import SpaarsError
from spaars.utils.logger import log_error, log_info

BEHAVIORS = ("expert_noisy", "medium", "random_safe")


def register(subparsers):
    parser = subparsers.add_parser("gen-data", help="Generate an offline (s, a) dataset")
    parser.add_argument("--env", required=True, choices=sorted(ENV_REGISTRY))
    parser.add_argument("--behavior", required=True, choices=BEHAVIORS)
    parser.add_argument("--n-pairs", type=int, required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--noise", type=float, default=0.1)
    parser.add_argument("--env-option", action="append", metavar="KEY=VALUE")
    parser.add_argument("--out", required=True)
    parser.add_argument("--force", action="store_true")
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    """
    Write the dataset file.

    Args:
        args: Parsed arguments

    Returns:
        Exit code 0
    """
    try:
        out = resolve_output(args.out)
        ensure_writable(out, args.force)
        env = env_service.make_env(args.env, seed=args.seed, **parse_options(args.env_option))
        dataset = env_service.generate_dataset(env, args.behavior, args.n_pairs, args.seed, noise=args.noise)
        env_service.save_dataset(dataset, out)
        log_info("Dataset written", path=str(out), pairs=dataset.n_pairs)
        return 0
    except SpaarsError as e:
        log_error("gen-data failed", error=str(e))
        raise
    except Exception as e:
        log_error("gen-data failed - unexpected error", error=str(e))
        raise
