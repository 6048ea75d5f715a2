"""train-cvae: Phase 0 on its own."""
import json

from spaars.commands.common import ensure_writable, load_config, parse_options
from spaars.models.environment import ENV_REGISTRY
from spaars.schemas.cvae_schemas import CvaeTrainConfig
from spaars.services.cvae_service import cvae_service
from spaars.services.env_service import env_service
from spaars.utils.checkpoint import resolve_output
from spaars.utils.errors import SpaarsError
from spaars.utils.logger import log_error, log_info


def register(subparsers):
    parser = subparsers.add_parser("train-cvae", help="Pretrain and freeze the CVAE")
    parser.add_argument("--env", required=True, choices=sorted(ENV_REGISTRY))
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--config", help="CvaeTrainConfig JSON file")
    parser.add_argument("--env-option", action="append", metavar="KEY=VALUE")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epsilon-info", type=float, default=0.1)
    parser.add_argument("--out", required=True)
    parser.add_argument("--force", action="store_true")
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    try:
        out = resolve_output(args.out)
        ensure_writable(out, args.force)
        config = load_config(args.config, CvaeTrainConfig)
        env = env_service.make_env(args.env, seed=args.seed, **parse_options(args.env_option))
        dataset = env_service.load_dataset(args.dataset, env.spec)

        model, epochs = cvae_service.train_cvae(dataset, config, args.seed, action_bounds=env.action_bounds)
        cvae_service.save_model(model, out)
        eps_rec, eps_sup = cvae_service.reconstruction_error(model, dataset)
        collapse = cvae_service.collapse_check(model, dataset, args.epsilon_info)
        summary = {
            "checkpoint": str(out),
            "latent_dim": model.latent_dim,
            "eps_rec": eps_rec,
            "eps_rec_sup": eps_sup,
            "final_epoch": epochs[-1].model_dump(),
            "collapse": collapse.model_dump(),
        }
        print(json.dumps(summary, indent=2))
        log_info("CVAE checkpoint written", path=str(out), eps_rec=eps_rec, collapsed=collapse.collapsed)
        return 0
    except SpaarsError as e:
        log_error("train-cvae failed", error=str(e))
        raise
    except Exception as e:
        log_error("train-cvae failed - unexpected error", error=str(e))
        raise
