"""eval: deterministic evaluation of a saved policy snapshot."""
import json

from spaars.models.learners import LearnerBundle
from spaars.services.curriculum_service import curriculum_service
from spaars.services.env_service import env_service
from spaars.utils.errors import SpaarsError
from spaars.utils.logger import log_error, log_info


def register(subparsers):
    parser = subparsers.add_parser("eval", help="Evaluate a trained policy")
    parser.add_argument("--policy", required=True, help="policy.joblib or a gate snapshot")
    parser.add_argument("--episodes", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    try:
        snapshot = curriculum_service.load_policy_snapshot(args.policy)
        config = snapshot["config"]
        env = env_service.make_env(config.env, seed=args.seed, **config.env_options)
        bundle = LearnerBundle(
            latent_actor=snapshot["latent_actor"],
            raw_actor=snapshot["raw_actor"],
            critic=snapshot["critic"],
            rnd=None,
            buffer=None,
            scaler=snapshot["critic"].scaler,
        )
        mean_return = curriculum_service.evaluate_policy(
            bundle, snapshot["model"], env, snapshot["state"], config.curriculum, args.episodes, args.seed
        )
        result = {"policy": args.policy, "step": snapshot["step"], "phase": snapshot["state"].phase,
                  "episodes": args.episodes, "mean_return": mean_return}
        print(json.dumps(result))
        log_info("Policy evaluated", **result)
        return 0
    except SpaarsError as e:
        log_error("eval failed", error=str(e))
        raise
    except Exception as e:
        log_error("eval failed - unexpected error", error=str(e))
        raise
