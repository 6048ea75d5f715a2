"""train: the full curriculum from a RunConfig file."""
import json
from pathlib import Path

from spaars.commands.common import ensure_writable, load_config
from spaars.schemas.run_schemas import RunConfig
from spaars.services.curriculum_service import curriculum_service
from spaars.services.cvae_service import cvae_service
from spaars.services.env_service import env_service
from spaars.utils.checkpoint import resolve_output
from spaars.utils.errors import ConfigurationError, SpaarsError
from spaars.utils.logger import log_error, log_info


def register(subparsers):
    parser = subparsers.add_parser("train", help="Run curriculum training")
    parser.add_argument("--config", required=True, help="RunConfig JSON file")
    parser.add_argument("--resume", action="store_true", help="Continue from the latest checkpoint")
    parser.add_argument("--force", action="store_true", help="Overwrite an existing run directory")
    parser.set_defaults(handler=handle)


def handle(args) -> int:
    """
    Validate everything the run references, then train.

    Every configuration problem surfaces here, before the environment is stepped.
    """
    try:
        config = load_config(args.config, RunConfig)
        dataset_path = Path(config.dataset_path)
        if not dataset_path.exists():
            raise ConfigurationError(f"Dataset not found: {dataset_path}")
        if config.cvae_checkpoint is not None and not Path(config.cvae_checkpoint).exists():
            raise ConfigurationError(f"CVAE checkpoint not found: {config.cvae_checkpoint}")

        run_dir = resolve_output(config.output_dir)
        if not args.resume:
            ensure_writable(run_dir / "metrics.jsonl", args.force)

        env = env_service.make_env(config.env, seed=config.seed, **config.env_options)
        dataset = env_service.load_dataset(dataset_path, env.spec)
        model = cvae_service.load_model(config.cvae_checkpoint) if config.cvae_checkpoint else None

        result = curriculum_service.run_training(config, env, dataset, model=model, resume=args.resume)
        final_return = curriculum_service.evaluate_policy(
            result.bundle, result.model, env, result.state, config.curriculum, episodes=10, seed=config.seed + 1
        )
        report = {
            "run_dir": str(result.run_dir),
            "phases": result.state.phase_history,
            "final_eval_return": final_return,
            "behavior_return": env_service.behavior_return(
                config.env, dataset.metadata.behavior, episodes=10, seed=config.seed + 1,
                noise=dataset.metadata.noise, **config.env_options,
            ),
        }
        (result.run_dir / "final_report.json").write_text(json.dumps(report, indent=2))
        print(json.dumps(report, indent=2))
        log_info("Training run complete", **report)
        return 0
    except SpaarsError as e:
        log_error("train failed", error=str(e))
        raise
    except Exception as e:
        log_error("train failed - unexpected error", error=str(e))
        raise
