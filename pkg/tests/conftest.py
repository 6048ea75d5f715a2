import os
import tempfile

# settings are read at import time
_SESSION_DIR = tempfile.mkdtemp(prefix="spaars-tests-")
os.environ.setdefault("SPAARS_LOG_DIR", os.path.join(_SESSION_DIR, "logs"))
os.environ.setdefault("SPAARS_OUTPUT_ROOT", os.path.join(_SESSION_DIR, "runs"))
os.environ.setdefault("SPAARS_N_JOBS", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def bandit_dataset():
    from spaars.models.environment import QuadraticBandit
    from spaars.services.env_service import env_service

    return env_service.generate_dataset(QuadraticBandit(action_dim=4), "expert_noisy", 600, seed=0)


@pytest.fixture(scope="session")
def bandit_cvae(bandit_dataset):
    from spaars.schemas.cvae_schemas import CvaeTrainConfig
    from spaars.services.cvae_service import cvae_service

    config = CvaeTrainConfig(hidden_sizes=[16, 16], epochs=60, anneal_steps=50, batch_size=100, learning_rate=3e-3)
    model, _ = cvae_service.train_cvae(bandit_dataset, config, seed=0)
    return model


@pytest.fixture(scope="session")
def reach_dataset():
    from spaars.models.environment import Reach1d
    from spaars.services.env_service import env_service

    return env_service.generate_dataset(Reach1d(), "medium", 600, seed=0)


@pytest.fixture(scope="session")
def reach_cvae(reach_dataset):
    from spaars.schemas.cvae_schemas import CvaeTrainConfig
    from spaars.services.cvae_service import cvae_service

    config = CvaeTrainConfig(latent_dim=1, hidden_sizes=[16, 16], epochs=40, anneal_steps=50, batch_size=100, learning_rate=3e-3)
    model, _ = cvae_service.train_cvae(reach_dataset, config, seed=0)
    return model
