"""Application configuration management."""
import os
from dotenv import load_dotenv

load_dotenv()


class Settings:
    """Process settings loaded from environment variables."""

    # Output
    OUTPUT_ROOT: str = os.getenv("SPAARS_OUTPUT_ROOT", "runs")

    # Logging
    LOG_DIR: str = os.getenv("SPAARS_LOG_DIR", "logs")
    LOG_LEVEL: str = os.getenv("SPAARS_LOG_LEVEL", "INFO")

    # Verification workers
    N_JOBS: int = int(os.getenv("SPAARS_N_JOBS", "1"))

    # Checkpoint payload version
    FORMAT_VERSION: int = 1


settings = Settings()
