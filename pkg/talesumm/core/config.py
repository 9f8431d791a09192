from pydantic_settings import BaseSettings, SettingsConfigDict
from pathlib import Path


class Settings(BaseSettings):
    # Application
    app_name: str = "TaleSumm story summarization"
    log_level: str = "INFO"

    # Reproducibility
    default_seed: int = 0
    deterministic: bool = True
    num_threads: int = 0  # 0 keeps the torch default

    # Model-wide limits
    max_duration_s: float = 7200.0
    max_groups: int = 256

    # Paths
    schema_dir: Path = Path("./schemas")

    model_config = SettingsConfigDict(env_prefix="TALESUMM_", env_file=".env", extra="ignore")


settings = Settings()
