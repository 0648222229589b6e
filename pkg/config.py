"""Configuration settings for the refchoice toolkit."""

import os
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv

load_dotenv()

PAIRING_POLICIES = ("paper", "extended")


def _default_threads() -> int:
    return os.cpu_count() or 1


class Settings:
    """Toolkit settings loaded from environment variables."""

    # App Configuration
    APP_NAME: str = os.getenv("APP_NAME", "refchoice")
    APP_VERSION: str = os.getenv("REFCHOICE_VERSION", "1.0.0")
    LOG_LEVEL: str = os.getenv("REFCHOICE_LOG_LEVEL", "INFO").upper()

    # Parallelism
    THREADS: int = int(os.getenv("REFCHOICE_THREADS", str(_default_threads())))

    # Estimation defaults
    PAIRING: str = os.getenv("REFCHOICE_PAIRING", "paper")
    MAX_ITER: int = int(os.getenv("REFCHOICE_MAX_ITER", "500"))
    GRADIENT_TOL: float = float(os.getenv("REFCHOICE_GRADIENT_TOL", "1e-5"))
    FTOL_REL: float = float(os.getenv("REFCHOICE_FTOL_REL", "1e-9"))
    FD_STEP: float = float(os.getenv("REFCHOICE_FD_STEP", "1e-5"))
    HESSIAN_STEP: float = float(os.getenv("REFCHOICE_HESSIAN_STEP", "1e-4"))

    # Shipped JSON documents (model specs, published parameters, profiles)
    PRESET_DIR: Path = Path(
        os.getenv("REFCHOICE_PRESET_DIR", str(Path(__file__).parent / "presets"))
    )

    def resolve_threads(self, requested: Optional[int] = None) -> int:
        """CLI flag wins, then REFCHOICE_THREADS, then the machine core count."""
        if requested is not None:
            return max(1, int(requested))
        return max(1, self.THREADS)

    def validate_config(self) -> None:
        """Validate that configuration values are usable."""
        problems = []

        if self.THREADS < 1:
            problems.append("REFCHOICE_THREADS must be >= 1")
        if self.PAIRING not in PAIRING_POLICIES:
            problems.append(f"REFCHOICE_PAIRING must be one of {', '.join(PAIRING_POLICIES)}")
        if self.MAX_ITER < 1:
            problems.append("REFCHOICE_MAX_ITER must be >= 1")
        for var_name, var_value in [
            ("REFCHOICE_GRADIENT_TOL", self.GRADIENT_TOL),
            ("REFCHOICE_FTOL_REL", self.FTOL_REL),
            ("REFCHOICE_FD_STEP", self.FD_STEP),
            ("REFCHOICE_HESSIAN_STEP", self.HESSIAN_STEP),
        ]:
            if not var_value > 0:
                problems.append(f"{var_name} must be positive")

        if problems:
            raise ValueError(f"Invalid configuration: {'; '.join(problems)}")


# Global settings instance
settings = Settings()
