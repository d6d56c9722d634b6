from pydantic_settings import BaseSettings
from typing import List


class Settings(BaseSettings):
    # Database
    database_url: str = "sqlite:///./beltrami.db"

    # Environment
    environment: str = "development"
    debug: bool = True
    log_level: str = "INFO"
    tool_version: str = "1.0.0"

    # CORS
    allowed_origins: List[str] = ["http://localhost:3000"]

    # Discretization
    default_resolution: int = 32
    structure_tolerance: float = 1e-10

    # Solver defaults
    solver_max_iterations: int = 60
    solver_tolerance: float = 1e-8
    cutoff_inner_radius: float = 0.75
    mu_bound_limit: float = 0.2
    containment_margin: float = 1e-3

    # Metric estimation
    royden_bisection_steps: int = 12
    punctured_validity_radius: float = 0.3
    metric_slack: float = 0.05

    # Schwarz scans
    brody_max_relocations: int = 50

    # Linking
    fr_min_angle_degrees: float = 5.0
    slice_max_step: float = 0.01

    class Config:
        env_file = ".env"


def get_settings() -> Settings:
    return Settings()
