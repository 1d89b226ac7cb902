from pathlib import Path

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Execution
    threads: int = 1

    # Selection
    alpha: float = 0.1
    kappa: float = 1.0
    eps: float = 1.0  # ridge added to every nodewise problem
    omega_scale: float = 1.0
    rule: str = "or"
    cd_tol: float = 1e-10
    cd_max_sweeps: int = 50_000
    kkt_tol: float = 1e-8

    # Laplace approximation
    barrier_scale: float = 1.0  # multiplier of the posterior sd of b, or absolute in fixed mode
    barrier_mode: str = "posterior_sd"
    newton_max_steps: int = 200
    newton_max_halvings: int = 30
    newton_tol: float = 1e-10

    # Pivot grid
    grid_points: int = 1201
    grid_half_width_sd: float = 8.0
    grid_expansion: float = 1.5
    grid_max_expansions: int = 12
    grid_tail_drop: float = 40.0  # log-weight drop required at both endpoints

    # Interval inversion
    ci_tol: float = 1e-6
    ci_max_expansions: int = 20

    # Data splitting baseline
    split_eps: float = 1e-6

    # Storage
    output_dir: Path = Path("runs")
    debug_grid_dir: Path | None = None

    # Progress events
    progress_buffer_size: int = 200

    model_config = {"env_prefix": "SELGRAPH_"}


settings = Settings()
