import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"\n[FATAL] {name} must be an integer, got {raw!r}\n")


class Config:
    # --- Environment overrides ---
    SEED = _env_int("STRATA_SEED", 0)
    WORKERS = _env_int("STRATA_WORKERS", 1)
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

    # --- Paths ---
    RUNS_DIR = os.getenv("STRATA_RUNS_DIR", "runs")
    LOG_DIR = os.getenv("STRATA_LOG_DIR", "logs")
    FIXTURES_DIR = os.getenv("STRATA_FIXTURES_DIR", "fixtures")
    FIXTURE_CHECKSUMS = "checksums.sha256"

    # --- Photometric objective ---
    SSIM_ALPHA = 0.85
    SSIM_C1 = 0.01 ** 2
    SSIM_C2 = 0.03 ** 2
    LAMBDA_BASE = 0.001                      # lambda = 0.001 * scale
    SCALES = (1.0, 0.5, 0.25, 0.125)
    LOSS_EPS = 1e-7                           # clamp for log/division inside losses
    ABLATION_MASK_SMOOTH_WEIGHT = 0.01        # mask smoothing when depth ordering is off

    # --- Geometry ---
    POSE_SCALE = 0.01
    EPS_Z = 1e-6
    RODRIGUES_TAYLOR_BELOW = 1e-4
    SAMPLE_SNAP = 1e-9                        # sample coords this close to a pixel center land on it

    # --- Evaluation ---
    DEPTH_MIN = 1e-3
    DEPTH_MAX = 80.0
    MASK_THRESHOLD = 0.5

    # --- Adam defaults ---
    ADAM_LR = 1e-4
    ADAM_BETA1 = 0.9
    ADAM_BETA2 = 0.999
    ADAM_EPS = 1e-8

    # --- Direct-variable fitting schedule ---
    FIT_LR = 1e-2
    FIT_LR_DROP_FACTOR = 0.1
    FIT_LR_DROP_AT = 0.75
    FIT_INIT_DEPTH = 10.0

    # --- Selfcheck ---
    SELFCHECK_BUDGET_S = 60.0

    @classmethod
    def resolve_seed(cls, cli_value: Optional[int] = None, spec_value: Optional[int] = None) -> int:
        """CLI flag > env var > spec file > default."""
        if cli_value is not None:
            return cli_value
        if os.getenv("STRATA_SEED"):
            return cls.SEED
        return spec_value if spec_value is not None else cls.SEED

    @classmethod
    def resolve_workers(cls, cli_value: Optional[int] = None, spec_value: Optional[int] = None) -> int:
        if cli_value is not None:
            return max(1, cli_value)
        if os.getenv("STRATA_WORKERS"):
            return max(1, cls.WORKERS)
        return max(1, spec_value if spec_value is not None else cls.WORKERS)

    @classmethod
    def require_fixtures_dir(cls) -> str:
        """Validates that the shipped fixture directory is reachable."""
        if not os.path.isdir(cls.FIXTURES_DIR):
            raise SystemExit(
                f"\n[FATAL] Fixture directory not found: {cls.FIXTURES_DIR}\n"
                "Run from the repository root or point STRATA_FIXTURES_DIR at it:\n"
                "  STRATA_FIXTURES_DIR=/path/to/strata/fixtures\n"
            )
        return cls.FIXTURES_DIR
