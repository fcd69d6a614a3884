import logging
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml
from pydantic import Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from fp_control.core.errors import ConfigError
from fp_control.forward import gaussian_density
from fp_control.grid import FloatArray, Grid, make_grid
from fp_control.model import BailoutParams, ModelSpec, bailout_model
from fp_control.picard import PicardOptions

logger = logging.getLogger(__name__)


class ScenarioConfig(BaseSettings):
    """
    Flat scenario description read from a JSON or YAML file.

    Only explicit values count: environment variables and dotenv files are ignored.
    """

    model_config = SettingsConfigDict(extra="forbid")

    model: Literal["bailout"] = Field("bailout", description="Model selector")

    # grid
    x_min: float = Field(-4.0, description="Left end of the truncated domain")
    x_max: float = Field(6.0, description="Right end of the truncated domain")
    n_x: int = Field(199, ge=3, description="Number of interior nodes")
    t_horizon: float = Field(1.0, gt=0, description="Time horizon T (also the bailout T)")
    n_t: int = Field(400, ge=1, description="Number of time steps")
    eta0: float = Field(0.1, ge=0, description="Growth rate of the L²_eta weight")

    # bailout model
    sigma: float = Field(0.5, gt=0, description="Idiosyncratic volatility")
    sigma0: float = Field(0.0, ge=0, description="Common-noise volatility")
    kappa: float = Field(0.0, ge=0, description="Contagion strength")
    w_weight: float = Field(0.3, gt=0, description="Weight of the capital injections")
    g_max: float = Field(1.0, gt=0, description="Maximal injection rate")
    hazard_max: float = Field(2.0, gt=0, description="Supremum of the default intensity")
    hazard_scale: float = Field(0.5, gt=0, description="Length scale of the default intensity")
    initial_mean: float = Field(0.3, description="Mean of the Gaussian initial capital")
    initial_sd: float = Field(0.5, gt=0, description="Std. deviation of the initial capital")

    # Picard
    max_iters: int = Field(200, ge=1, description="Maximum number of Picard sweeps")
    tol: float = Field(1e-5, gt=0, description="Picard residual tolerance")
    damping: float = Field(0.5, gt=0, le=1, description="Picard damping theta")
    smoothing_schedule: list[float] = Field(
        default_factory=lambda: [0.1, 0.03, 0.01, 0.0],
        description="Annealed control smoothing values",
    )

    # gradient check
    gradcheck_eps: float = Field(1e-3, gt=0, description="Finite-difference step")
    gradcheck_pairs: int = Field(5, ge=1, description="Number of random (gamma, h) pairs")

    # particles and comparisons
    n_particles: int = Field(10_000, ge=1, description="Particles per simulation")
    n_paths: int = Field(1, ge=1, description="Common-noise paths in cost estimates")
    killing: Literal["weights", "clock"] = Field("weights", description="Killing mechanism")
    n_trials: int = Field(20, ge=0, description="Random controls in the cost comparison")
    shift_margin: float | None = Field(
        None, gt=0, description="Largest admissible |sigma0 W_t|; default a quarter domain"
    )

    seed: int = Field(0, ge=0, description="Base random seed")
    out_dir: Path = Field(Path("out"), description="Directory receiving the artifacts")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings,)

    @model_validator(mode="after")
    def _check_ranges(self) -> "ScenarioConfig":
        self.grid()
        self.picard_options()
        return self

    def grid(self) -> Grid:
        return make_grid(self.x_min, self.x_max, self.n_x, self.t_horizon, self.n_t, self.eta0)

    def bailout_params(self) -> BailoutParams:
        return BailoutParams(
            sigma=self.sigma,
            sigma0=self.sigma0,
            kappa=self.kappa,
            w_weight=self.w_weight,
            g_max=self.g_max,
            hazard_max=self.hazard_max,
            hazard_scale=self.hazard_scale,
            T=self.t_horizon,
            initial_mean=self.initial_mean,
            initial_sd=self.initial_sd,
        )

    def model_spec(self) -> ModelSpec:
        return bailout_model(self.bailout_params())

    def picard_options(self) -> PicardOptions:
        return PicardOptions(
            max_iters=self.max_iters,
            tol=self.tol,
            damping=self.damping,
            smoothing_schedule=self.smoothing_schedule,
        )

    def initial_density(self, g: Grid) -> FloatArray:
        return np.asarray(gaussian_density(g, self.initial_mean, self.initial_sd))


def parse_override(item: str) -> tuple[str, Any]:
    """Split ``KEY=VALUE``; the value is read as a YAML scalar or flow sequence."""
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override '{item}' is not of the form KEY=VALUE")
    try:
        return key, yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"override '{key}' has an unparsable value: {e}") from e


def load_scenario(
    path: str | Path, overrides: list[str] | None = None, **values: Any
) -> ScenarioConfig:
    """
    Read a scenario file, apply the overrides, then ``values``, and validate.

    Raises:
        ConfigError: if the file is missing or unparsable, an override is malformed, or a value
            fails validation. The message names the offending path or keys.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"could not parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping of keys to values")

    for item in overrides or []:
        key, value = parse_override(item)
        data[key] = value
    data.update(values)

    try:
        config = ScenarioConfig(**data)
    except ValidationError as e:
        keys = ", ".join(
            ".".join(str(p) for p in err["loc"]) or "<scenario>" for err in e.errors()
        )
        raise ConfigError(f"invalid scenario {path} ({keys}): {e}") from e
    logger.debug("Loaded scenario %s with %d override(s)", path, len(overrides or []))
    return config
