"""Pipeline configuration: defaults, validation and the TOML config file."""

import hashlib
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ImportError:
    import tomli as tomllib

import tomli_w
from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from .errors import FormatError, InputValidationError


class PipelineConfig(BaseSettings):
    """All tunable parameters of the mapping pipeline.

    Values come only from explicit initialisation (a config file or keyword
    arguments); the environment is never consulted.
    """

    model_config = SettingsConfigDict(frozen=True, extra="forbid")

    # Ephemerality kernel and thresholds
    alpha: float = Field(0.5, description="Kernel scale: neutral evidence value")
    beta: float = Field(0.1, description="Kernel offset: strongest evidence distance from alpha")
    sigma_o: float = Field(0.1, description="Occupied kernel standard deviation (m)")
    sigma_f: float = Field(0.4, description="Free-space kernel standard deviation (m)")
    tau_l: float = Field(0.5, description="Local threshold: eps_l below it is static")
    tau_g: float = Field(0.7, description="Global threshold: eps_g below it is static")
    k_uncertainty: float = Field(0.6, description="Scale applied to emerged points' eps_l")
    knn: int = Field(6, description="Neighbours updated by each ray sample")
    free_sample_step: float = Field(0.5, description="Spacing of free-space samples along a ray (m)")
    endpoint_margin: float = Field(0.5, description="Free samples stop this far short of the endpoint (m)")
    passes: int = Field(1, description="Propagation passes over a session's ray samples")

    # Map update
    nn_radius: float = Field(0.2, description="Correspondence radius for point classification (m)")
    density_radius: float = Field(0.5, description="Objectness neighbourhood radius (m)")
    density_saturation: int = Field(40, description="Neighbour count at which objectness saturates")
    voxel_size: float = Field(0.1, description="Map compaction cell size (m)")
    coverage_cell: float = Field(1.0, description="Coverage grid cell size (m)")
    compact_map: bool = Field(True, description="Voxel-compact the lifelong map after each update")
    compact_session: bool = Field(True, description="Voxel-compact the aggregated session map")
    heatmap_floor: float = Field(0.1, description="Minimum |delta eps_g| counted by the heatmap")

    # Alignment
    max_range: float = Field(80.0, description="Maximum sensor range (m)")
    scan_voxel: float = Field(0.2, description="Scan decimation cell before registration (m)")
    gicp_neighbors: int = Field(20, description="Neighbourhood size for GICP covariances")
    gicp_max_iterations: int = Field(50, description="Gauss-Newton iteration limit")
    gicp_tolerance: float = Field(1e-6, description="Convergence threshold on the update norm")
    max_correspondence_distance: float = Field(1.0, description="Correspondence rejection gate (m)")
    weighted_registration: bool = Field(True, description="Weight correspondences by 1 - eps_g")
    max_failure_fraction: float = Field(0.3, description="Fraction of failed scans that aborts alignment")
    loop_rings: int = Field(20, description="Loop descriptor ring count")
    loop_sectors: int = Field(60, description="Loop descriptor sector count")
    loop_max_radius: float = Field(80.0, description="Loop descriptor outer radius (m)")
    loop_threshold: float = Field(0.3, description="Maximum descriptor distance accepted as a loop")
    loop_refine: bool = Field(True, description="Refine the loop seed by scan-to-scan registration")
    loop_candidates: int = Field(5, description="Descriptor matches verified by overlap with the anchors")
    anchor_stride: int = Field(1, description="Keep every n-th scan of the last session as anchor")

    # Evaluation and runtime
    sigma_inlier: float = Field(0.5, description="Inlier gate for alignment metrics (m)")
    match_radius: float = Field(0.05, description="Point matching radius for cleaning metrics (m)")
    block_size: float = Field(10.0, description="Spatial block edge for parallel accumulation (m)")

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

    @field_validator("alpha", "tau_l", "tau_g", "max_failure_fraction")
    @classmethod
    def _open_unit(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("must lie in (0, 1)")
        return v

    @field_validator("k_uncertainty")
    @classmethod
    def _half_open_unit(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError("must lie in (0, 1]")
        return v

    @field_validator(
        "sigma_o",
        "sigma_f",
        "free_sample_step",
        "nn_radius",
        "density_radius",
        "voxel_size",
        "coverage_cell",
        "max_range",
        "scan_voxel",
        "gicp_tolerance",
        "max_correspondence_distance",
        "loop_max_radius",
        "loop_threshold",
        "sigma_inlier",
        "match_radius",
        "block_size",
    )
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0.0:
            raise ValueError("must be > 0")
        return v

    @field_validator("endpoint_margin", "heatmap_floor")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if not v >= 0.0:
            raise ValueError("must be >= 0")
        return v

    @field_validator(
        "knn",
        "passes",
        "density_saturation",
        "gicp_neighbors",
        "gicp_max_iterations",
        "loop_rings",
        "loop_sectors",
        "loop_candidates",
        "anchor_stride",
    )
    @classmethod
    def _at_least_one(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @model_validator(mode="after")
    def _beta_below_alpha(self) -> "PipelineConfig":
        if not 0.0 <= self.beta <= self.alpha:
            raise ValueError("beta must lie in [0, alpha]")
        return self


# Valid configuration keys and their descriptions
CONFIG_KEYS = {name: info.description or "" for name, info in PipelineConfig.model_fields.items()}

# Default values
DEFAULTS = {name: info.default for name, info in PipelineConfig.model_fields.items()}


def _validation_message(err: ValidationError) -> str:
    parts = []
    for item in err.errors():
        loc = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{loc}: {item['msg']}")
    return "; ".join(parts)


def make_config(values: Optional[dict[str, Any]] = None, **overrides: Any) -> PipelineConfig:
    """
    Build a validated PipelineConfig.

    Args:
        values: Mapping of config keys to values
        **overrides: Further keys, applied after ``values``

    Returns:
        The validated configuration

    Raises:
        InputValidationError: If a key is unknown or a value violates its range
    """
    merged = dict(values or {})
    merged.update(overrides)
    try:
        return PipelineConfig(**merged)
    except ValidationError as e:
        raise InputValidationError(f"Invalid configuration: {_validation_message(e)}") from e


def read_config_file(path: Path) -> dict[str, Any]:
    """
    Read the raw key/value table of a config file.

    Args:
        path: Path to a TOML config file

    Returns:
        The parsed table (empty if the file does not exist)

    Raises:
        FormatError: If the file is not valid TOML or holds nested tables
    """
    if not path.exists():
        return {}
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        line = getattr(e, "lineno", None)
        raise FormatError(f"invalid config syntax: {e}", path=path, line=line) from e

    for key, value in data.items():
        if isinstance(value, dict):
            raise FormatError(f"nested table '{key}' not allowed in a flat config", path=path)
    return data


def load_config(path: Optional[Path] = None, **overrides: Any) -> PipelineConfig:
    """
    Load a PipelineConfig from a config file.

    Args:
        path: Config file path, or None for defaults
        **overrides: Keys that take precedence over the file

    Returns:
        The validated configuration
    """
    values = read_config_file(path) if path is not None else {}
    return make_config(values, **overrides)


def save_config(config: PipelineConfig, path: Path) -> None:
    """Write every field of ``config`` to ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        tomli_w.dump(config.model_dump(), f)


def config_hash(config: PipelineConfig) -> str:
    """Return a 16-hex-digit digest of the canonical config dump."""
    canonical = tomli_w.dumps(dict(sorted(config.model_dump().items())))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def set_config_value(path: Path, key: str, value: str) -> Any:
    """
    Set a configuration value in a config file.

    Args:
        path: Config file path
        key: Configuration key
        value: Value as typed on the command line

    Returns:
        The stored (type-converted) value

    Raises:
        ValueError: If the key is not a valid configuration key
        InputValidationError: If the value is out of range
    """
    if key not in CONFIG_KEYS:
        valid_keys = ", ".join(CONFIG_KEYS.keys())
        raise ValueError(f"Unknown configuration key '{key}'. Valid keys: {valid_keys}")

    stored = read_config_file(path)
    candidate = make_config({**stored, key: value})
    stored[key] = getattr(candidate, key)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        tomli_w.dump(stored, f)
    return stored[key]


def unset_config_value(path: Path, key: str) -> bool:
    """
    Remove a configuration value from a config file.

    Args:
        path: Config file path
        key: Configuration key to remove

    Returns:
        True if the key was removed, False if it wasn't set
    """
    stored = read_config_file(path)
    if key in stored:
        del stored[key]
        with open(path, "wb") as f:
            tomli_w.dump(stored, f)
        return True
    return False


def get_all_config(path: Optional[Path]) -> dict[str, tuple[Any, bool]]:
    """
    Get the effective value of every key.

    Returns:
        Mapping of key to (value, is_default)
    """
    stored = read_config_file(path) if path is not None else {}
    config = make_config(stored)
    return {key: (getattr(config, key), key not in stored) for key in CONFIG_KEYS}
