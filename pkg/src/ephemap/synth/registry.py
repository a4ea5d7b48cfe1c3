"""Scenario registry for built-in and user scene files."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from ..errors import SceneError
from .scene import SceneSpec, load_scene

logger = logging.getLogger(__name__)

# User scene files, picked up from the working directory
USER_SCENE_DIR = Path("scenes")


@dataclass
class Scenario:
    """A named scene factory."""

    name: str
    factory: Callable[[], SceneSpec]
    description: str = ""
    aliases: list[str] = field(default_factory=list)

    @property
    def all_names(self) -> list[str]:
        """Return all names (primary + aliases) for this scenario."""
        return [self.name] + self.aliases

    def build(self, seed: Optional[int] = None) -> SceneSpec:
        spec = self.factory()
        return spec if seed is None else spec.with_seed(seed)


class ScenarioRegistry:
    """Registry for managing and looking up scenarios."""

    def __init__(self) -> None:
        self._scenarios: dict[str, Scenario] = {}
        self._alias_map: dict[str, str] = {}

    def register(self, scenario: Scenario) -> None:
        """
        Register a scenario.

        Args:
            scenario: The scenario to register
        """
        self._scenarios[scenario.name] = scenario
        for alias in scenario.aliases:
            self._alias_map[alias] = scenario.name

    def get(self, name: str) -> Optional[Scenario]:
        """
        Get a scenario by name or alias.

        Args:
            name: Scenario name or alias

        Returns:
            The scenario if found, None otherwise
        """
        if name in self._scenarios:
            return self._scenarios[name]
        if name in self._alias_map:
            return self._scenarios[self._alias_map[name]]
        return None

    def list_all(self) -> list[Scenario]:
        """Return all registered scenarios."""
        return list(self._scenarios.values())

    def load_scene_dir(self, directory: Path) -> int:
        """
        Register every ``*.toml`` scene file of a directory.

        Malformed files are skipped with a warning.

        Returns:
            Number of scenarios registered
        """
        loaded = 0
        for path in sorted(directory.glob("*.toml")):
            try:
                spec = load_scene(path)
            except SceneError as e:
                logger.warning("skipping scene file %s: %s", path, e)
                continue
            self.register(Scenario(spec.name, lambda spec=spec: spec, spec.description))
            loaded += 1
        return loaded


def resolve_scene(name_or_path: str, seed: Optional[int] = None) -> SceneSpec:
    """
    Look up a scenario by name, or load a scene file.

    Raises:
        SceneError: If the name is unknown and no such file exists
    """
    scenario = get_registry().get(name_or_path)
    if scenario is not None:
        return scenario.build(seed)
    path = Path(name_or_path)
    if not path.exists():
        raise SceneError(f"Unknown scenario or missing scene file: {name_or_path}")
    spec = load_scene(path)
    return spec if seed is None else spec.with_seed(seed)


# Global registry instance
_registry: Optional[ScenarioRegistry] = None


def get_registry() -> ScenarioRegistry:
    """Get the global scenario registry, initializing if needed."""
    global _registry
    if _registry is None:
        _registry = ScenarioRegistry()

        from .builtin import BUILTIN_SCENARIOS

        for scenario in BUILTIN_SCENARIOS:
            _registry.register(scenario)

        # User scenes can override built-ins
        if USER_SCENE_DIR.is_dir():
            _registry.load_scene_dir(USER_SCENE_DIR)

    return _registry
