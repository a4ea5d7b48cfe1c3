"""Shared fixtures: a small walled room rendered over two sessions."""

import pytest

from ephemap.config import make_config
from ephemap.core import run_synth

from .scenes import room_scene


@pytest.fixture(scope="session")
def room_spec():
    return room_scene()


@pytest.fixture(scope="session")
def room_config(room_spec):
    return make_config(room_spec.config)


@pytest.fixture(scope="session")
def room_dir(tmp_path_factory, room_spec):
    """Rendered room: session_01/, session_02/, scene.toml and config.toml."""
    out = tmp_path_factory.mktemp("room")
    run_synth(room_spec, out)
    return out
