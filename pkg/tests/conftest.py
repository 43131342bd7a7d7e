import os

import pytest

from motioncrf.synthetic import SceneParams, generate_scene, write_scene


@pytest.fixture(scope="session")
def anyio_backend() -> str:
    return "asyncio"


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch) -> None:
    """Keep MOTIONCRF_* variables of the calling shell out of the tests."""
    for key in list(os.environ):
        if key.startswith("MOTIONCRF_"):
            monkeypatch.delenv(key)


@pytest.fixture(scope="session")
def scene():
    """Default 96x128 moving-box scene."""
    return generate_scene(SceneParams())


@pytest.fixture(scope="session")
def small_scene():
    """48x64 scene for the slower exact-filter checks."""
    return generate_scene(SceneParams(height=48, width=64))


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory, scene):
    """The default scene written to disk."""
    root = tmp_path_factory.mktemp("scene")
    write_scene(scene, root)
    return root
