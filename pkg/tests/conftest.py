import pytest

from clipfile import make_gray_clip


@pytest.fixture
def tmp_clip(tmp_path):
    """Factory: write a gray clip under tmp_path and return its path."""

    def build(name: str, values: list[int], width: int = 64, height: int = 48, fps: float = 2.0):
        path = tmp_path / name
        make_gray_clip(path, values, width, height, fps)
        return path

    return build
