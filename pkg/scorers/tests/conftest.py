import pytest

from stubsession import FRAME_CONTENTS


@pytest.fixture
def frame_files(tmp_path):
    paths = []
    for k, content in enumerate(FRAME_CONTENTS):
        path = tmp_path / f"frame{k}.png"
        path.write_bytes(content)
        paths.append(str(path))
    return paths
