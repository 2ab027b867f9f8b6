import shutil
from pathlib import Path

import pytest

from gangmam.apk import load_decoded_apk, sha256_file

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def decoded_copy(tmp_path):
    """Copy a named decoded fixture into tmp and load it with its APK hash."""

    def _copy(name: str, dest_name: str | None = None):
        dest = tmp_path / (dest_name or name)
        shutil.copytree(FIXTURES / "apks" / name, dest)
        return load_decoded_apk(dest, sha256_file(FIXTURES / "apks" / f"{name}.apk"))

    return _copy
