import os

import pytest

import fedalc
import fedalc.utils


def test_sha256_file(tmp_path):
    path = tmp_path / 'abc'
    path.write_bytes(b'abc')
    assert fedalc.utils.sha256_file(path, chunk_size=2) == \
        fedalc.utils.sha256_bytes(b'abc')


def test_ensure_out_dir(tmp_path):
    out = tmp_path / 'a' / 'b'
    fedalc.utils.ensure_out_dir(out)
    assert out.is_dir()
    fedalc.utils.ensure_out_dir(out)
    plain = tmp_path / 'file'
    plain.write_text('')
    with pytest.raises(FileExistsError):
        fedalc.utils.ensure_out_dir(plain)


def test_ensure_config_path(tmp_path):
    path = tmp_path / 'config'
    fedalc.utils.ensure_config_path(path, 0o700)
    assert path.is_dir()
    assert os.stat(path).st_mode & 0o777 == 0o700
    plain = tmp_path / 'plain'
    plain.write_text('')
    with pytest.raises(FileExistsError):
        fedalc.utils.ensure_config_path(plain)
