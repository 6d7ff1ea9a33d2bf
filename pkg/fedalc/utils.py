# Copyright 2026 fedalc contributors
#
# Permission is hereby granted, free of charge, to any person obtaining a copy of
# this software and associated documentation files (the "Software"), to deal in
# the Software without restriction, including without limitation the rights to
# use, copy, modify, merge, publish, distribute, sublicense, and/or sell copies
# of the Software, and to permit persons to whom the Software is furnished to do
# so, subject to the following conditions:
#
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.

import hashlib
import logging
import os

from typing import (
    Union,
)

import fedalc
import fedalc.settings

__all__ = [
    'ensure_config_path',
    'ensure_out_dir',
    'mkdir',
    'sha256_bytes',
    'sha256_file',
]

logger = logging.getLogger(__name__)


def mkdir(path, mode=0o755):
    """wraps os.makedirs() and logs to debug level"""
    logger.debug(f"creating {path} with mode {str(oct(mode)[2:])}")
    return os.makedirs(path, mode, exist_ok=True)


def sha256_bytes(data: bytes) -> str:
    """
    :returns: the sha256 hexdigest of |data|

    >>> sha256_bytes(b'')[:16]
    'e3b0c44298fc1c14'
    """
    return hashlib.sha256(data).hexdigest()


def sha256_file(file: Union[str, os.PathLike], chunk_size=2 ** 20) -> str:
    """:returns: the sha256 hexdigest of a file, read in chunks"""
    hasher = hashlib.sha256()
    with open(file, 'rb') as f:
        chunk = f.read(chunk_size)
        while chunk:
            hasher.update(chunk)
            chunk = f.read(chunk_size)
    logger.debug(f"sha256 of {file}: {hasher.hexdigest()}")
    return hasher.hexdigest()


def ensure_out_dir(path) -> str:
    """creates an output folder if needed and refuses to use a plain file"""
    if os.path.exists(path) and not os.path.isdir(path):
        raise FileExistsError(
            f"{path} is supposed to be a directory, please relocate this "
            f"file or choose another --out path")
    mkdir(path)
    return path


def ensure_config_path(
        path=fedalc.settings.DEFAULT_CONFIG_PATH,
        mode=fedalc.settings.CONFIG_PATH_MODE,):
    """creates a config/log folder in ~ with the proper permissions."""
    if os.path.exists(path):
        if os.path.isdir(path):
            os.chmod(path, mode)
        else:
            raise FileExistsError(
                f"{path} is supposed to be a directory, please relocate this "
                f"file if not needed or modify {fedalc.__name__} settings"
            )
    else:
        mkdir(path, mode)


if __name__ == '__main__':
    import doctest
    doctest.testmod(optionflags=doctest.ELLIPSIS)
