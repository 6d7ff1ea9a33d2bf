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

from typing import (
    Iterable,
    Optional,
)

__all__ = [
    'CacheMismatchError',
    'ConfigError',
    'DegenerateInputError',
    'ParseError',
    'ShapeMismatchError',
    'VerificationError',
    'CHECK_CONFIG',
    'DROPPED_LABELS',
    'VALID_ALGORITHMS',
    'VALID_SUITES',
    'XMLC_FORMAT',
]

XMLC_FORMAT = "Expected a header line 'N F L' followed by lines of the form " \
              "'l1,l2,... idx:val idx:val ...'."
CHECK_CONFIG = "Please check your config file (see README.md for valid keys)."
DROPPED_LABELS = "Labels without training instances have no client and are " \
                 "dropped."
VALID_ALGORITHMS = ('fedavg', 'fedavg-fixed', 'fedaws', 'fedalc',
                    'fedalc-fixed')
VALID_SUITES = ('gradients', 'sigma', 'metrics', 'collapse')


class DegenerateInputError(ValueError):
    """raised when a vector that must be normalized has zero norm"""


class ShapeMismatchError(ValueError):
    """raised on length, dimension or tensor shape mismatch"""


class CacheMismatchError(ValueError):
    """raised when backward() gets a cache produced by a different input"""


class ParseError(ValueError):
    """raised on malformed XMLC text, with the offending line number"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ConfigError(ValueError):
    """raised on config validation failure, listing every bad key"""

    def __init__(self, problems: Iterable[str]):
        self.problems = list(problems)
        super().__init__(
            f"{len(self.problems)} config problem(s): "
            + "; ".join(self.problems) + f". {CHECK_CONFIG}")


class VerificationError(RuntimeError):
    """raised when a verification suite finds a mismatch"""
