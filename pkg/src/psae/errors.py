"""Shared exception base for the package.

Every domain error raised by psae derives from PsaeError, so callers (and
the fuzz tests) can catch one type instead of enumerating modules.
"""


class PsaeError(Exception):
    pass
