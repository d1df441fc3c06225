"""Error types shared across the package.

Both subclass ValueError so library callers can catch broadly, while the
CLI maps them to distinct exit codes (config -> 1, data -> 2).
"""


class ConfigError(ValueError):
    """Bad user input: flags, config values, incompatible method/model choices."""


class DataError(ValueError):
    """Bad data: malformed files, dimension mismatches, degenerate inputs."""
