"""Root of the package's exception tree.

Concrete exceptions live next to the code that raises them; the CLI only needs
to recognise this base class to turn a failure into exit code 1.
"""


class SemiresError(Exception):
    pass


class ConfigError(SemiresError, ValueError):
    """Invalid user-supplied configuration (warp spec, experiment file, env)."""
