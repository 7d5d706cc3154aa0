"""GP-based opponent prediction and stochastic MPC for overtaking on a straight road."""

from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"
