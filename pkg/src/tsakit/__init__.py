"""Transient stability assessment toolkit.

Offline pipeline: fault scenario generation on a bulk power network, time
domain labeling of angle and voltage stability with severity margins, and
training of a graph encoder with a mixture-of-experts head that predicts all
four targets at once. Online side: a streaming monitor that applies a trained
checkpoint to measured bus voltages.
"""

from importlib import resources

__version__ = "0.1.0"


def packaged_network_path() -> str:
    """Filesystem path of the bundled New England 39-bus network file."""
    return str(resources.files("tsakit").joinpath("data/ieee39.net"))
