"""Bundled grid descriptions."""

from importlib import resources


def three_bus_path():
    """Filesystem path of the bundled three-bus example grid."""
    return str(resources.files(__package__) / "three_bus.json")
