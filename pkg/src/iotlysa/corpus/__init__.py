"""Bundled example systems (the smart street light scenario and variants)."""

from __future__ import annotations

from importlib import resources

NAMES = ("street", "street_encrypted", "lamppost", "lamppost_mutant")


def spec_text(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.iot").read_text()


def config_text(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.cfg.json").read_text()


def load(name: str):
    """Parse a bundled system together with its configuration."""
    from ..config import parse_config
    from ..parser import parse_system

    system = parse_system(spec_text(name))
    return system, parse_config(config_text(name), system)
