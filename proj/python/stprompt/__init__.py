"""Python access to the spatiotemporal prompt toolkit."""

import json

from . import _core
from ._core import ConfigError, GeometryError, motion_modulation, project, silhouette, unproject

__all__ = [
    "ConfigError",
    "GeometryError",
    "config_hash",
    "default_config",
    "fd_check",
    "motion_modulation",
    "project",
    "render_scene",
    "report_table",
    "silhouette",
    "train",
    "unproject",
]


def _dump(config):
    if config is None:
        return ""
    return json.dumps(config)


def default_config():
    return json.loads(_core.default_config())


def config_hash(config):
    return _core.config_hash(_dump(config))


def render_scene(config=None, seed=0):
    """Render one scene; arrays are (view, time, ...) ordered."""
    return _core.render_scene(_dump(config), seed)


def fd_check(config=None, seed=0, eps=1e-6, tol=1e-4):
    return _core.fd_check(_dump(config), seed, eps, tol)


def train(config):
    return json.loads(_core.train(_dump(config)))


def report_table(report):
    return _core.report_table(json.dumps(report))
