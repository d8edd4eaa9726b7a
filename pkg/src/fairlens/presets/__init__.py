"""Built-in scenarios shipped as ``.cg`` files."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

from ..dsl import ScenarioSpec, parse_spec

CORE = ("college", "mediation", "music", "confounded", "collider-web", "compas-rates")
EXTRAS = ("hiring", "college-nonlinear")


def preset_names(include_extras: bool = True) -> tuple[str, ...]:
    return CORE + EXTRAS if include_extras else CORE


def preset_source(name: str) -> str:
    if name not in CORE + EXTRAS:
        raise KeyError(name)
    return resources.files(__package__).joinpath(f"{name}.cg").read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def preset(name: str) -> ScenarioSpec:
    return parse_spec(preset_source(name))


def presets(include_extras: bool = False) -> list[ScenarioSpec]:
    """The core scenarios (plus the auxiliary ones when asked)."""
    return [preset(n) for n in preset_names(include_extras)]
