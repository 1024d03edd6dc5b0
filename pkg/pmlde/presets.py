"""Shipped experiment configurations.

Grid resolutions, object sizes and velocities that the experiments leave open
are desk-scale choices (128^2 to 256^2 cells).
"""

import logging

from .exceptions import ConfigValidationError
from .runconfig import parse_config

logger = logging.getLogger(__name__)

_SHIP_HULL = "2.5, 0.25; 3.0, -0.35; 5.5, -0.35; 5.5, 0.25; 4.6, 0.25; 4.6, 0.55; 3.6, 0.55; 3.6, 0.25"

_MODEL = {"c": "10", "eta_d": "0.01", "alpha": "10", "beta": "100", "psi_hat": "0.05", "eta_n": "0.01"}

_FREQUENCIES = {
    "moderate": {"center": "-3, 0", "eta": "0.25", "w": "10*pi", "sigma": "2/25", "t0": "0"},
    "high": {"center": "-3, 0", "eta": "0.01", "w": "100*pi", "sigma": "1/1000", "t0": "0"},
}

_OBJECTS = {
    "circle": {"shape": "circle", "center": "1.5, 0", "radius": "1", "velocity": "-2, 0"},
    "star": {"shape": "star", "center": "1.5, 0", "r0": "1", "r1": "0.3", "lobes": "5", "velocity": "-2, 0"},
    "ship": {"shape": "polygon", "vertices": _SHIP_HULL, "velocity": "-5, 0"},
}


def _fixed_object_sections():
    return {
        "domain": {"a1": "10", "a2": "10", "l1": "4", "l2": "4"},
        "grid": {"nx": "128", "ny": "128"},
        "time": {"tau": "1e-2", "t_end": "13"},
        "model": {"c": "1", "bc": "soft", "eta_d": "0.01", "alpha": "10", "beta": "100"},
        "embedding": {"shape": "circle", "center": "0, 0", "radius": "2", "eps": "0.2"},
        "initial": {"kind": "gaussian", "center": "5, 0", "width": "5"},
        "output": {"snapshot_interval": "0.5"},
    }


def _benchmark_sections(bc, eps):
    return {
        "domain": {"a1": "5", "a2": "5", "l1": "2", "l2": "2"},
        "grid": {"nx": "256", "ny": "256"},
        "time": {"tau": "1e-3", "t_end": "0.8"},
        "model": dict(_MODEL, bc=bc),
        "embedding": {"shape": "circle", "center": "0, 0", "radius": "1", "eps": eps},
        "source": dict(_FREQUENCIES["moderate"]),
        "output": {"snapshot_interval": "0.2"},
    }


def _moving_sections(shape, bc, frequency):
    return {
        "domain": {"a1": "7", "a2": "7", "l1": "2", "l2": "2"},
        "grid": {"nx": "256", "ny": "256"},
        "time": {"tau": "1e-3", "t_end": "1"},
        "model": dict(_MODEL, bc=bc),
        "embedding": dict(_OBJECTS[shape], eps="0.05"),
        "source": dict(_FREQUENCIES[frequency]),
        "amr": {"enabled": "true", "max_level": "1"},
        "output": {"snapshot_interval": "0.2"},
    }


def _build():
    presets = {
        "fixed_circle": (
            "Gaussian pulse scattered by a fixed circle, no source",
            _fixed_object_sections(),
        ),
        "fixed_circle_amr": (
            "fixed_circle on a two-level adaptive hierarchy",
            dict(_fixed_object_sections(), amr={"enabled": "true", "max_level": "1"}),
        ),
        "free_pulse": (
            "fixed_circle without the object (absorption check)",
            dict(_fixed_object_sections(), embedding={"shape": "none"}),
        ),
        "circle_benchmark_soft": ("Source-driven circle benchmark, sound-soft", _benchmark_sections("soft", "0.01")),
        "circle_benchmark_hard": ("Source-driven circle benchmark, sound-hard", _benchmark_sections("hard", "0.05")),
    }
    for shape in _OBJECTS:
        for bc in ("soft", "hard"):
            for frequency in _FREQUENCIES:
                name = f"moving_{shape}_{bc}_{frequency}"
                summary = f"Moving {shape}, sound-{bc}, {frequency}-frequency source"
                presets[name] = (summary, _moving_sections(shape, bc, frequency))
    return presets


PRESETS = _build()

# Names the experiments are known by
ALIASES = {
    "example_4_1": "fixed_circle",
    "example_4_3": "moving_circle_soft_moderate",
    "example_4_3_high": "moving_circle_soft_high",
}


def list_presets():
    """``(name, summary)`` pairs in sorted order."""
    return [(name, PRESETS[name][0]) for name in sorted(PRESETS)]


def get_preset_text(name):
    """Config file text of a preset or alias."""
    name = ALIASES.get(name, name)
    try:
        summary, sections = PRESETS[name]
    except KeyError:
        raise ConfigValidationError(f"unknown preset '{name}'", invariant="preset") from None
    lines = [f"# {summary}", "[run]", f"name = {name}", ""]
    for section, values in sections.items():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {value}" for key, value in values.items())
        lines.append("")
    return "\n".join(lines)


def load_preset(name, environ=None, overrides=None):
    logger.info("using preset %s", name)
    return parse_config(get_preset_text(name), environ=environ, overrides=overrides)
