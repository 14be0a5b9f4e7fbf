"""Frozen calibrated constants.

The comparison theorems bound quantities by constants that exist but carry
no explicit value; each one used in a pass/fail check is calibrated once on
an analytic family (2x the worst observed ratio) by
scripts/calibrate_constants.py and frozen into data/calibrated_constants.json.
Everything else loads them read-only from here.
"""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from importlib import resources

# Provisional values used only until the calibration script has produced the
# frozen file; the shipped package carries the calibrated JSON.
_DEFAULTS = {
    "version": 0,
    "comparison_ratio1_bound": {"2": 8.0, "3": 8.0},
    "comparison_ratio2_bound": {"2": 8.0, "3": 8.0},
    "height_c1": {"2": 3.0, "3": 3.0},
    "height_eps1": {"2": 0.1, "3": 0.1},
    "flatness_c2": {"2": 6.0, "3": 6.0},
    "flatness_eps2": {"2": 0.2, "3": 0.2},
    "lipapprox_c3": {"2": 10.0, "3": 10.0},
    "lipapprox_eps3": {"2": 0.05, "3": 0.05},
    "lipapprox_delta0": {"2": 0.05, "3": 0.05},
    "semmes_c": {"2": 4.0, "3": 4.0},
    "semmes_ing1_c": {"2": 8.0, "3": 8.0},
    "weight_tau0": 0.5,
    "weight_avglog_c": 4.0,
    "weight_ap_c": 4.0,
    "weight_ap_p": 1.25,
    "weight_doubling_c": 6.0,
    "weight_rh_c": 4.0,
    "weight_rh_r": 2.0,
    "weight_l2dev_c": 4.0,
    "separation_t0": 0.25,
}


def _data_path():
    return resources.files("gmtlab").joinpath("data/calibrated_constants.json")


@lru_cache(maxsize=1)
def constants() -> dict:
    path = _data_path()
    try:
        with path.open() as f:
            return json.load(f)
    except FileNotFoundError:
        return dict(_DEFAULTS)


@lru_cache(maxsize=1)
def constants_hash() -> str:
    """sha256 of the frozen constants file (provenance for experiment reports)."""
    path = _data_path()
    try:
        with path.open("rb") as f:
            return hashlib.sha256(f.read()).hexdigest()
    except FileNotFoundError:
        blob = json.dumps(_DEFAULTS, sort_keys=True).encode()
        return "defaults-" + hashlib.sha256(blob).hexdigest()


def write_constants(values: dict, path=None):
    """Used by the calibration script to freeze a new constants file."""
    import pathlib

    target = pathlib.Path(path) if path else pathlib.Path(str(_data_path()))
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w") as f:
        json.dump(values, f, indent=1, sort_keys=True)
        f.write("\n")
    constants.cache_clear()
    constants_hash.cache_clear()
