"""Flat dotted-key experiment configuration.

The on-disk format is a plain text file of ``section.key = value`` lines
with ``#`` comments.  Values are booleans (``true``/``false``), integers,
floats, comma-separated number lists, comma-separated word lists, or bare
strings.  Every key has a default; unknown keys are a hard error so typos
cannot silently fall back to defaults.
"""

from __future__ import annotations

import re
from typing import Dict, List, Mapping, Tuple


class ConfigError(ValueError):
    """Bad key, bad value, or unparseable config text."""


# key -> (default, kind, description). Kinds: int, float, bool, str,
# floats (list of float), strs (list of str).
SCHEMA: Dict[str, Tuple[object, str, str]] = {
    # --- scenario geometry and truth generation ---
    "scenario.room_width": (6.5, "float", "room extent along x in metres"),
    "scenario.room_height": (7.5, "float", "room extent along y in metres"),
    "scenario.pa_positions": ([1.0, 1.2], "floats",
                              "flattened x,y pairs of physical anchors"),
    "scenario.n_steps": (100, "int", "trajectory length in steps"),
    "scenario.dt": (1.0, "float", "step duration in seconds"),
    "scenario.seed": (1, "int", "measurement-stream seed"),
    "scenario.obstruction": (False, "bool",
                             "add the non-reflective occluding wall"),
    "scenario.obstruction_x1": (2.4, "float", "occluding wall start x"),
    "scenario.obstruction_y1": (3.2, "float", "occluding wall start y"),
    "scenario.obstruction_x2": (2.4, "float", "occluding wall end x"),
    "scenario.obstruction_y2": (4.8, "float", "occluding wall end y"),
    "scenario.center_x": (3.25, "float", "trajectory loop centre x"),
    "scenario.center_y": (3.75, "float", "trajectory loop centre y"),
    "scenario.radii": ([2.4, 2.0, 2.4, 2.1, 2.5, 2.0, 2.3, 2.1], "floats",
                       "waypoint radii around the loop centre"),
    # --- measurement model ---
    "scenario.sigma_d": (0.1, "float", "distance noise std in metres"),
    "scenario.sigma_aoa_deg": (2.0, "float", "AOA noise std in degrees"),
    "scenario.sigma_aod_deg": (2.0, "float", "AOD noise std in degrees"),
    "scenario.p_d": (0.95, "float", "detection probability"),
    "scenario.mu_fa": (5.0, "float", "mean false alarms per anchor and step"),
    "scenario.d_max": (15.0, "float", "maximum measurable distance"),
    # --- RF front-end metadata (recorded, not simulated) ---
    "scenario.carrier_hz": (6.0e9, "float", "carrier frequency"),
    "scenario.bandwidth_hz": (5.0e8, "float", "signal bandwidth"),
    "scenario.rolloff": (0.6, "float", "pulse roll-off factor"),
    "scenario.array_rows": (3, "int", "antenna array rows"),
    "scenario.array_cols": (3, "int", "antenna array columns"),
    "scenario.element_spacing": (0.25, "float",
                                 "antenna spacing in wavelengths"),
    "scenario.tx_power_db": (40.0, "float", "SNR at one metre in dB"),
    "scenario.reflection_loss_db": (3.0, "float", "loss per reflection in dB"),
    "scenario.snr_db": (9.0, "float", "nominal component SNR in dB"),
    # --- filter ---
    "filter.p_s": (0.999, "float", "object survival probability"),
    "filter.p_de": (0.5, "float", "existence threshold for map reporting"),
    "filter.p_pr": (1e-4, "float", "existence threshold for pruning"),
    "filter.mu_n": (0.1, "float", "mean newborn objects per measurement"),
    "filter.birth_samples": (10, "int",
                             "importance samples for newborn weights"),
    "filter.da_max_iter": (100000, "int",
                           "association message-passing iteration cap"),
    "filter.da_tol": (1e-6, "float", "association convergence tolerance"),
    "filter.da_method": ("auto", "str",
                         "association marginals: auto, bp, or exact"),
    "filter.sigma_reg": (0.01, "float",
                         "anchor position re-inflation std per step"),
    "filter.merge_distance": (0.5, "float",
                              "duplicate-track absorption radius; 0 disables"),
    "filter.sigma_a": (0.03, "float", "acceleration noise std"),
    "filter.sigma_kappa_deg": (5.0, "float", "heading drift std in degrees"),
    "filter.init_sigma_p": (0.1, "float", "initial position std"),
    "filter.init_sigma_v": (0.01, "float", "initial velocity std"),
    "filter.init_sigma_kappa_deg": (10.0, "float",
                                    "initial heading std in degrees"),
    # --- baseline ---
    "baseline.ess_fraction": (0.5, "float",
                              "resample when ESS drops below this fraction"),
    # --- monte-carlo orchestration ---
    "mc.runs": (1, "int", "independent realizations per algorithm"),
    "mc.base_seed": (1000, "int", "seed of realization 0; run r adds r"),
    "mc.algorithms": (["sp"], "strs",
                      "algorithms to run: sp and/or pf<count> entries"),
    "mc.workers": (1, "int", "parallel realization workers"),
    # --- output ---
    "output.directory": ("results", "str", "output directory"),
    "output.write_runs": (True, "bool", "write one record file per run"),
}

_ALGORITHM_RE = re.compile(r"^(sp|pf[1-9][0-9]*)$")
_KEY_RE = re.compile(r"^[a-z_]+\.[a-z_0-9]+$")


def defaults() -> Dict[str, object]:
    return {key: (list(entry[0]) if isinstance(entry[0], list) else entry[0])
            for key, entry in SCHEMA.items()}


def _coerce(key: str, raw: object) -> object:
    kind = SCHEMA[key][1]
    try:
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            if isinstance(raw, str) and raw.lower() in ("true", "false"):
                return raw.lower() == "true"
            raise ValueError("expected true/false")
        if kind == "int":
            if isinstance(raw, bool):
                raise ValueError("expected integer")
            if isinstance(raw, int):
                return raw
            if isinstance(raw, float) and raw == int(raw):
                return int(raw)
            if isinstance(raw, str):
                return int(raw, 10)
            raise ValueError("expected integer")
        if kind == "float":
            if isinstance(raw, bool):
                raise ValueError("expected number")
            if isinstance(raw, (int, float)):
                return float(raw)
            if isinstance(raw, str):
                return float(raw)
            raise ValueError("expected number")
        if kind == "floats":
            if isinstance(raw, str):
                raw = [p for p in (s.strip() for s in raw.split(",")) if p]
            if not isinstance(raw, (list, tuple)) or not raw:
                raise ValueError("expected a comma-separated number list")
            return [float(x) for x in raw]
        if kind == "strs":
            if isinstance(raw, str):
                raw = [p for p in (s.strip() for s in raw.split(",")) if p]
            if not isinstance(raw, (list, tuple)) or not raw:
                raise ValueError("expected a comma-separated list")
            return [str(x) for x in raw]
        return str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None


def _unknown_key_error(key: str) -> ConfigError:
    prefix = key.split(".", 1)[0] + "."
    near = sorted(k for k in SCHEMA if k.startswith(prefix)) or sorted(SCHEMA)
    return ConfigError(
        f"unknown config key {key!r}; valid keys: " + ", ".join(near)
    )


def resolve(overrides: Mapping[str, object] | None = None) -> Dict[str, object]:
    """Full config dict: schema defaults updated by ``overrides``."""
    cfg = defaults()
    for key, raw in (overrides or {}).items():
        if key not in SCHEMA:
            raise _unknown_key_error(key)
        cfg[key] = _coerce(key, raw)
    return cfg


def parse_text(text: str) -> Dict[str, object]:
    """Parse config text into a fully-resolved dict."""
    overrides: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not _KEY_RE.match(key):
            raise ConfigError(f"line {lineno}: malformed key {key!r}")
        if key in overrides:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key not in SCHEMA:
            raise _unknown_key_error(key)
        overrides[key] = value
    return resolve(overrides)


def load(path: str) -> Dict[str, object]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_text(fh.read())


def section(cfg: Mapping[str, object], name: str) -> Dict[str, object]:
    """Sub-dict of one dotted section with the prefix stripped."""
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)}


def format_config(cfg: Mapping[str, object]) -> str:
    """Canonical text form (sorted keys), re-parseable by ``parse_text``."""
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            text = ", ".join(repr(v) if isinstance(v, float) else str(v)
                             for v in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def validate(cfg: Mapping[str, object]) -> List[str]:
    """Range and consistency diagnostics; empty list means valid."""
    errs: List[str] = []

    def need(cond: bool, msg: str) -> None:
        if not cond:
            errs.append(msg)

    w, h = cfg["scenario.room_width"], cfg["scenario.room_height"]
    need(w > 0 and h > 0, "scenario room dimensions must be positive")
    pas = cfg["scenario.pa_positions"]
    need(len(pas) >= 2 and len(pas) % 2 == 0,
         "scenario.pa_positions needs x,y pairs")
    for i in range(0, len(pas) - 1, 2):
        need(0 < pas[i] < w and 0 < pas[i + 1] < h,
             f"anchor ({pas[i]}, {pas[i + 1]}) lies outside the room")
    need(cfg["scenario.n_steps"] >= 1, "scenario.n_steps must be >= 1")
    need(cfg["scenario.dt"] > 0, "scenario.dt must be positive")
    need(len(cfg["scenario.radii"]) >= 4,
         "scenario.radii needs at least 4 waypoints")
    need(all(r > 0 for r in cfg["scenario.radii"]),
         "scenario.radii must be positive")
    if cfg["scenario.obstruction"]:
        for key in ("obstruction_x1", "obstruction_x2"):
            need(0 <= cfg[f"scenario.{key}"] <= w,
                 f"scenario.{key} outside the room")
        for key in ("obstruction_y1", "obstruction_y2"):
            need(0 <= cfg[f"scenario.{key}"] <= h,
                 f"scenario.{key} outside the room")
        need((cfg["scenario.obstruction_x1"], cfg["scenario.obstruction_y1"])
             != (cfg["scenario.obstruction_x2"],
                 cfg["scenario.obstruction_y2"]),
             "occluding wall endpoints coincide")
    for key in ("sigma_d", "sigma_aoa_deg", "sigma_aod_deg", "d_max"):
        need(cfg[f"scenario.{key}"] > 0, f"scenario.{key} must be positive")
    need(0 < cfg["scenario.p_d"] <= 1, "scenario.p_d must be in (0, 1]")
    need(cfg["scenario.mu_fa"] >= 0, "scenario.mu_fa must be >= 0")
    need(cfg["scenario.seed"] >= 0, "scenario.seed must be >= 0")
    need(cfg["mc.base_seed"] >= 0, "mc.base_seed must be >= 0")

    need(0 < cfg["filter.p_s"] <= 1, "filter.p_s must be in (0, 1]")
    need(0 < cfg["filter.p_de"] < 1, "filter.p_de must be in (0, 1)")
    need(0 <= cfg["filter.p_pr"] < 1, "filter.p_pr must be in [0, 1)")
    need(cfg["filter.p_pr"] < cfg["filter.p_de"],
         "filter.p_pr must be below filter.p_de")
    need(cfg["filter.mu_n"] >= 0, "filter.mu_n must be >= 0")
    need(cfg["filter.birth_samples"] >= 1,
         "filter.birth_samples must be >= 1")
    need(cfg["filter.da_max_iter"] >= 1, "filter.da_max_iter must be >= 1")
    need(cfg["filter.da_tol"] > 0, "filter.da_tol must be positive")
    need(cfg["filter.da_method"] in ("auto", "bp", "exact"),
         "filter.da_method must be auto, bp, or exact")
    need(cfg["filter.sigma_reg"] >= 0, "filter.sigma_reg must be >= 0")
    need(cfg["filter.merge_distance"] >= 0,
         "filter.merge_distance must be >= 0")
    for key in ("sigma_a", "sigma_kappa_deg", "init_sigma_p", "init_sigma_v",
                "init_sigma_kappa_deg"):
        need(cfg[f"filter.{key}"] > 0, f"filter.{key} must be positive")

    need(0 < cfg["baseline.ess_fraction"] <= 1,
         "baseline.ess_fraction must be in (0, 1]")
    need(cfg["mc.runs"] >= 1, "mc.runs must be >= 1")
    need(cfg["mc.workers"] >= 1, "mc.workers must be >= 1")
    for alg in cfg["mc.algorithms"]:
        need(bool(_ALGORITHM_RE.match(alg)),
             f"mc.algorithms entry {alg!r} is not 'sp' or 'pf<count>'")
    need(len(set(cfg["mc.algorithms"])) == len(cfg["mc.algorithms"]),
         "mc.algorithms has duplicates")
    return errs
