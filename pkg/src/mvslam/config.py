"""Flat ``key = value`` pipeline configuration.

Every key has a type, a default and a range check. Unknown keys and bad
values raise :class:`ConfigError`. ``#`` starts a comment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

from .errors import ConfigError


@dataclass(frozen=True)
class Option:
    key: str
    default: Any
    parse: Callable[[str], Any]
    check: Callable[[Any], bool]
    help: str
    rule: str = ""


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.replace(",", " ").split())


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _one_of(*vals):
    return lambda v: v in vals, "one of " + "|".join(vals)


def _diag(v) -> bool:
    return len(v) in (1, 3) and all(math.isfinite(x) and x >= 0 for x in v)


def _opt(key, default, parse, check, help, rule=""):
    return Option(key, default, parse, check, help, rule)


def _choice(key, default, help, *vals):
    check, rule = _one_of(*vals)
    return Option(key, default, str, check, help, rule)


OPTIONS: tuple[Option, ...] = (
    _opt("dataset.path", "", str, lambda v: True, "sequence directory in the canonical layout"),
    _opt("output.dir", "out", str, lambda v: bool(v), "where run writes trajectory, surface and stats"),
    _opt("seed", 0, int, lambda v: v >= 0, "seed for every stochastic component", ">= 0"),
    _choice("pose.source", "oracle", "relative-pose estimator", "oracle", "import"),
    _opt("pose.import_path", "", str, lambda v: True, "TUM trajectory whose relative motions are used, scale discarded"),
    _choice("depth.source", "oracle", "depth estimator", "oracle", "import"),
    _opt("depth.import_dir", "", str, lambda v: True, "directory of %06d.png/.pfm depth maps"),
    _opt("oracle.rot_sigma_deg", 0.5, float, lambda v: 0 <= v <= 30, "oracle rotation noise per axis", "[0, 30]"),
    _opt("oracle.dir_sigma_deg", 2.0, float, lambda v: 0 <= v <= 45, "oracle direction noise per tangent axis", "[0, 45]"),
    _opt("oracle.depth_sigma", 0.02, float, lambda v: 0 <= v <= 1, "oracle log-normal depth noise", "[0, 1]"),
    _opt("oracle.dropout", 0.0, float, lambda v: 0 <= v <= 1, "fraction of oracle depth pixels dropped", "[0, 1]"),
    _opt("ukf.alpha", 0.1, float, lambda v: 0 < v <= 1, "sigma-point spread", "(0, 1]"),
    _opt("ukf.beta", 2.0, float, lambda v: v >= 0, "prior-distribution weight", ">= 0"),
    _opt("ukf.kappa", 0.0, float, lambda v: v > -3, "secondary spread", "> -3"),
    _opt("ukf.q_diag", (4e-10,), _floats, _diag, "process noise variances (m^2), 1 or 3 values", "1 or 3 values >= 0"),
    _opt("ukf.r_diag", (1e-8,), _floats, _diag, "measurement noise variances (m^2), 1 or 3 values", "1 or 3 values >= 0"),
    _opt("ukf.p0_diag", (1e-6,), _floats, _diag, "prior variances (m^2), 1 or 3 values", "1 or 3 values >= 0"),
    _choice("ukf.mode", "vector", "measure the full translation or only its norm", "vector", "scale"),
    _opt("ukf.reset_after", 5, int, lambda v: v >= 1, "consecutive failures before the covariance is re-inflated", ">= 1"),
    _choice("features.detector", "harris", "corner detector", "harris", "fast"),
    _opt("features.max_n", 500, int, lambda v: 3 <= v <= 100000, "keypoints per frame", "[3, 100000]"),
    _opt("features.fast_threshold", 20.0, float, lambda v: 0 < v < 255, "segment-test intensity threshold", "(0, 255)"),
    _opt("features.ratio", 0.8, float, lambda v: 0 < v <= 1, "nearest/second-nearest Hamming ratio", "(0, 1]"),
    _opt("ransac.threshold_m", 5e-3, float, lambda v: v > 0, "inlier distance in meters", "> 0"),
    _opt("ransac.seed", 0, int, lambda v: v >= 0, "RANSAC sampling seed", ">= 0"),
    _opt("ransac.max_iters", 1000, int, lambda v: v >= 1, "RANSAC iteration cap", ">= 1"),
    _opt("scale.refine", True, _bool, lambda v: True, "solve the scale densely from depth and gate it against the feature fit"),
    _opt("scale.gate_chi2", 11.345, float, lambda v: v > 0, "Mahalanobis gate for the dense scale", "> 0"),
    _opt("graph.enabled", True, _bool, lambda v: True, "periodic pose-graph optimization"),
    _opt("graph.every", 30, int, lambda v: v >= 2, "frames between optimizations", ">= 2"),
    _opt("graph.window", 100, int, lambda v: v >= 2, "most recent nodes included in each optimization", ">= 2"),
    _opt("graph.sigma_rot_deg", 0.5, float, lambda v: v > 0, "odometry rotation sigma", "> 0"),
    _opt("graph.sigma_trans_m", 1e-4, float, lambda v: v > 0, "odometry translation sigma", "> 0"),
    _opt("graph.huber", 0.0, float, lambda v: v >= 0, "Huber threshold on the whitened residual norm, 0 disables", ">= 0"),
    _opt("graph.max_iters", 50, int, lambda v: v >= 1, "LM iteration cap", ">= 1"),
    _opt("tsdf.enabled", True, _bool, lambda v: True, "fuse depth into a volume"),
    _opt("tsdf.voxel_m", 4e-3, float, lambda v: v > 0, "voxel edge length", "> 0"),
    _opt("tsdf.trunc_m", 1.6e-2, float, lambda v: v > 0, "truncation distance, at least two voxels", "> 0"),
    _opt("tsdf.w_max", 64.0, float, lambda v: v >= 1, "weight cap", ">= 1"),
    _opt("tsdf.half_extent_m", 0.08, float, lambda v: v > 0, "half side of the cube centred on the first camera", "> 0"),
    _opt("tsdf.refuse", False, _bool, lambda v: True, "rebuild the volume from all frames with the final poses"),
    _opt("tsdf.color", True, _bool, lambda v: True, "fuse colour"),
    _choice("eval.align", "sim3", "trajectory alignment before ATE", "none", "se3", "sim3"),
)

_BY_KEY = {o.key: o for o in OPTIONS}


class Config(Mapping[str, Any]):
    """Immutable mapping of every documented key to a typed value."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        merged = {o.key: o.default for o in OPTIONS}
        for k, v in (values or {}).items():
            if k not in _BY_KEY:
                raise ConfigError(f"unknown configuration key {k!r}")
            merged[k] = _coerce(_BY_KEY[k], v)
        self._values = merged
        self._validate_cross()

    def _validate_cross(self):
        if self["tsdf.trunc_m"] < 2 * self["tsdf.voxel_m"]:
            raise ConfigError("tsdf.trunc_m must be at least twice tsdf.voxel_m")
        if self["graph.window"] < 2:
            raise ConfigError("graph.window must be at least 2")

    def __getitem__(self, k):
        return self._values[k]

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def updated(self, values: Mapping[str, Any]) -> "Config":
        vals = dict(self._values)
        vals.update(values)
        return Config(vals)

    def dump(self, with_help: bool = True) -> str:
        lines = []
        for o in OPTIONS:
            if with_help:
                rule = f" [{o.rule}]" if o.rule else ""
                lines.append(f"# {o.help}{rule}")
            lines.append(f"{o.key} = {_fmt(self._values[o.key])}")
        return "\n".join(lines) + "\n"


def _coerce(o: Option, v: Any) -> Any:
    try:
        val = o.parse(v) if isinstance(v, str) else v
        if isinstance(o.default, tuple) and not isinstance(val, tuple):
            val = tuple(float(x) for x in val) if hasattr(val, "__iter__") else (float(val),)
        elif isinstance(o.default, bool):
            if not isinstance(val, bool):
                raise ValueError("expected a boolean")
        elif isinstance(o.default, int):
            if isinstance(val, float) and val != int(val):
                raise ValueError("expected an integer")
            val = int(val)
        elif isinstance(o.default, float):
            val = float(val)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{o.key}: {exc}") from None
    if isinstance(val, float) and not math.isfinite(val):
        raise ConfigError(f"{o.key}: value must be finite")
    if not o.check(val):
        raise ConfigError(f"{o.key} = {_fmt(val)} is out of range ({o.rule or 'invalid'})")
    return val


def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"line {no}: empty key")
        if k in out:
            raise ConfigError(f"line {no}: duplicate key {k!r}")
        out[k] = v
    return out


def load_config(path=None, overrides: Mapping[str, str] | None = None) -> Config:
    values: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values.update(parse_config(text))
    values.update(overrides or {})
    return Config(values)


def parse_overrides(items) -> dict[str, str]:
    """``["a.b=1", ...]`` from repeated ``--set`` flags."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out
