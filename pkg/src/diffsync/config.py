"""Experiment configuration files (YAML).

Every key is checked; unknown keys and malformed values raise
:class:`~diffsync.errors.ConfigError` naming the offending field, e.g.
``operators[0].size``. See ``configs/`` for complete examples and the README
for the full schema.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import spaces
from .denoiser import GaussianMixture
from .errors import ConfigError, ContractError
from .noise import seeded_gaussian_noise
from .schedule import make_schedule
from .sync import DenoisingPlan, case_plan

__all__ = ["ExperimentConfig", "load_config", "parse_config"]

FAMILIES = ("one_to_one", "one_to_n", "n_to_one")


@dataclass
class ExperimentConfig:
    schedule: object
    prior: GaussianMixture
    operators: list
    plan: DenoisingPlan
    case: object  # case id when the plan came from one, else None
    seed: int
    out_dir: Path
    trace: bool
    value_range: tuple
    family: str
    compare_cases: list
    raw: dict


def _join(path, key):
    return f"{path}.{key}" if path else key


def _keys(node, path, required, optional=()):
    if not isinstance(node, dict):
        raise ConfigError("expected a mapping", path)
    for k in node:
        if k not in required and k not in optional:
            raise ConfigError(f"unknown key {k!r}", path)
    for k in required:
        if k not in node:
            raise ConfigError("missing required field", _join(path, k))


def _int(node, key, path, minimum=None):
    v = node[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError("expected an integer", _join(path, key))
    if minimum is not None and v < minimum:
        raise ConfigError(f"must be >= {minimum}", _join(path, key))
    return v


def _num(node, key, path):
    v = node[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError("expected a number", _join(path, key))
    return float(v)


def _dims(node, key, path, rank=None):
    v = node[key]
    if not isinstance(v, list) or not v or not all(isinstance(s, int) and not isinstance(s, bool) and s > 0 for s in v):
        raise ConfigError("expected a list of positive integers", _join(path, key))
    if rank is not None and len(v) != rank:
        raise ConfigError(f"expected {rank} entries", _join(path, key))
    return tuple(v)


def _schedule(node):
    path = "schedule"
    node = dict(node or {})
    _keys(node, path, (), ("T_train", "num_steps", "beta_min", "beta_max"))
    kw = {
        "T_train": _int(node, "T_train", path, 1) if "T_train" in node else 1000,
        "num_steps": _int(node, "num_steps", path, 1) if "num_steps" in node else 30,
        "beta_min": _num(node, "beta_min", path) if "beta_min" in node else 1e-4,
        "beta_max": _num(node, "beta_max", path) if "beta_max" in node else 0.02,
    }
    return make_schedule(**kw)


def _operator(node, path):
    if not isinstance(node, dict) or "kind" not in node:
        raise ConfigError("missing required field", f"{path}.kind")
    kind = node["kind"]
    try:
        if kind in ("identity", "transpose"):
            _keys(node, path, ("kind", "size"))
            size = _dims(node, "size", path)
            return [spaces.make_identity(size) if kind == "identity" else spaces.make_transpose(size)]
        if kind == "flip":
            _keys(node, path, ("kind", "size"), ("axis",))
            size = _dims(node, "size", path)
            axis = _int(node, "axis", path, 0) if "axis" in node else 0
            if axis >= len(size):
                raise ConfigError("axis out of range", f"{path}.axis")
            return [spaces.make_flip(size, axis)]
        if kind == "rot90":
            _keys(node, path, ("kind", "size"), ("k",))
            k = _int(node, "k", path) if "k" in node else 1
            return [spaces.make_rot90(_dims(node, "size", path, 2), k)]
        if kind == "shuffle":
            _keys(node, path, ("kind", "size", "seed"))
            return [spaces.make_random_permutation(_dims(node, "size", path), _int(node, "seed", path, 0))]
        if kind == "crop":
            _keys(node, path, ("kind", "canvas", "window", "origin"))
            origin = node["origin"]
            if not isinstance(origin, list) or not all(isinstance(o, int) for o in origin):
                raise ConfigError("expected a list of integers", f"{path}.origin")
            return [spaces.make_crop(_dims(node, "canvas", path), origin, _dims(node, "window", path))]
        if kind == "crop_tiling":
            _keys(node, path, ("kind", "canvas", "window", "stride"))
            return spaces.make_crop_tiling(
                _dims(node, "canvas", path), _dims(node, "window", path), _dims(node, "stride", path)
            )
        if kind == "inner_rotation":
            _keys(node, path, ("kind", "size"), ("angle", "angles", "unproject"))
            size = _dims(node, "size", path, 2)
            mode = node.get("unproject", "mean")
            if mode not in ("mean", "inverse"):
                raise ConfigError("expected 'mean' or 'inverse'", f"{path}.unproject")
            if ("angle" in node) == ("angles" in node):
                raise ConfigError("give exactly one of 'angle' or 'angles'", path)
            if "angle" in node:
                angles = [_num(node, "angle", path)]
            else:
                spec = node["angles"]
                if isinstance(spec, list):
                    angles = [_num({"a": a}, "a", f"{path}.angles") for a in spec]
                else:
                    _keys(spec, f"{path}.angles", ("start", "stop", "count"))
                    count = _int(spec, "count", f"{path}.angles", 1)
                    start = _num(spec, "start", f"{path}.angles")
                    stop = _num(spec, "stop", f"{path}.angles")
                    angles = np.linspace(start, stop, count).tolist()
            return [spaces.make_inner_rotation(size, a, mode) for a in angles]
    except ConfigError as err:
        if err.path is None:
            raise ConfigError(str(err), path) from None
        raise
    raise ConfigError(f"unknown operator kind {kind!r}", f"{path}.kind")


def _pattern(spec, shape, path):
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return np.full(shape, float(spec))
    if not isinstance(spec, dict) or "pattern" not in spec:
        raise ConfigError("expected a number or a {pattern: ...} mapping", path)
    kind = spec["pattern"]
    if kind == "gradient":
        _keys(spec, path, ("pattern", "low", "high"), ("axis",))
        axis = _int(spec, "axis", path, 0) if "axis" in spec else len(shape) - 1
        if axis >= len(shape):
            raise ConfigError("axis out of range", f"{path}.axis")
        ramp = np.linspace(_num(spec, "low", path), _num(spec, "high", path), shape[axis])
        view = [1] * len(shape)
        view[axis] = shape[axis]
        return np.broadcast_to(ramp.reshape(view), shape).copy()
    if kind == "checker":
        _keys(spec, path, ("pattern", "low", "high"), ("period",))
        period = _int(spec, "period", path, 1) if "period" in spec else 4
        idx = (np.indices(shape) // period).sum(axis=0)
        lo, hi = _num(spec, "low", path), _num(spec, "high", path)
        return np.where(idx % 2 == 0, lo, hi).astype(np.float64)
    if kind == "random":
        _keys(spec, path, ("pattern", "seed"), ("scale",))
        scale = _num(spec, "scale", path) if "scale" in spec else 1.0
        return scale * seeded_gaussian_noise(shape, _int(spec, "seed", path, 0), 0)
    raise ConfigError(f"unknown pattern {kind!r}", f"{path}.pattern")


def _prior(node, view_shape):
    path = "prior"
    _keys(node, path, ("weights", "means", "variances"), ("pixelwise", "shape"))
    shape = _dims(node, "shape", path) if "shape" in node else view_shape
    if shape != view_shape:
        raise ConfigError(f"prior shape {shape} differs from the view shape {view_shape}", f"{path}.shape")
    for key in ("weights", "means", "variances"):
        if not isinstance(node[key], list) or not node[key]:
            raise ConfigError("expected a nonempty list", _join(path, key))
    k = len(node["weights"])
    if len(node["means"]) != k or len(node["variances"]) != k:
        raise ConfigError("weights, means and variances need the same length", path)
    weights = [_num({"v": v}, "v", f"{path}.weights[{i}]") for i, v in enumerate(node["weights"])]
    variances = [_num({"v": v}, "v", f"{path}.variances[{i}]") for i, v in enumerate(node["variances"])]
    means = np.stack([_pattern(m, shape, f"{path}.means[{i}]") for i, m in enumerate(node["means"])])
    pixelwise = node.get("pixelwise", True)
    if not isinstance(pixelwise, bool):
        raise ConfigError("expected true or false", f"{path}.pixelwise")
    weights = np.asarray(weights)
    if np.all(weights > 0):
        weights = weights / weights.sum()
    try:
        return GaussianMixture(weights, means, variances, pixelwise=pixelwise)
    except ContractError as err:
        raise ConfigError(str(err), path) from None


def _plan(node):
    path = "plan"
    if not isinstance(node, dict):
        raise ConfigError("expected a mapping", path)
    if "case" in node:
        _keys(node, path, ("case",), ("init_policy",))
        plan = case_plan(node["case"])
        case = node["case"]
    else:
        _keys(node, path, ("denoise_space", "trajectory"), ("sync_mask", "init_policy"))
        mask = node.get("sync_mask", [])
        if not isinstance(mask, list) or not all(isinstance(b, bool) for b in mask):
            raise ConfigError("expected a list of booleans", f"{path}.sync_mask")
        plan = DenoisingPlan(node["denoise_space"], node["trajectory"], tuple(mask))
        case = None
    if node.get("init_policy") is not None:
        plan = plan.with_init(node["init_policy"])
    return plan, case


def parse_config(raw, base_dir="."):
    """Validate a config mapping and build the objects it describes."""
    _keys(
        raw, "", ("operators", "prior", "plan"),
        ("schedule", "canonical", "family", "seed", "trace", "outputs", "compare"),
    )
    sched = _schedule(raw.get("schedule"))

    if not isinstance(raw["operators"], list) or not raw["operators"]:
        raise ConfigError("expected a nonempty list", "operators")
    ops = []
    for i, node in enumerate(raw["operators"]):
        ops.extend(_operator(node, f"operators[{i}]"))

    planes = 1
    if "canonical" in raw:
        _keys(raw["canonical"], "canonical", (), ("planes",))
        if "planes" in raw["canonical"]:
            planes = _int(raw["canonical"], "planes", "canonical", 1)
    if planes > 1:
        try:
            ops = [spaces.make_multiplane(op.canonical_shape, planes, op) for op in ops]
        except ConfigError as err:
            raise ConfigError(str(err), "canonical.planes") from None
    for i, op in enumerate(ops[1:], 1):
        if op.canonical_shape != ops[0].canonical_shape:
            raise ConfigError(f"view {i} uses a different canonical shape", "operators")
        if op.instance_shape != ops[0].instance_shape:
            raise ConfigError(f"view {i} has a different shape from view 0", "operators")

    prior = _prior(raw["prior"], ops[0].instance_shape)
    plan, case = _plan(raw["plan"])

    family = raw.get("family")
    if family is None:
        if planes > 1:
            family = "n_to_one"
        elif all(op.kind != "inner_rotation" for op in ops):
            family = "one_to_one"
        else:
            family = "one_to_n"
    if family not in FAMILIES:
        raise ConfigError(f"expected one of {FAMILIES}", "family")

    seed = 0
    if "seed" in raw:
        seed = _int(raw, "seed", "", 0)
    trace = raw.get("trace", False)
    if not isinstance(trace, bool):
        raise ConfigError("expected true or false", "trace")

    out_dir = Path(base_dir) / "out"
    value_range = (-3.0, 3.0)
    if "outputs" in raw:
        node = raw["outputs"]
        _keys(node, "outputs", (), ("dir", "range"))
        if "dir" in node:
            if not isinstance(node["dir"], str):
                raise ConfigError("expected a path string", "outputs.dir")
            out_dir = Path(base_dir) / node["dir"]
        if "range" in node:
            rng = node["range"]
            if not (isinstance(rng, list) and len(rng) == 2 and all(isinstance(v, (int, float)) for v in rng) and rng[0] < rng[1]):
                raise ConfigError("expected [low, high] with low < high", "outputs.range")
            value_range = (float(rng[0]), float(rng[1]))

    compare = [1, 2, 3, 4, 5]
    if "compare" in raw:
        _keys(raw["compare"], "compare", ("cases",))
        compare = raw["compare"]["cases"]
        if not isinstance(compare, list) or not compare:
            raise ConfigError("expected a nonempty list", "compare.cases")
        for i, c in enumerate(compare):
            try:
                case_plan(c)
            except ConfigError:
                raise ConfigError(f"unknown case {c!r}", f"compare.cases[{i}]") from None

    return ExperimentConfig(
        schedule=sched, prior=prior, operators=ops, plan=plan, case=case, seed=seed,
        out_dir=out_dir, trace=trace, value_range=value_range, family=family,
        compare_cases=compare, raw=raw,
    )


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"not valid YAML: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at top level")
    return parse_config(raw, base_dir=path.parent)
