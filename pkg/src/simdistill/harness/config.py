"""Run configuration: strict JSON in, validated library objects out.

Every key is checked; an unknown or ill-typed key fails with its full path
(e.g. ``distill.score_time_dist.p_std``) so a typo never silently falls back
to a default. A config may name a preset, which supplies defaults that
explicit keys override. The parsed result serializes back to a fully
resolved dict — every default materialized — and that resolved form is a
fixed point of the parser, which is what makes run directories
self-describing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diffusion import DiffusionSpec, TimeDistribution, WeightingFn
from ..distances import DistanceFn, default_pseudo_huber_c
from ..distill import DistillConfig, GeneratorSpec
from ..oracles import GmmSpec


class ConfigError(ValueError):
    """Configuration rejection carrying the offending key path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# Presets supply defaults only; any explicit key wins. "edm-cifar" echoes the
# image-scale recipe (denoiser reused as the generator, small learning rates,
# batch 256); "desk-2d" is the 2-D working setup (plain latent->data network,
# larger learning rates, batch 512).
PRESETS: dict[str, dict] = {
    "edm-cifar": {
        "generator": {"tag": "denoiser-as-generator", "t_star": 2.5},
        "distill": {
            "score_lr": 1e-5,
            "gen_lr": 1e-5,
            "batch_size": 256,
            "ratio": 2,
        },
    },
    "desk-2d": {
        "generator": {"tag": "mlp", "latent_dim": 2},
        "distill": {
            "score_lr": 1e-3,
            "gen_lr": 1e-3,
            "batch_size": 512,
        },
    },
}

TEACHER_TRAIN_DEFAULTS = {
    "steps": 4000,
    "lr": 1e-3,
    "batch_size": 256,
    "hidden": [64, 64],
    "net_form": "denoiser",
    "val_samples": 4096,
    "log_interval": 200,
}


# ---------------------------------------------------------------------------
# typed extraction helpers


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check_keys(obj: dict, path: str, allowed) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(path, f"expected an object, got {type(obj).__name__}")
    for key in obj:
        if key not in allowed:
            raise ConfigError(_join(path, key), "unknown key")


def _get(obj: dict, path: str, key: str, kind, default):
    if key not in obj:
        if default is _REQUIRED:
            raise ConfigError(_join(path, key), "missing required key")
        return default
    val = obj[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(_join(path, key), f"expected a number, got {val!r}")
        return float(val)
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(_join(path, key), f"expected an integer, got {val!r}")
        return val
    if kind is bool:
        if not isinstance(val, bool):
            raise ConfigError(_join(path, key), f"expected true/false, got {val!r}")
        return val
    if kind is str:
        if not isinstance(val, str):
            raise ConfigError(_join(path, key), f"expected a string, got {val!r}")
        return val
    if kind is list:
        if not isinstance(val, list):
            raise ConfigError(_join(path, key), f"expected a list, got {val!r}")
        return val
    if kind is dict:
        if not isinstance(val, dict):
            raise ConfigError(_join(path, key), f"expected an object, got {val!r}")
        return val
    raise AssertionError(kind)


_REQUIRED = object()


def _build(path: str, factory, **kwargs):
    """Construct a library object, re-raising its ValueError with the path."""
    try:
        return factory(**kwargs)
    except ValueError as err:
        raise ConfigError(path, str(err)) from err


# ---------------------------------------------------------------------------
# section parsers and their serializers


def _parse_distance(obj: dict, path: str) -> DistanceFn:
    _check_keys(obj, path, {"tag", "alpha", "beta", "delta", "c"})
    tag = _get(obj, path, "tag", str, _REQUIRED)
    if tag == "l2":
        _check_keys(obj, path, {"tag"})
        return DistanceFn.l2()
    if tag == "power":
        _check_keys(obj, path, {"tag", "alpha"})
        return _build(path, DistanceFn.power, alpha=_get(obj, path, "alpha", int, _REQUIRED))
    if tag == "exp_power":
        _check_keys(obj, path, {"tag", "alpha", "beta"})
        return _build(
            path, DistanceFn.exp_power,
            alpha=_get(obj, path, "alpha", int, _REQUIRED),
            beta=_get(obj, path, "beta", float, _REQUIRED),
        )
    if tag == "l1":
        _check_keys(obj, path, {"tag"})
        return DistanceFn.l1()
    if tag == "huber":
        _check_keys(obj, path, {"tag", "delta"})
        return _build(path, DistanceFn.huber, delta=_get(obj, path, "delta", float, _REQUIRED))
    if tag == "pseudo_huber":
        _check_keys(obj, path, {"tag", "c"})
        return _build(path, DistanceFn.pseudo_huber, c=_get(obj, path, "c", float, _REQUIRED))
    raise ConfigError(_join(path, "tag"), f"unknown distance tag {tag!r}")


def _distance_dict(d: DistanceFn) -> dict:
    out = {"tag": d.tag}
    if d.tag in ("power", "exp_power"):
        out["alpha"] = d.alpha
    if d.tag == "exp_power":
        out["beta"] = d.beta
    if d.tag == "huber":
        out["delta"] = d.delta
    if d.tag == "pseudo_huber":
        out["c"] = d.c
    return out


def _parse_time_dist(obj: dict, path: str) -> TimeDistribution:
    kind = _get(obj, path, "kind", str, _REQUIRED)
    if kind == "log-normal":
        _check_keys(obj, path, {"kind", "p_mean", "p_std"})
        return _build(
            path, TimeDistribution.log_normal,
            p_mean=_get(obj, path, "p_mean", float, _REQUIRED),
            p_std=_get(obj, path, "p_std", float, _REQUIRED),
        )
    if kind == "karr-uniform":
        _check_keys(obj, path, {"kind", "k_max"})
        return _build(path, TimeDistribution.karr_uniform, k_max=_get(obj, path, "k_max", int, 800))
    if kind == "fixed-grid":
        _check_keys(obj, path, {"kind", "values"})
        vals = _get(obj, path, "values", list, _REQUIRED)
        return _build(path, TimeDistribution.fixed_grid, values=vals)
    raise ConfigError(_join(path, "kind"), f"unknown time distribution kind {kind!r}")


def _time_dist_dict(td: TimeDistribution) -> dict:
    if td.kind == "log-normal":
        return {"kind": td.kind, "p_mean": td.p_mean, "p_std": td.p_std}
    if td.kind == "karr-uniform":
        return {"kind": td.kind, "k_max": td.k_max}
    return {"kind": td.kind, "values": list(td.values)}


def _parse_weighting(obj: dict, path: str) -> WeightingFn:
    kind = _get(obj, path, "kind", str, _REQUIRED)
    if kind == "one":
        _check_keys(obj, path, {"kind"})
        return WeightingFn.one()
    if kind == "edm":
        _check_keys(obj, path, {"kind", "sigma_data"})
        return _build(path, WeightingFn.edm, sigma_data=_get(obj, path, "sigma_data", float, 0.5))
    if kind == "sid":
        _check_keys(obj, path, {"kind", "C"})
        C = _get(obj, path, "C", float, None) if obj.get("C") is not None else None
        return _build(path, WeightingFn.sid, C=C)
    raise ConfigError(_join(path, "kind"), f"unknown weighting kind {kind!r}")


def _weighting_dict(w: WeightingFn) -> dict:
    if w.kind == "edm":
        return {"kind": w.kind, "sigma_data": w.sigma_data}
    if w.kind == "sid":
        return {"kind": w.kind, "C": w.C}
    return {"kind": w.kind}


def _parse_diffusion(obj: dict, path: str) -> DiffusionSpec:
    _check_keys(obj, path, {"sigma_min", "sigma_max", "rho", "K", "sigma_data", "T", "drift"})
    kwargs = dict(
        sigma_min=_get(obj, path, "sigma_min", float, 0.002),
        sigma_max=_get(obj, path, "sigma_max", float, 80.0),
        rho=_get(obj, path, "rho", float, 7.0),
        K=_get(obj, path, "K", int, 1000),
        sigma_data=_get(obj, path, "sigma_data", float, 0.5),
        drift=_get(obj, path, "drift", float, 0.0),
    )
    if "T" in obj:
        kwargs["T"] = _get(obj, path, "T", float, _REQUIRED)
    return _build(path, DiffusionSpec, **kwargs)


def _diffusion_dict(d: DiffusionSpec) -> dict:
    return {
        "sigma_min": d.sigma_min, "sigma_max": d.sigma_max, "rho": d.rho,
        "K": d.K, "sigma_data": d.sigma_data, "T": d.T, "drift": d.drift,
    }


def _parse_generator(obj: dict, path: str) -> GeneratorSpec:
    _check_keys(obj, path, {"tag", "latent_dim", "widths", "t_star", "activation", "conditioning"})
    return _build(
        path, GeneratorSpec,
        tag=_get(obj, path, "tag", str, "mlp"),
        latent_dim=_get(obj, path, "latent_dim", int, 2),
        widths=tuple(_get(obj, path, "widths", list, [])),
        t_star=_get(obj, path, "t_star", float, 2.5),
        activation=_get(obj, path, "activation", str, "silu"),
        conditioning=_get(obj, path, "conditioning", str, "concat-log-t"),
    )


def _generator_dict(g: GeneratorSpec) -> dict:
    return {
        "tag": g.tag, "latent_dim": g.latent_dim, "widths": list(g.widths),
        "t_star": g.t_star, "activation": g.activation, "conditioning": g.conditioning,
    }


_DISTILL_KEYS = {
    "gen_steps", "score_lr", "gen_lr", "gen_lr_decay", "batch_size", "ratio", "distance",
    "score_time_dist", "gen_time_dist", "score_weighting", "gen_weighting",
    "loss_form", "first_factor_grad", "baseline", "score_hidden", "activation",
    "conditioning", "eval_interval", "eval_samples", "final_eval_samples",
    "record_wall_time", "divergence_threshold",
}


def _parse_distill(obj: dict, path: str, data_dim: int) -> DistillConfig:
    _check_keys(obj, path, _DISTILL_KEYS)
    defaults = DistillConfig(gen_steps=0)
    if "distance" in obj:
        distance = _parse_distance(_get(obj, path, "distance", dict, _REQUIRED), _join(path, "distance"))
    else:
        # transition scale of the default bounded distance tracks the data dim
        distance = DistanceFn.pseudo_huber(default_pseudo_huber_c(data_dim))

    def _dist(key, fallback):
        if key not in obj:
            return fallback
        return _parse_time_dist(_get(obj, path, key, dict, _REQUIRED), _join(path, key))

    def _wgt(key, fallback):
        if key not in obj:
            return fallback
        return _parse_weighting(_get(obj, path, key, dict, _REQUIRED), _join(path, key))

    return _build(
        path, DistillConfig,
        gen_steps=_get(obj, path, "gen_steps", int, _REQUIRED),
        score_lr=_get(obj, path, "score_lr", float, defaults.score_lr),
        gen_lr=_get(obj, path, "gen_lr", float, defaults.gen_lr),
        gen_lr_decay=_get(obj, path, "gen_lr_decay", str, defaults.gen_lr_decay),
        batch_size=_get(obj, path, "batch_size", int, defaults.batch_size),
        ratio=_get(obj, path, "ratio", int, defaults.ratio),
        distance=distance,
        score_time_dist=_dist("score_time_dist", defaults.score_time_dist),
        gen_time_dist=_dist("gen_time_dist", defaults.gen_time_dist),
        score_weighting=_wgt("score_weighting", defaults.score_weighting),
        gen_weighting=_wgt("gen_weighting", defaults.gen_weighting),
        loss_form=_get(obj, path, "loss_form", str, defaults.loss_form),
        first_factor_grad=_get(obj, path, "first_factor_grad", bool, defaults.first_factor_grad),
        baseline=_get(obj, path, "baseline", str, defaults.baseline),
        score_hidden=tuple(_get(obj, path, "score_hidden", list, list(defaults.score_hidden))),
        activation=_get(obj, path, "activation", str, defaults.activation),
        conditioning=_get(obj, path, "conditioning", str, defaults.conditioning),
        eval_interval=_get(obj, path, "eval_interval", int, defaults.eval_interval),
        eval_samples=_get(obj, path, "eval_samples", int, defaults.eval_samples),
        final_eval_samples=_get(obj, path, "final_eval_samples", int, defaults.final_eval_samples),
        record_wall_time=_get(obj, path, "record_wall_time", bool, defaults.record_wall_time),
        divergence_threshold=_get(obj, path, "divergence_threshold", float, defaults.divergence_threshold),
    )


def _distill_dict(c: DistillConfig) -> dict:
    return {
        "gen_steps": c.gen_steps,
        "score_lr": c.score_lr,
        "gen_lr": c.gen_lr,
        "gen_lr_decay": c.gen_lr_decay,
        "batch_size": c.batch_size,
        "ratio": c.ratio,
        "distance": _distance_dict(c.distance),
        "score_time_dist": _time_dist_dict(c.score_time_dist),
        "gen_time_dist": _time_dist_dict(c.gen_time_dist),
        "score_weighting": _weighting_dict(c.score_weighting),
        "gen_weighting": _weighting_dict(c.gen_weighting),
        "loss_form": c.loss_form,
        "first_factor_grad": c.first_factor_grad,
        "baseline": c.baseline,
        "score_hidden": list(c.score_hidden),
        "activation": c.activation,
        "conditioning": c.conditioning,
        "eval_interval": c.eval_interval,
        "eval_samples": c.eval_samples,
        "final_eval_samples": c.final_eval_samples,
        "record_wall_time": c.record_wall_time,
        "divergence_threshold": c.divergence_threshold,
    }


def _parse_gmm(obj: dict, path: str) -> GmmSpec:
    _check_keys(obj, path, {"kind", "weights", "means", "scales"})
    weights = _get(obj, path, "weights", list, _REQUIRED)
    means = _get(obj, path, "means", list, _REQUIRED)
    scales = obj.get("scales", _REQUIRED)
    if scales is _REQUIRED:
        raise ConfigError(_join(path, "scales"), "missing required key")
    try:
        return GmmSpec(np.asarray(weights, float), np.asarray(means, float), np.asarray(scales, float))
    except ValueError as err:
        raise ConfigError(path, str(err)) from err


def _gmm_dict(g: GmmSpec) -> dict:
    return {
        "kind": "gmm",
        "weights": g.weights.tolist(),
        "means": g.means.tolist(),
        "scales": g.scales.tolist(),
    }


def _parse_teacher(obj: dict, path: str, base_dir: Path) -> dict:
    kind = _get(obj, path, "kind", str, _REQUIRED)
    if kind == "gmm":
        return {"kind": "gmm", "spec": _parse_gmm(obj, path)}
    if kind == "checkpoint":
        _check_keys(obj, path, {"kind", "path"})
        rel = _get(obj, path, "path", str, _REQUIRED)
        return {"kind": "checkpoint", "path": str((base_dir / rel) if not Path(rel).is_absolute() else Path(rel)), "raw_path": rel}
    raise ConfigError(_join(path, "kind"), f"unknown teacher kind {kind!r} (expected gmm or checkpoint)")


def _teacher_dict(t: dict) -> dict:
    if t["kind"] == "gmm":
        return _gmm_dict(t["spec"])
    return {"kind": "checkpoint", "path": t["raw_path"]}


def _csv_dim(path: Path, key_path: str) -> int:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline()
    except OSError as err:
        raise ConfigError(key_path, f"cannot read sample file {path}: {err}") from err
    cols = [c for c in first.strip().split(",") if c]
    if not cols:
        raise ConfigError(key_path, f"sample file {path} is empty")
    return len(cols)


def _parse_data(obj: dict, path: str, base_dir: Path) -> dict:
    kind = _get(obj, path, "kind", str, _REQUIRED)
    if kind == "gmm":
        spec = _parse_gmm(obj, path)
        return {"kind": "gmm", "spec": spec, "dim": spec.dim}
    if kind == "csv":
        _check_keys(obj, path, {"kind", "path"})
        rel = _get(obj, path, "path", str, _REQUIRED)
        full = (base_dir / rel) if not Path(rel).is_absolute() else Path(rel)
        return {
            "kind": "csv",
            "path": str(full),
            "raw_path": rel,
            "dim": _csv_dim(full, _join(path, "path")),
        }
    raise ConfigError(_join(path, "kind"), f"unknown data kind {kind!r} (expected gmm or csv)")


def _data_dict(d: dict) -> dict:
    if d["kind"] == "gmm":
        return _gmm_dict(d["spec"])
    return {"kind": "csv", "path": d["raw_path"]}


def _parse_teacher_train(obj: dict, path: str) -> dict:
    _check_keys(obj, path, set(TEACHER_TRAIN_DEFAULTS) | {"time_dist", "weighting"})
    out = dict(TEACHER_TRAIN_DEFAULTS)
    out["steps"] = _get(obj, path, "steps", int, out["steps"])
    out["lr"] = _get(obj, path, "lr", float, out["lr"])
    out["batch_size"] = _get(obj, path, "batch_size", int, out["batch_size"])
    out["hidden"] = [int(h) for h in _get(obj, path, "hidden", list, out["hidden"])]
    out["net_form"] = _get(obj, path, "net_form", str, out["net_form"])
    out["val_samples"] = _get(obj, path, "val_samples", int, out["val_samples"])
    out["log_interval"] = _get(obj, path, "log_interval", int, out["log_interval"])
    if out["net_form"] not in ("denoiser", "score"):
        raise ConfigError(_join(path, "net_form"), f"expected denoiser or score, got {out['net_form']!r}")
    if out["steps"] < 1 or out["lr"] <= 0 or out["batch_size"] < 2 or out["val_samples"] < 2:
        raise ConfigError(path, "steps/lr/batch_size/val_samples out of range")
    td = obj.get("time_dist")
    out["time_dist"] = (
        _parse_time_dist(td, _join(path, "time_dist")) if td is not None
        else TimeDistribution.log_normal(-1.2, 1.2)
    )
    wg = obj.get("weighting")
    out["weighting"] = (
        _parse_weighting(wg, _join(path, "weighting")) if wg is not None
        else WeightingFn.edm()
    )
    return out


def _teacher_train_dict(tt: dict) -> dict:
    return {
        "steps": tt["steps"], "lr": tt["lr"], "batch_size": tt["batch_size"],
        "hidden": list(tt["hidden"]), "net_form": tt["net_form"],
        "val_samples": tt["val_samples"], "log_interval": tt["log_interval"],
        "time_dist": _time_dist_dict(tt["time_dist"]),
        "weighting": _weighting_dict(tt["weighting"]),
    }


# ---------------------------------------------------------------------------
# the top-level config


_TOP_KEYS = {
    "tag", "seed", "out_dir", "preset", "diffusion", "generator",
    "distill", "teacher", "data", "teacher_train",
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    """A fully validated run description."""

    tag: str
    seed: int
    out_dir: str
    preset: str | None
    diffusion: DiffusionSpec
    generator: GeneratorSpec
    distill: DistillConfig | None
    teacher: dict | None
    data: dict | None
    teacher_train: dict | None

    def resolved(self) -> dict:
        """Every default materialized; a fixed point of ``parse_config``."""
        out = {
            "tag": self.tag,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "diffusion": _diffusion_dict(self.diffusion),
            "generator": _generator_dict(self.generator),
        }
        if self.preset is not None:
            out["preset"] = self.preset
        if self.distill is not None:
            out["distill"] = _distill_dict(self.distill)
        if self.teacher is not None:
            out["teacher"] = _teacher_dict(self.teacher)
        if self.data is not None:
            out["data"] = _data_dict(self.data)
        if self.teacher_train is not None:
            out["teacher_train"] = _teacher_train_dict(self.teacher_train)
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.resolved(), indent=2, sort_keys=True) + "\n"


def config_hash(cfg: RunConfig) -> str:
    """Short digest of the resolved config; stamped into checkpoints."""
    return hashlib.blake2b(cfg.canonical_json().encode(), digest_size=8).hexdigest()


def parse_config(obj: dict, base_dir: str | Path = ".") -> RunConfig:
    base_dir = Path(base_dir)
    if not isinstance(obj, dict):
        raise ConfigError("", f"top level must be an object, got {type(obj).__name__}")
    _check_keys(obj, "", _TOP_KEYS)
    preset = _get(obj, "", "preset", str, None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
        obj = _deep_merge(PRESETS[preset], obj)

    data = None
    if "data" in obj:
        data = _parse_data(_get(obj, "", "data", dict, _REQUIRED), "data", base_dir)
    teacher = None
    if "teacher" in obj:
        teacher = _parse_teacher(_get(obj, "", "teacher", dict, _REQUIRED), "teacher", base_dir)

    # the default distance scale needs the data dimensionality
    data_dim = data["dim"] if data is not None else 2

    distill = None
    if "distill" in obj:
        distill = _parse_distill(_get(obj, "", "distill", dict, _REQUIRED), "distill", data_dim)
    teacher_train = None
    if "teacher_train" in obj:
        teacher_train = _parse_teacher_train(
            _get(obj, "", "teacher_train", dict, _REQUIRED), "teacher_train"
        )

    return RunConfig(
        tag=_get(obj, "", "tag", str, "run"),
        seed=_get(obj, "", "seed", int, 0),
        out_dir=_get(obj, "", "out_dir", str, ""),
        preset=preset,
        diffusion=_parse_diffusion(_get(obj, "", "diffusion", dict, {}), "diffusion"),
        generator=_parse_generator(_get(obj, "", "generator", dict, {}), "generator"),
        distill=distill,
        teacher=teacher,
        data=data,
        teacher_train=teacher_train,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError("", f"cannot read config {path}: {err}") from err
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("", f"config {path} is not valid JSON: {err}") from err
    return parse_config(obj, base_dir=path.parent)
