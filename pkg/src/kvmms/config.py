"""Versioned run configuration (TOML) with strict key validation."""
from __future__ import annotations

import copy
import os
import sys
from dataclasses import dataclass, field as dc_field
from importlib import resources

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .densities import MaterialParams
from .errors import ValidationError
from .field import grid_for
from .mms import MmsConfig

SCHEMA_VERSION = 1

# section -> allowed keys and their defaults
SCHEMA = {
    "material": {"d": 2, "p": 4.0, "p_tilde": 2.0, "q": 4.0, "alpha_W": 1.0, "beta_W": 0.5,
                 "kappa_P": 0.01, "A": [[1.0, 0.0], [0.0, 1.0]], "delta": 0.01},
    "grid": {"n": 11},
    "mms": {"tau": 0.02, "T": 1.0, "inner_tol": 1e-9, "inner_max_iters": 2000, "armijo_c": 1e-4,
            "armijo_shrink": 0.5, "memory": 10, "checkpoint_every": 0},
    "scenario": {"M_prime": 100.0, "uhat": [], "ftilde": [], "u0_bubble": []},
    "diagnostics": {"edb": True, "slope_tol": 1e-10},
    "decay": {"floor": 1e-10, "transient_fraction": 0.1, "steady_tol": 1e-11, "starts": 3,
              "agree_tol": 1e-8},
    "propcheck": {"count": 100, "amplitude": 0.1, "degree": 2, "M": 1e6, "grids": [17, 33],
                  "slope_count": 50},
    "convergence": {"taus": [0.01, 0.005, 0.0025], "T": 1.0},
    "slope": {"tol": 1e-10},
}
TOP_LEVEL = {"schema_version": None, "name": "custom", "seed": 0}

PRESETS = ("ref_small_strain", "decay_p1_5", "decay_p2", "decay_p3")


@dataclass
class RunConfig:
    name: str
    seed: int
    params: MaterialParams
    n: int
    mms: MmsConfig
    sections: dict = dc_field(default_factory=dict)

    @property
    def grid(self):
        return grid_for(self.params.d, self.n)

    def section(self, name: str) -> dict:
        return self.sections[name]

    def scenario(self):
        from .decay import SmallStrainScenario
        sc = self.sections["scenario"]
        return SmallStrainScenario.from_terms(self.params, self.grid, sc["uhat"], sc["ftilde"],
                                              sc["u0_bubble"], sc["M_prime"])

    def with_overrides(self, tau: float | None = None, p_tilde: float | None = None,
                       seed: int | None = None) -> "RunConfig":
        raw = copy.deepcopy(self.sections)
        if tau is not None:
            raw["mms"]["tau"] = tau
        if p_tilde is not None:
            raw["material"]["p_tilde"] = p_tilde
        raw.update(schema_version=SCHEMA_VERSION, name=self.name,
                   seed=self.seed if seed is None else seed)
        return from_dict(raw)

    def to_dict(self) -> dict:
        out = copy.deepcopy(self.sections)
        out.update(schema_version=SCHEMA_VERSION, name=self.name, seed=self.seed)
        return out


def _merge_section(name: str, given: dict) -> dict:
    if not isinstance(given, dict):
        raise ValidationError("section [%s] must be a table" % name)
    allowed = SCHEMA[name]
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ValidationError("unknown key(s) in [%s]: %s" % (name, ", ".join(unknown)))
    out = copy.deepcopy(allowed)
    out.update(copy.deepcopy(given))
    return out


def from_dict(raw: dict) -> RunConfig:
    unknown = sorted(set(raw) - set(TOP_LEVEL) - set(SCHEMA))
    if unknown:
        raise ValidationError("unknown top-level key(s): %s" % ", ".join(unknown))
    if "schema_version" not in raw:
        raise ValidationError("missing schema_version")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ValidationError("unsupported schema_version %r (expected %d)" % (raw["schema_version"], SCHEMA_VERSION))
    sections = {name: _merge_section(name, raw.get(name, {})) for name in SCHEMA}
    mat = sections["material"]
    try:
        params = MaterialParams(d=int(mat["d"]), p=float(mat["p"]), p_tilde=float(mat["p_tilde"]),
                                q=float(mat["q"]), alpha_W=float(mat["alpha_W"]), beta_W=float(mat["beta_W"]),
                                kappa_P=float(mat["kappa_P"]), A=np.array(mat["A"], dtype=float),
                                delta=float(mat["delta"]))
        mc = sections["mms"]
        mms = MmsConfig(tau=float(mc["tau"]), T=float(mc["T"]), inner_tol=float(mc["inner_tol"]),
                        inner_max_iters=int(mc["inner_max_iters"]), armijo_c=float(mc["armijo_c"]),
                        armijo_shrink=float(mc["armijo_shrink"]), memory=int(mc["memory"]),
                        checkpoint_every=int(mc["checkpoint_every"]))
        n = int(sections["grid"]["n"])
        grid_for(params.d, n)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(str(exc)) from exc
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ValidationError("seed must be a nonnegative integer")
    return RunConfig(str(raw.get("name", "custom")), seed, params, n, mms, sections)


def load_config(path: str) -> RunConfig:
    if not os.path.isfile(path):
        raise ValidationError("config file not found: %s" % path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError("cannot parse %s: %s" % (path, exc)) from exc
    return from_dict(raw)


def load_preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ValidationError("unknown preset %r" % name)
    text = resources.files("kvmms").joinpath("presets").joinpath(name + ".toml").read_bytes()
    return from_dict(tomllib.loads(text.decode("utf-8")))


def preset_path(name: str) -> str:
    return str(resources.files("kvmms").joinpath("presets").joinpath(name + ".toml"))
