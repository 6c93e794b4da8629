"""Scenario configuration: a flat ``key = value`` text format validated by pydantic.

Keys carry their units in the name (``E0_pa``, ``dt_s``). Anything omitted
takes the scenario's desk-scale default. The resolved configuration is
written back in the same format next to every run's outputs.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

Scenario = Literal["patch-linear", "patch-quadratic", "cantilever-static", "cantilever-transient", "custom"]
Variant = Literal["exact", "nodal", "internal"]

_PATCH = dict(
    width_m=0.2, height_m=0.2, d_min_m=0.002, d_max_m=0.005, fill=0.5, network="dual", bins_nx=10, bins_ny=10
)
_CANTILEVER = dict(
    width_m=1.2, height_m=0.3, d_min_m=0.0016, d_max_m=0.004, fill=0.5, bins_nx=40, bins_ny=1
)
SCENARIO_DEFAULTS: dict[str, dict] = {
    "patch-linear": _PATCH,
    "patch-quadratic": _PATCH,
    "custom": _PATCH,
    "cantilever-static": _CANTILEVER,
    "cantilever-transient": dict(_CANTILEVER, bins_nx=40, bins_ny=10),
}


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    scenario: Scenario
    # geometry and packing
    width_m: float = Field(gt=0)
    height_m: float = Field(gt=0)
    d_min_m: float = Field(gt=0)
    d_max_m: float = Field(gt=0)
    fuller_q: float = Field(0.5, gt=0)
    fill: float = Field(gt=0, lt=1)
    seed: int = 0
    max_attempts: int = Field(20000, ge=1)
    # mechanics
    E0_pa: float = Field(40e9, gt=0)
    alpha: float = Field(0.3, ge=0)
    beta: float = Field(0.0, ge=0)
    rho_kgm3: float = Field(2400.0, ge=0)
    load_P_n: float = 1e5
    # transport
    network: Literal["particle", "dual"] = "particle"
    lambda_flow: float = Field(1.0, gt=0)
    grad_x: float = Field(4.0, description="custom scenario: boundary potential gradient, x")
    grad_y: float = Field(4.0, description="custom scenario: boundary potential gradient, y")
    source: float = Field(0.0, description="custom scenario: uniform source density")
    # time integration; dt_s = 0 selects T1/40, t_end_s = 0 selects 2*periods*T1
    rho_inf: float = Field(0.8, ge=0, le=1)
    dt_s: float = Field(0.0, ge=0)
    t_end_s: float = Field(0.0, ge=0)
    periods: int = Field(5, ge=1)
    output_every: int = Field(1, ge=1)
    # homogenization
    bins_nx: int = Field(ge=1)
    bins_ny: int = Field(ge=1)
    variants: tuple[Variant, ...] = ("exact", "nodal", "internal")
    output_dir: str = "out"

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data):
        if isinstance(data, dict) and "scenario" in data:
            defaults = SCENARIO_DEFAULTS.get(str(data["scenario"]), {})
            data = {**defaults, **data}
        return data

    @field_validator("variants", mode="before")
    @classmethod
    def _split_variants(cls, v):
        if isinstance(v, str):
            v = [s.strip() for s in v.split(",") if s.strip()]
        return tuple(v)

    @model_validator(mode="after")
    def _check(self):
        if self.d_min_m > self.d_max_m:
            raise ValueError("d_min_m must not exceed d_max_m")
        if not self.variants:
            raise ValueError("at least one variant is required")
        return self

    # -- text round trip ---------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for name in type(self).model_fields:
            v = getattr(self, name)
            if isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """Hash of the resolved configuration, excluding where outputs go."""
        text = "\n".join(l for l in self.to_text().splitlines() if not l.startswith("output_dir"))
        return hashlib.sha256(text.encode()).hexdigest()


def parse_flat(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"line {lineno}: empty key")
        if k in out:
            raise ConfigError(f"line {lineno}: duplicate key {k!r}")
        out[k] = v
    return out


def make_config(values: dict) -> ScenarioConfig:
    name = values.get("scenario")
    if name is not None and str(name) not in SCENARIO_DEFAULTS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIO_DEFAULTS)}")
    try:
        return ScenarioConfig.model_validate(values)
    except ValidationError as exc:
        msgs = "; ".join(f"{'.'.join(str(p) for p in e['loc']) or 'config'}: {e['msg']}" for e in exc.errors())
        raise ConfigError(f"invalid configuration: {msgs}") from None


def load_config(path=None, overrides: dict | None = None) -> ScenarioConfig:
    values: dict = {}
    if path is not None:
        try:
            values.update(parse_flat(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    if "scenario" not in values:
        raise ConfigError("configuration must name a scenario")
    return make_config(values)
