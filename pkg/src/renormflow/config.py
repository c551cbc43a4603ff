"""Flat key/value experiment configs (INI sections, one level deep).

A config has a ``[diffusion]`` section describing the pair under study, an
optional ``[mc]`` section with the Monte Carlo budget, an optional ``[run]``
section (seed, workers, output directory), and one section per command with
that command's parameters. Sections are flat: keys map to scalars or to
comma/semicolon lists. Hand-editable, diff-able, and echoed in full into a
run's metadata record so any result can be reproduced bit-exactly.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .diffusions import (
    DiffusionPair,
    PolynomialDiffusion,
    make_fixed_point,
    make_perturbed_fixed_point,
    make_polynomial,
)
from .errors import ConfigError
from .renorm import McParams
from .rng import RngStream

Vec2 = tuple[float, float]


@dataclass
class ExperimentConfig:
    """Parsed config plus the resolved defaults the run will actually use."""

    command: str
    path: Optional[Path]
    sections: dict[str, dict[str, str]]
    seed: int = 0
    workers: int = 1
    out_dir: Path = Path(".")
    resolved: dict[str, str] = field(default_factory=dict)

    # -- raw access ---------------------------------------------------------

    def section(self, name: str) -> dict[str, str]:
        return self.sections.get(name, {})

    def has(self, section: str, key: str) -> bool:
        return key in self.section(section)

    def _raw(self, section: str, key: str, default=None, required=False):
        sec = self.section(section)
        if key in sec and sec[key].strip() != "":
            self.resolved[f"{section}.{key}"] = sec[key].strip()
            return sec[key].strip()
        if required:
            raise ConfigError(f"missing required key [{section}] {key}")
        if default is not None:
            self.resolved.setdefault(f"{section}.{key}", str(default))
        return default

    def get_float(self, section, key, default=None, required=False) -> Optional[float]:
        raw = self._raw(section, key, default, required)
        if raw is None:
            return None
        try:
            v = float(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r} is not a number") from exc
        if not math.isfinite(v):
            raise ConfigError(f"[{section}] {key} = {raw!r} must be finite")
        return v

    def get_int(self, section, key, default=None, required=False) -> Optional[int]:
        raw = self._raw(section, key, default, required)
        if raw is None:
            return None
        try:
            return int(str(raw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r} is not an integer") from exc

    def get_str(self, section, key, default=None, required=False) -> Optional[str]:
        raw = self._raw(section, key, default, required)
        return None if raw is None else str(raw)

    def get_points(self, section, key, required=False) -> list[Vec2]:
        """Semicolon-separated list of `x1, x2` pairs."""
        raw = self._raw(section, key, required=required)
        if raw is None:
            return []
        points = []
        for chunk in str(raw).split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = [p for p in chunk.replace(",", " ").split() if p]
            if len(parts) != 2:
                raise ConfigError(f"[{section}] {key}: bad point {chunk!r}")
            try:
                points.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: bad point {chunk!r}") from exc
        if required and not points:
            raise ConfigError(f"[{section}] {key} must list at least one point")
        return points

    def get_floats(self, section, key, required=False) -> list[float]:
        raw = self._raw(section, key, required=required)
        if raw is None:
            return []
        out = []
        for tok in str(raw).replace(";", ",").split(","):
            tok = tok.strip()
            if not tok:
                continue
            try:
                out.append(float(tok))
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: bad number {tok!r}") from exc
        if required and not out:
            raise ConfigError(f"[{section}] {key} must list at least one number")
        return out

    # -- shared object construction -----------------------------------------

    def diffusion_pair(self) -> DiffusionPair:
        kind = self.get_str("diffusion", "kind", required=True)
        if kind == "fixed_point":
            return make_fixed_point(
                self.get_float("diffusion", "b1", required=True),
                self.get_float("diffusion", "b2", required=True),
                self.get_float("diffusion", "c1", required=True),
                self.get_float("diffusion", "c2", required=True),
            )
        if kind == "perturbed_fixed_point":
            return make_perturbed_fixed_point(
                self.get_float("diffusion", "b1", required=True),
                self.get_float("diffusion", "b2", required=True),
                self.get_float("diffusion", "c1", required=True),
                self.get_float("diffusion", "c2", required=True),
                self.get_float("diffusion", "weight", required=True),
            )
        if kind == "polynomial":
            poly = self.polynomial()
            return make_polynomial(poly)
        raise ConfigError(
            f"[diffusion] kind = {kind!r}: expected fixed_point, polynomial, "
            "or perturbed_fixed_point"
        )

    def polynomial(self) -> PolynomialDiffusion:
        return PolynomialDiffusion(
            alpha=(
                self.get_float("diffusion", "alpha1", required=True),
                self.get_float("diffusion", "alpha2", required=True),
            ),
            beta=(
                self.get_float("diffusion", "beta1", required=True),
                self.get_float("diffusion", "beta2", required=True),
            ),
            gamma=(
                self.get_float("diffusion", "gamma1", required=True),
                self.get_float("diffusion", "gamma2", required=True),
            ),
        )

    def mc_params(self) -> McParams:
        return McParams(
            n_samples=self.get_int("mc", "n_samples", default=100_000),
            burn_in=self.get_float("mc", "burn_in"),
            thin=self.get_float("mc", "thin"),
            dt=self.get_float("mc", "dt", default=1e-3),
            seed=self.seed,
        )

    def stream(self, stream_id: int = 0) -> RngStream:
        return RngStream(self.seed, stream_id)


def load_config(
    path: str | Path,
    command: str,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    workers: Optional[int] = None,
) -> ExperimentConfig:
    """Parse a config file and apply CLI overrides."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(p.read_text(), source=str(p))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    sections = {name: dict(parser.items(name)) for name in parser.sections()}
    cfg = ExperimentConfig(command=command, path=p, sections=sections)
    declared = cfg.get_str("run", "command")
    if declared is not None and declared != command:
        raise ConfigError(
            f"config declares command {declared!r} but {command!r} was invoked"
        )
    cfg.seed = seed if seed is not None else (cfg.get_int("run", "seed", default=0) or 0)
    cfg.workers = (
        workers if workers is not None else (cfg.get_int("run", "workers", default=1) or 1)
    )
    if cfg.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {cfg.workers}")
    out = out_dir if out_dir is not None else cfg.get_str("run", "out", default=".")
    cfg.out_dir = Path(out)
    cfg.resolved["run.seed"] = str(cfg.seed)
    cfg.resolved["run.workers"] = str(cfg.workers)
    cfg.resolved["run.out"] = str(cfg.out_dir)
    return cfg
