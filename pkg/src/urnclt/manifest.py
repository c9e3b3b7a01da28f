"""Experiment manifests: a YAML document with every field defaulted and echoed.

Example::

    model: {n: 4703, N: 2000, C: 3}    # or {N: 2000, C: 3, lambda: 5.0}
    profile: [2, 1]
    k_grid: {fraction: 0.25}            # or {max_total: 12} or {box: [4, 4]}
    conditions: {c1: -2.0, c2: 2.0}
    sampler: {method: sequential-exact, seed: 0, samples: 1000}
    covariance_source: exact
    boundedness_bound: 10.0
    outputs: out

A ladder replaces ``model``::

    ladder:
      C: 3
      points:
        - {N: 1000, lambda_rule: "power:0.125"}
        - {N: 10000, lambda_rule: "power:0.125"}
        - {N: 100000, lambda_rule: "fixed:4.0"}
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from .occupancy import AllocationParams
from .tilted import balls_for_lambda

COVARIANCE_SOURCES = ("exact", "asymptotic", "closed-form-12", "closed-form-123", "diagonal")

DEFAULTS = {
    "model": None,
    "ladder": None,
    "profile": None,
    "k_grid": {"fraction": 0.25, "max_total": None, "box": None},
    "conditions": {"c1": -2.0, "c2": 2.0},
    "sampler": {"method": "sequential-exact", "seed": 0, "samples": 1000},
    "covariance_source": "exact",
    "boundedness_bound": 10.0,
    "outputs": "out",
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if key not in DEFAULTS:
            raise ValueError(f"unknown manifest field {key!r}")
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = {**out[key], **value}
        else:
            out[key] = value
    return out


def parse_lambda_rule(rule: str, N: int) -> tuple[float, float | None]:
    """``"fixed:x"`` -> ``(x, None)``; ``"power:a"`` -> ``(N**a, a)``."""
    kind, _, value = str(rule).partition(":")
    try:
        x = float(value)
    except ValueError:
        raise ValueError(f"bad lambda rule {rule!r}") from None
    if kind == "fixed":
        return x, None
    if kind == "power":
        return N**x, x
    raise ValueError(f"lambda rule must be fixed:x or power:a, got {rule!r}")


@dataclass(frozen=True)
class LadderPoint:
    N: int
    rule: str
    lam_target: float
    alpha: float | None
    params: AllocationParams


@dataclass
class ExperimentManifest:
    data: dict

    @classmethod
    def load(cls, path: str | Path | None, overrides: dict | None = None) -> "ExperimentManifest":
        data = copy.deepcopy(DEFAULTS)
        if path is not None:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
            if not isinstance(loaded, dict):
                raise ValueError(f"manifest {path} must be a mapping")
            data = _merge(data, loaded)
        if overrides:
            data = _merge(data, overrides)
        if data["covariance_source"] not in COVARIANCE_SOURCES:
            raise ValueError(
                f"covariance_source must be one of {COVARIANCE_SOURCES}, got {data['covariance_source']!r}"
            )
        return cls(data)

    @property
    def params(self) -> AllocationParams:
        model = self.data.get("model")
        if not model:
            raise ValueError("manifest has no model; give --n/--N/--C or a model block")
        N, C = int(model["N"]), int(model["C"])
        if model.get("n") is not None:
            return AllocationParams(int(model["n"]), N, C)
        if model.get("lambda") is not None:
            return AllocationParams(balls_for_lambda(N, C, float(model["lambda"])), N, C)
        raise ValueError("model needs either n or lambda")

    @property
    def profile(self) -> tuple[int, ...]:
        m = self.data.get("profile")
        if not m:
            raise ValueError("manifest has no profile; give --m or a profile list")
        return tuple(int(v) for v in m)

    def ladder_points(self) -> list[LadderPoint]:
        ladder = self.data.get("ladder")
        if not ladder:
            raise ValueError("manifest has no ladder block")
        C = int(ladder["C"])
        points = []
        for entry in ladder["points"]:
            N = int(entry["N"])
            rule = str(entry.get("lambda_rule", "fixed:4.0"))
            lam, alpha = parse_lambda_rule(rule, N)
            points.append(LadderPoint(N, rule, lam, alpha, AllocationParams(balls_for_lambda(N, C, lam), N, C)))
        return points

    def resolved(self) -> dict:
        """The configuration echoed into outputs (execution-only settings excluded)."""
        out = copy.deepcopy(self.data)
        if out.get("model"):
            p = self.params
            out["model"] = {**out["model"], "n": p.n, "N": p.N, "C": p.C}
        if out.get("ladder"):
            out["ladder"] = {
                "C": int(out["ladder"]["C"]),
                "points": [
                    {"N": pt.N, "lambda_rule": pt.rule, "alpha": pt.alpha, "n": pt.params.n}
                    for pt in self.ladder_points()
                ],
            }
        return out
