"""Affine mapping between low- and high-fidelity task parameters.

Each numeric parameter maps independently as p_hf = a * p_lf + b. Counts are
rounded half-to-even after mapping; arena dimensions stay continuous in the
high-fidelity environment and are rounded only when mapping back to the grid.
The noisy variant perturbs the exact image with zero-mean Gaussian noise and
rejects infeasible results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonInvertible, RejectionBudgetExhausted, ValidationError
from .params import (
    COUNT_INDICES,
    HF,
    NUMERIC_FIELDS,
    ParamRanges,
    TaskParams,
    feasible,
)

_N = len(NUMERIC_FIELDS)


def _default_scale() -> np.ndarray:
    # 10-cell grid dimension -> 4 m arena dimension; counts map one-to-one.
    a = np.ones(_N, dtype=np.float64)
    a[0] = a[1] = 0.4
    return a


def _round_counts(vec: np.ndarray) -> np.ndarray:
    out = vec.copy()
    idx = list(COUNT_INDICES)
    out[idx] = np.rint(out[idx])
    return out


@dataclass(frozen=True)
class AffineMap:
    """Per-parameter affine transform from low- to high-fidelity values."""

    a: np.ndarray = field(default_factory=_default_scale)
    b: np.ndarray = field(default_factory=lambda: np.zeros(_N, dtype=np.float64))

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if a.shape != (_N,) or b.shape != (_N,):
            raise ValidationError(f"affine map needs {_N} coefficients per vector")
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise ValidationError("affine map coefficients must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def forward_vector(self, vec: np.ndarray) -> np.ndarray:
        return self.a * vec + self.b

    def forward(self, p: TaskParams) -> TaskParams:
        """Map a low-fidelity task to its exact high-fidelity image."""
        out = _round_counts(self.forward_vector(p.numeric_vector()))
        return TaskParams.from_numeric(out, p.goal)

    def inverse(self, p: TaskParams) -> TaskParams:
        """Map a high-fidelity task back to the grid.

        All parameters, dimensions included, are rounded half-to-even since
        the grid is integer-celled.
        """
        if np.any(self.a == 0.0):
            zero = [NUMERIC_FIELDS[i] for i in np.flatnonzero(self.a == 0.0)]
            raise NonInvertible(f"zero scale for {zero}; cannot invert")
        vec = (p.numeric_vector() - self.b) / self.a
        return TaskParams.from_numeric(np.rint(vec), p.goal)

    def noise_sigmas(self, lf_ranges: ParamRanges) -> np.ndarray:
        """Per-parameter noise scale: one sixth of the mapped range width."""
        lo = np.array([b[0] for _, b in lf_ranges.iter_bounds()], dtype=np.float64)
        hi = np.array([b[1] for _, b in lf_ranges.iter_bounds()], dtype=np.float64)
        return np.abs(self.a) * (hi - lo) / 6.0

    def forward_noisy(
        self,
        p: TaskParams,
        rng: np.random.Generator,
        noise: "NoiseModel",
    ) -> TaskParams:
        """Map forward, then perturb with independent Gaussian noise.

        The goal is never perturbed. Draws that produce a malformed or
        infeasible high-fidelity task are rejected and retried.
        """
        exact = self.forward_vector(p.numeric_vector())
        for _ in range(noise.max_rejects):
            noisy = _round_counts(exact + rng.normal(0.0, 1.0, size=_N) * noise.sigma)
            try:
                candidate = TaskParams.from_numeric(noisy, p.goal)
            except ValidationError:
                continue
            if feasible(candidate, HF):
                return candidate
        raise RejectionBudgetExhausted(
            f"no feasible noisy image of {p} in {noise.max_rejects} draws"
        )

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineMap":
        return cls(a=np.asarray(d["a"], dtype=np.float64), b=np.asarray(d["b"], dtype=np.float64))


@dataclass(frozen=True)
class NoiseModel:
    """Diagonal Gaussian perturbation of mapped parameters.

    sigma spans the numeric parameters in field order; the goal never gets
    noise. max_rejects bounds the feasibility resampling loop.
    """

    sigma: np.ndarray
    max_rejects: int = 1000

    def __post_init__(self) -> None:
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != (_N,):
            raise ValidationError(f"noise model needs {_N} sigmas, got {sigma.shape}")
        if not np.isfinite(sigma).all() or np.any(sigma < 0):
            raise ValidationError("sigmas must be finite and non-negative")
        if self.max_rejects < 1:
            raise ValidationError("max_rejects must be >= 1")
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def for_map(cls, amap: AffineMap, lf_ranges: ParamRanges,
                max_rejects: int = 1000) -> "NoiseModel":
        """Sigmas set to one sixth of each mapped parameter range."""
        return cls(sigma=amap.noise_sigmas(lf_ranges), max_rejects=max_rejects)

    def to_dict(self) -> dict:
        return {"sigma": self.sigma.tolist(), "max_rejects": self.max_rejects}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(sigma=np.asarray(d["sigma"], dtype=np.float64),
                   max_rejects=int(d.get("max_rejects", 1000)))
