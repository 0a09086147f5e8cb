"""Few-shot 2D regression episodes over six function families.

Coefficients are drawn uniformly from fixed per-family ranges; inputs live
in [0, 5]^2 and targets get additive Gaussian observation noise. Families
Sinusoid/Line/Quadratic/Cubic depend on the first input coordinate only and
their second coordinate is fixed to 1, so every episode presents the same
2-input interface to the model.

Draw order inside an episode (one stream, fully determined by the rng
state): train x, [train y], test x, [test y], train noise, test noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError

FAMILIES = ("Sinusoid", "Line", "Quadratic", "Cubic", "QuadSurface", "Ripple")

# family -> ordered (coefficient, low, high)
COEFF_RANGES: dict[str, tuple[tuple[str, float, float], ...]] = {
    "Sinusoid": (("a_s", 0.1, 5.0), ("b_s", 0.0, 2.0 * math.pi), ("w_s", 0.8, 1.2)),
    "Line": (("a_l", -3.0, 3.0), ("b_l", -3.0, 3.0)),
    "Quadratic": (("a_q", -0.2, 0.2), ("b_q", -2.0, 2.0), ("c_q", -3.0, 3.0)),
    "Cubic": (("a_c", -0.1, 0.1), ("b_c", -0.2, 0.2), ("c_c", -2.0, 2.0), ("d_c", -3.0, 3.0)),
    "QuadSurface": (("a_qs", -1.0, 1.0), ("b_qs", -1.0, 1.0)),
    "Ripple": (("a_r", -0.2, 0.2), ("b_r", -3.0, 3.0)),
}

# families whose target uses the second input coordinate
PLANAR_FAMILIES = ("QuadSurface", "Ripple")

INPUT_LOW, INPUT_HIGH = 0.0, 5.0


@dataclass(frozen=True)
class FamilyParams:
    family: str
    coeffs: dict[str, float]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family '{self.family}'")
        expected = [name for name, _, _ in COEFF_RANGES[self.family]]
        if sorted(self.coeffs) != sorted(expected):
            raise ContractError(
                f"{self.family} expects coefficients {expected}, got {sorted(self.coeffs)}")


@dataclass
class Episode:
    """One few-shot task: a small train set and a query set."""

    train_inputs: np.ndarray   # (n_train, 2)
    train_targets: np.ndarray  # (n_train, 1)
    test_inputs: np.ndarray    # (n_test, 2)
    test_targets: np.ndarray   # (n_test, 1)
    params: FamilyParams


def sample_family_params(rng: np.random.Generator, family: str | None = None) -> FamilyParams:
    """Draw coefficients uniformly from the family's ranges.

    With ``family=None`` the family itself is chosen uniformly first.
    """
    if family is None:
        family = FAMILIES[rng.integers(len(FAMILIES))]
    if family not in FAMILIES:
        raise DomainError(f"unknown family '{family}'")
    coeffs = {name: float(rng.uniform(lo, hi)) for name, lo, hi in COEFF_RANGES[family]}
    return FamilyParams(family, coeffs)


def evaluate_truth(params: FamilyParams, x, y):
    """Noiseless target for the given family at (x, y); vectorized."""
    c = params.coeffs
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fam = params.family
    if fam == "Sinusoid":
        return c["a_s"] * np.sin(c["w_s"] * x + c["b_s"])
    if fam == "Line":
        return c["a_l"] * x + c["b_l"]
    if fam == "Quadratic":
        return c["a_q"] * x * x + c["b_q"] * x + c["c_q"]
    if fam == "Cubic":
        return c["a_c"] * x ** 3 + c["b_c"] * x * x + c["c_c"] * x + c["d_c"]
    if fam == "QuadSurface":
        return c["a_qs"] * x * x + c["b_qs"] * y * y
    return np.sin(-c["a_r"] * (x * x + y * y)) + c["b_r"]


def make_episode(rng: np.random.Generator, params: FamilyParams,
                 n_train: int, n_test: int, noise_std: float) -> Episode:
    """Sample one episode for the given task parameters."""
    if n_train < 1 or n_test < 1:
        raise ContractError("make_episode needs n_train >= 1 and n_test >= 1")
    if noise_std < 0:
        raise ContractError("make_episode needs noise_std >= 0")
    planar = params.family in PLANAR_FAMILIES

    def draw(n):
        x = rng.uniform(INPUT_LOW, INPUT_HIGH, n)
        y = rng.uniform(INPUT_LOW, INPUT_HIGH, n) if planar else np.ones(n)
        return x, y

    xtr, ytr = draw(n_train)
    xts, yts = draw(n_test)
    ztr = evaluate_truth(params, xtr, ytr) + rng.normal(0.0, noise_std, n_train)
    zts = evaluate_truth(params, xts, yts) + rng.normal(0.0, noise_std, n_test)
    return Episode(
        train_inputs=np.column_stack([xtr, ytr]),
        train_targets=ztr.reshape(-1, 1),
        test_inputs=np.column_stack([xts, yts]),
        test_targets=zts.reshape(-1, 1),
        params=params,
    )


def sample_episode(rng: np.random.Generator, n_train: int, n_test: int,
                   noise_std: float, family: str | None = None) -> Episode:
    """Convenience: draw family parameters, then the episode."""
    return make_episode(rng, sample_family_params(rng, family), n_train, n_test, noise_std)


# --- cross-implementation dump format ---------------------------------------

def episode_to_dict(ep: Episode) -> dict:
    def rows(inputs, targets):
        return [[float(a), float(b), float(z)] for (a, b), z in zip(inputs, targets[:, 0])]

    return {
        "family": ep.params.family,
        "params": dict(ep.params.coeffs),
        "train": rows(ep.train_inputs, ep.train_targets),
        "test": rows(ep.test_inputs, ep.test_targets),
    }


def dump_episode(ep: Episode, path) -> None:
    with open(path, "w") as fh:
        json.dump(episode_to_dict(ep), fh, indent=1, sort_keys=True)


def load_episode(path) -> Episode:
    with open(path) as fh:
        raw = json.load(fh)
    params = FamilyParams(raw["family"], {k: float(v) for k, v in raw["params"].items()})
    train = np.asarray(raw["train"], dtype=np.float64)
    test = np.asarray(raw["test"], dtype=np.float64)
    return Episode(
        train_inputs=train[:, :2], train_targets=train[:, 2:3],
        test_inputs=test[:, :2], test_targets=test[:, 2:3],
        params=params,
    )
