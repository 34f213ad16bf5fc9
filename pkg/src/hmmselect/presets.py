"""Named benchmark HMMs used throughout the tests and the experiment harness."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .errors import ConfigError
from .hmm import BetaDensity, HmmParams

Q_STAR = np.array(
    [
        [0.80, 0.10, 0.10],
        [0.20, 0.70, 0.10],
        [0.07, 0.13, 0.80],
    ]
)

PI_STAR = np.array([Fraction(47, 120), Fraction(11, 40), Fraction(1, 3)], dtype=float)

# Well separated Beta emissions: the spectral method resolves the order with
# moderate sample sizes.
EASIER_BETAS = ((1.5, 5.0), (7.0, 2.0), (6.0, 6.0))
# Poorly separated Beta emissions: the third singular value sits close to the
# noise level and the spectral method struggles.
HARDER_BETAS = ((2.0, 5.0), (4.0, 2.0), (4.0, 4.0))

PRESETS = {"easier-beta": EASIER_BETAS, "harder-beta": HARDER_BETAS}


def make_preset(name: str) -> HmmParams:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    emissions = tuple(BetaDensity(a, b) for a, b in PRESETS[name])
    return HmmParams(transition=Q_STAR, stationary=PI_STAR, emissions=emissions)
