"""Physical constants used throughout the toolkit.

All frequencies are angular (rad/s); magnetic fields are in tesla.
"""

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

HBAR = 1.054571817e-34  # J s
MU_0 = 1.25663706212e-6  # T^2 m^3 / J


@dataclass(frozen=True)
class PhysicalConstants:
    """Spin-system constants.

    d_zfs : zero-field splitting of the ground-state transition (rad/s).
    gamma_e : electron gyromagnetic ratio (rad/s per tesla).
    a_hf : parallel hyperfine splitting of the 14N triplet (rad/s).
    """

    d_zfs: float = TWO_PI * 2.87e9
    gamma_e: float = TWO_PI * 28e9
    a_hf: float = TWO_PI * 2.22e6

    @property
    def b_hyperfine(self) -> float:
        """Field shift equivalent to one hyperfine step, a_hf / gamma_e (tesla)."""
        return self.a_hf / self.gamma_e


DEFAULT_CONSTANTS = PhysicalConstants()
