"""cavmag: simulation and readout toolkit for a cavity-read, swept-bias NV
vector magnetometer.

The package covers the full chain: synthesis of the reflected microwave
envelope under an AC bias sweep (cavity), readout processing from raw traces
to per-orientation peak shifts (pipeline), vector calibration and field
reconstruction (calibration), and noise/sensitivity analysis (sensitivity).
"""

from .constants import PhysicalConstants, DEFAULT_CONSTANTS
from .geometry import NvBasis, canonical_basis, rotate_basis, project, magnitude_from_three
from .traces import ReflectionTrace
from .signals import (
    BiasWaveform,
    NoiseSpectrum,
    NoiseRealization,
    evaluate_bias,
    spin_frequency_traces,
    colored_noise,
    test_field,
)
from .cavity import (
    CavityParams,
    SpinTransitionParams,
    SpinCavityParams,
    SimState,
    SimulationDiverged,
    single_spin_coupling,
    spin_term,
    reflection_coefficient,
    simulate,
    synthesize_reflection,
)

__version__ = "0.1.0"
