"""mflab: a desk-scale laboratory for controlled interacting porous-media
particle systems and their mean-field limits.

The package simulates systems of n interacting stochastic porous-media
equations driven by relaxed (measure-valued) controls, computes the
corresponding McKean-Vlasov limit law by fixed-point iteration, and measures
convergence of empirical laws, value functions and sets of laws in exact
Wasserstein and Hausdorff metrics.  Everything is deterministic given a
master seed: noise comes from counter-based streams, so replays are
bit-identical regardless of scheduling.
"""

from mflab._threads import pin_blas_threads

# Heavy linear algebra must run on a fixed number of BLAS threads, otherwise
# reduction order (and hence the last ulp of results) depends on the machine.
pin_blas_threads()

from mflab.spaces import Constants, Field, PathSample, SpaceConfig
from mflab.coefficients import (
    ActionSpace,
    CoefficientSet,
    EmpiricalFieldMeasure,
    adversarial_coefficients,
    porous_media_coefficients,
)
from mflab.controls import ControlFamily, RelaxedControlPath
from mflab.particles import ControlledPath, Ensemble, SimConfig, simulate_particles
from mflab.mckean import MeasureFlow, picard_mckean
from mflab.measures import LawSet, OuterLaw

__version__ = "0.1.0"

__all__ = [
    "ActionSpace",
    "CoefficientSet",
    "Constants",
    "ControlFamily",
    "ControlledPath",
    "EmpiricalFieldMeasure",
    "Ensemble",
    "Field",
    "LawSet",
    "MeasureFlow",
    "OuterLaw",
    "PathSample",
    "RelaxedControlPath",
    "SimConfig",
    "SpaceConfig",
    "adversarial_coefficients",
    "picard_mckean",
    "porous_media_coefficients",
    "simulate_particles",
    "__version__",
]
