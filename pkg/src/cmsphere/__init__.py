"""Semi-Lagrangian characteristic mapping solver for barotropic vorticity on a rotating sphere."""

from cmsphere.dynamics import SimConfig, Simulation, SolverAbort, run_simulation
from cmsphere.geometry import NormTooSmall
from cmsphere.harmonics import DynamicsGrid, SpectralField, SphericalTransform
from cmsphere.spheremap import MapStack, SphereMap, identity_map, project_fit
from cmsphere.triangulation import PowellSabinSplit, build_icosahedral

__all__ = [
    "DynamicsGrid",
    "MapStack",
    "NormTooSmall",
    "PowellSabinSplit",
    "SimConfig",
    "Simulation",
    "SolverAbort",
    "SpectralField",
    "SphereMap",
    "SphericalTransform",
    "build_icosahedral",
    "identity_map",
    "project_fit",
    "run_simulation",
]
__version__ = "0.1.0"
