"""Design and simulation of subthreshold two-stage op-amps.

Modules: ``devmodel`` (weak-inversion MOSFET), ``netlist`` (SPICE subset),
``opsolver`` (DC), ``acengine`` (AC/Bode), ``noiseengine``, ``tranengine``,
``designer`` (sizing, compensation, scaling) and ``cli``.
"""

from importlib import resources

__version__ = "0.1.0"


def bundled(name):
    """Path-like handle to a bundled circuit (``two_stage_180.sp``) or tech file (``tech90.params``)."""
    kind = "tech" if name.endswith(".params") else "circuits"
    return resources.files(__name__).joinpath(kind, name)
