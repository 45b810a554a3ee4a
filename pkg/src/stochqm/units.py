"""Physical constants in cgs-Gaussian units and the derived quantities built on them.

Everything in this package is expressed in cgs-Gaussian units: statcoulomb,
gram, centimetre, second, erg and kelvin.  The only unit conversion offered is
erg <-> eV.
"""

from dataclasses import dataclass
import math

from .errors import InvalidInputError

__all__ = [
    "ERG_PER_EV",
    "PhysicalConstants",
    "DerivedConstants",
    "PRESETS",
    "preset",
    "fine_structure",
    "characteristic_time",
    "planck_consistency",
    "diffusion_for_hbar",
    "electrostatic_energy",
    "erg_to_ev",
    "ev_to_erg",
    "derived",
]

ERG_PER_EV = 1.602176634e-12


@dataclass(frozen=True)
class PhysicalConstants:
    """Charge, rest mass, light speed, reduced Planck and Boltzmann constants."""

    q: float  # statC
    m0: float  # g
    c: float  # cm/s
    hbar: float  # erg s
    k: float  # erg/K

    def __post_init__(self):
        for name in ("q", "m0", "c", "hbar", "k"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")
        for name in ("m0", "c", "hbar", "k"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be strictly positive")

    def replace(self, **changes):
        values = {f: getattr(self, f) for f in ("q", "m0", "c", "hbar", "k")}
        values.update(changes)
        return PhysicalConstants(**values)


@dataclass(frozen=True)
class DerivedConstants:
    alpha: float
    tau: float  # s


_E_SI = 1.602176634e-19  # C, exact
_C_CGS = 2.99792458e10

# CODATA 2018.  The Gaussian charge follows from e_SI * c / 10.
PRESETS = {
    "electron": PhysicalConstants(
        q=_E_SI * _C_CGS / 10.0,
        m0=9.1093837015e-28,
        c=_C_CGS,
        hbar=1.054571817e-27,
        k=1.380649e-16,
    ),
}


def preset(name="electron"):
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidInputError(f"unknown constants preset {name!r}; known: {sorted(PRESETS)}") from None


def _finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise InvalidInputError("non-finite input")


def fine_structure(consts):
    """Return q^2 / (hbar c)."""
    _finite(consts.q, consts.hbar, consts.c)
    return consts.q**2 / (consts.hbar * consts.c)


def characteristic_time(consts):
    """Return the radiation-reaction time 2 q^2 / (3 m0 c^3) in seconds."""
    _finite(consts.q, consts.m0, consts.c)
    if consts.m0 <= 0:
        raise InvalidInputError("m0 must be positive")
    return 2.0 * consts.q**2 / (3.0 * consts.m0 * consts.c**3)


def planck_consistency(consts, nu, T):
    """Return the hbar for which hbar^2/2m = 2 tau nu k T holds.

    The mass cancels, leaving hbar = sqrt(8 q^2 nu k T / (3 c^3)).
    """
    _finite(nu, T)
    if nu < 0 or T < 0:
        raise InvalidInputError("nu and T must be non-negative")
    return math.sqrt(8.0 * consts.q**2 * nu * consts.k * T / (3.0 * consts.c**3))


def diffusion_for_hbar(consts, T, hbar=None):
    """Inverse of :func:`planck_consistency`: the nu that yields ``hbar`` at temperature T."""
    _finite(T)
    if T <= 0:
        raise InvalidInputError("T must be positive")
    hbar = consts.hbar if hbar is None else hbar
    return 3.0 * consts.c**3 * hbar**2 / (8.0 * consts.q**2 * consts.k * T)


def erg_to_ev(energy):
    return energy / ERG_PER_EV


def ev_to_erg(energy):
    return energy * ERG_PER_EV


def electrostatic_energy(q, r):
    """Coulomb energy q^2/r of two equal charges a distance r (cm) apart, in eV."""
    _finite(q, r)
    if r <= 0:
        raise InvalidInputError("separation must be positive")
    return erg_to_ev(q * q / r)


def derived(consts):
    return DerivedConstants(alpha=fine_structure(consts), tau=characteristic_time(consts))
