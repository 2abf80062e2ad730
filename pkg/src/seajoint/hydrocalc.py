"""Engineering calculators for sealed subsea enclosures.

Depth/pressure conversion, submerged weight, effective underwater weight
of ballast, and the external-pressure buckling margin of a thin-walled
cylindrical canister.  All functions are pure; constants live in
:mod:`seajoint.constants` so every module agrees on g and 1 atm.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

from .constants import ATMOSPHERIC_PRESSURE_PA, GRAVITY, SEAWATER_DENSITY


class DomainError(ValueError):
    """Input outside the physical domain of a calculator."""


class ThinWallWarning(UserWarning):
    """Wall too thick for the thin-wall buckling formula to be reliable."""


@dataclass(frozen=True)
class Material:
    """Structural material properties.

    elastic_modulus: Pa
    poisson_ratio: dimensionless
    density: kg/m^3
    yield_strength: Pa
    """

    elastic_modulus: float
    poisson_ratio: float
    density: float
    yield_strength: float


ALUMINUM_6061_T6 = Material(
    elastic_modulus=68.9e9,
    poisson_ratio=0.33,
    density=2700.0,
    yield_strength=276e6,
)


@dataclass(frozen=True)
class Enclosure:
    """Cylindrical pressure housing, dimensions in meters."""

    outer_diameter: float
    wall_thickness: float
    length: float
    material: Material

    def __post_init__(self) -> None:
        if min(self.outer_diameter, self.wall_thickness, self.length) <= 0:
            raise DomainError("enclosure dimensions must be positive")
        if self.wall_thickness >= self.outer_diameter / 2:
            raise DomainError("wall thickness leaves no bore")

    @property
    def thin_wall(self) -> bool:
        """True when t < D/10, the applicability bound of the formula used."""
        return self.wall_thickness < self.outer_diameter / 10.0


@dataclass(frozen=True)
class BodyMass:
    """Dry mass and displacement of a submerged body."""

    dry_mass: float
    displaced_volume: float
    fluid_density: float = SEAWATER_DENSITY

    def __post_init__(self) -> None:
        if self.dry_mass <= 0 or self.displaced_volume < 0 or self.fluid_density <= 0:
            raise DomainError("mass and densities must be positive, volume nonnegative")


class Weight(NamedTuple):
    kgf: float
    newtons: float


class BucklingResult(NamedTuple):
    critical_pressure: float
    margin: float


def pressure_at_depth(
    depth: float,
    fluid_density: float = SEAWATER_DENSITY,
    p_atm: float = ATMOSPHERIC_PRESSURE_PA,
) -> float:
    """Absolute pressure (Pa) at *depth* meters, including one atmosphere.

    Exact inverse of :func:`seajoint.telemetry.depth_from_pressure`.
    """
    if depth < 0:
        raise DomainError(f"depth must be nonnegative, got {depth}")
    if fluid_density <= 0:
        raise DomainError(f"fluid density must be positive, got {fluid_density}")
    return p_atm + fluid_density * GRAVITY * depth


def submerged_weight(body: BodyMass) -> Weight:
    """Effective weight of a submerged body: dry mass minus displaced fluid.

    Returns kgf and N.  Negative values mean the body floats.
    """
    kgf = body.dry_mass - body.fluid_density * body.displaced_volume
    return Weight(kgf=kgf, newtons=kgf * GRAVITY)


def effective_underwater_weight(
    mass: float,
    material_density: float,
    fluid_density: float = SEAWATER_DENSITY,
) -> Weight:
    """Underwater weight of a solid ballast mass of uniform density.

    W = m * (1 - rho_fluid / rho_material), in kgf.  Raises
    :class:`DomainError` when the material would float.
    """
    if mass <= 0 or material_density <= 0 or fluid_density < 0:
        raise DomainError("mass and material density must be positive")
    if material_density <= fluid_density:
        raise DomainError(
            f"material (rho={material_density}) floats in fluid (rho={fluid_density})"
        )
    kgf = mass * (1.0 - fluid_density / material_density)
    return Weight(kgf=kgf, newtons=kgf * GRAVITY)


def critical_external_pressure(enclosure: Enclosure) -> float:
    """Classical short-cylinder collapse pressure (Pa), fixed ends.

    Windenburg-Trilling form for a thin cylinder under uniform external
    pressure:

        P_cr = 2.42 E (t/D)^(5/2)
               / [ (1 - nu^2)^(3/4) * (L/D - 0.45 (t/D)^(1/2)) ]

    with D the outer diameter and L the unsupported length.  Radial
    pressure dominant; no axial interaction term is applied.  Emits
    :class:`ThinWallWarning` when t >= D/10.
    """
    if not enclosure.thin_wall:
        warnings.warn(
            f"t/D = {enclosure.wall_thickness / enclosure.outer_diameter:.3f} "
            "exceeds thin-wall bound 0.1; collapse pressure is extrapolated",
            ThinWallWarning,
            stacklevel=2,
        )
    e = enclosure.material.elastic_modulus
    nu = enclosure.material.poisson_ratio
    t_over_d = enclosure.wall_thickness / enclosure.outer_diameter
    l_over_d = enclosure.length / enclosure.outer_diameter
    denom = (1.0 - nu * nu) ** 0.75 * (l_over_d - 0.45 * math.sqrt(t_over_d))
    if denom <= 0:
        raise DomainError("cylinder too short for the short-cylinder formula")
    return 2.42 * e * t_over_d**2.5 / denom


def buckling_margin(
    enclosure: Enclosure,
    depth: float,
    fluid_density: float = SEAWATER_DENSITY,
) -> BucklingResult:
    """Collapse margin at *depth*: P_cr over net (gauge) hydrostatic pressure.

    The canister interior stays at 1 atm, so the crushing load is the
    gauge pressure rho*g*depth.  At the surface the margin is infinite.
    """
    p_cr = critical_external_pressure(enclosure)
    p_hydro = pressure_at_depth(depth, fluid_density) - ATMOSPHERIC_PRESSURE_PA
    if p_hydro <= 0:
        return BucklingResult(critical_pressure=p_cr, margin=math.inf)
    return BucklingResult(critical_pressure=p_cr, margin=p_cr / p_hydro)
