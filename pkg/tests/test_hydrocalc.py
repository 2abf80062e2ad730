import math

import pytest

from seajoint.constants import ATMOSPHERIC_PRESSURE_PA, PASCALS_PER_BAR
from seajoint.hydrocalc import (
    ALUMINUM_6061_T6,
    BodyMass,
    DomainError,
    Enclosure,
    Material,
    ThinWallWarning,
    buckling_margin,
    critical_external_pressure,
    effective_underwater_weight,
    pressure_at_depth,
    submerged_weight,
)
from seajoint.telemetry import depth_from_pressure

from .oracles import windenburg_trilling_pressure

CANISTER = Enclosure(
    outer_diameter=0.066,
    wall_thickness=0.003,
    length=0.082,
    material=ALUMINUM_6061_T6,
)


class TestPressureDepth:
    def test_forty_meters_is_about_five_bar(self):
        p = pressure_at_depth(40.0)
        assert p / PASCALS_PER_BAR == pytest.approx(5.034, abs=0.005)

    def test_surface(self):
        assert pressure_at_depth(0.0) == ATMOSPHERIC_PRESSURE_PA

    def test_negative_depth_rejected(self):
        with pytest.raises(DomainError):
            pressure_at_depth(-1.0)

    def test_exact_inverse_pair(self):
        for depth in [0.0, 0.5, 10.0, 40.0, 200.0, 3000.0]:
            back = depth_from_pressure(pressure_at_depth(depth))
            assert back.meters == pytest.approx(depth, abs=1e-9)

    def test_density_scaling(self):
        # doubling rho doubles the gauge part
        gauge = pressure_at_depth(25.0, 1000.0) - ATMOSPHERIC_PRESSURE_PA
        gauge2 = pressure_at_depth(25.0, 2000.0) - ATMOSPHERIC_PRESSURE_PA
        assert gauge2 == pytest.approx(2 * gauge)


class TestSubmergedWeight:
    def test_canister_reference_figures(self):
        # dry 449 g with 250 g in water: displaced volume from algebra
        volume = (0.449 - 0.250) / 1025.0
        assert volume == pytest.approx(194e-6, rel=0.01)
        w = submerged_weight(BodyMass(dry_mass=0.449, displaced_volume=volume))
        assert w.kgf == pytest.approx(0.250, abs=1e-12)

    def test_no_displacement(self):
        w = submerged_weight(BodyMass(dry_mass=2.0, displaced_volume=0.0))
        assert w.kgf == 2.0

    def test_neutral_buoyancy(self):
        mass = 3.0
        w = submerged_weight(BodyMass(dry_mass=mass, displaced_volume=mass / 1025.0))
        assert w.kgf == pytest.approx(0.0, abs=1e-12)

    def test_newtons_consistent(self):
        w = submerged_weight(BodyMass(dry_mass=1.0, displaced_volume=0.0))
        assert w.newtons == pytest.approx(9.80665)


class TestBallastWeight:
    def test_one_kg_lead(self):
        w = effective_underwater_weight(1.0, 11_340.0)
        assert w.kgf == pytest.approx(0.91, abs=0.005)
        assert w.newtons == pytest.approx(8.9, abs=0.1)

    def test_eight_kg_lead(self):
        w = effective_underwater_weight(8.0, 11_340.0)
        assert w.kgf == pytest.approx(7.28, abs=0.005)
        assert w.newtons == pytest.approx(71.4, abs=0.1)

    def test_vacuum_limit(self):
        w = effective_underwater_weight(5.0, 11_340.0, fluid_density=0.0)
        assert w.kgf == 5.0

    def test_floating_material_rejected(self):
        with pytest.raises(DomainError):
            effective_underwater_weight(1.0, 900.0, fluid_density=1025.0)


class TestBuckling:
    def test_matches_independent_transcription(self):
        ours = critical_external_pressure(CANISTER)
        oracle = windenburg_trilling_pressure(
            ALUMINUM_6061_T6.elastic_modulus,
            ALUMINUM_6061_T6.poisson_ratio,
            0.003,
            0.066,
            0.082,
        )
        assert ours == pytest.approx(oracle, rel=1e-12)

    def test_margin_above_one_at_rating_depth(self):
        result = buckling_margin(CANISTER, 200.0)
        assert result.margin > 1.0

    def test_margin_infinite_at_surface(self):
        result = buckling_margin(CANISTER, 0.0)
        assert math.isinf(result.margin)

    def test_thicker_wall_raises_critical_pressure(self):
        thicker = Enclosure(0.066, 0.006, 0.082, ALUMINUM_6061_T6)
        assert critical_external_pressure(thicker) > critical_external_pressure(CANISTER)

    @pytest.mark.filterwarnings("ignore::seajoint.hydrocalc.ThinWallWarning")
    def test_monotonicity_grid(self):
        base = dict(
            outer_diameter=0.066,
            wall_thickness=0.003,
            length=0.082,
        )
        p0 = critical_external_pressure(Enclosure(material=ALUMINUM_6061_T6, **base))
        for scale in (1.1, 1.3, 1.6, 2.0, 2.5):
            # thickness up -> stronger
            e = Enclosure(
                base["outer_diameter"],
                base["wall_thickness"] * scale,
                base["length"],
                ALUMINUM_6061_T6,
            )
            assert critical_external_pressure(e) > p0
            # modulus up -> stronger
            m = Material(
                ALUMINUM_6061_T6.elastic_modulus * scale,
                ALUMINUM_6061_T6.poisson_ratio,
                ALUMINUM_6061_T6.density,
                ALUMINUM_6061_T6.yield_strength,
            )
            assert (
                critical_external_pressure(Enclosure(material=m, **base)) > p0
            )
            # unsupported length up -> weaker
            e = Enclosure(
                base["outer_diameter"],
                base["wall_thickness"],
                base["length"] * scale,
                ALUMINUM_6061_T6,
            )
            assert critical_external_pressure(e) < p0
            # diameter up -> weaker
            e = Enclosure(
                base["outer_diameter"] * scale,
                base["wall_thickness"],
                base["length"],
                ALUMINUM_6061_T6,
            )
            assert critical_external_pressure(e) < p0

    def test_thick_wall_warns(self):
        thick = Enclosure(0.066, 0.008, 0.082, ALUMINUM_6061_T6)
        assert not thick.thin_wall
        with pytest.warns(ThinWallWarning):
            critical_external_pressure(thick)

    def test_bad_geometry(self):
        with pytest.raises(DomainError):
            Enclosure(0.066, 0.04, 0.082, ALUMINUM_6061_T6)
        with pytest.raises(DomainError):
            Enclosure(0.066, -0.001, 0.082, ALUMINUM_6061_T6)
