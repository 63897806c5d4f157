import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drifteig.dynamics import (BlowUpError, HomoclinicNotFound, IntegrationError,
                               NoRecurrenceError, UnsupportedTopologyError, assemble_components,
                               classify_jacobian, detect_homoclinic, find_fixed_points,
                               find_limit_cycle, hausdorff, integrate, point_in_polygon)
from drifteig.expr import parse
from drifteig.fields import (HAMILTONIAN, PlanarField, corollary_field, prop12_field,
                             rotation_field)
from drifteig.geometry import Disk, Rect, Sublevel

from oracles import period_reference

SUB = Sublevel(parse(HAMILTONIAN), 1.0, (-1.9, -1.7), (1.9, 1.7))
DISK = Disk((0, 0), 1)
H = parse(HAMILTONIAN)
VDP = PlanarField.from_str("-x2", "x1 - x2*(x1^2 - 1)")


def max_dist_to_polyline(pts, poly):
    """Largest distance from ``pts`` to the closed polyline ``poly``."""
    a, b = poly[:-1], poly[1:]
    ab = b - a
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("ijk,jk->ij", ap, ab) / np.einsum("jk,jk->j", ab, ab), 0, 1)
    d = np.linalg.norm(ap - t[..., None] * ab[None], axis=2)
    return float(d.min(axis=1).max())


def Hv(pts):
    pts = np.atleast_2d(pts)
    return H.array_fn(pts[:, 0], pts[:, 1])


# --------------------------------------------------------------------------- #
# integration
# --------------------------------------------------------------------------- #

def test_rigid_rotation():
    tr = integrate(rotation_field(), (1, 0), 2 * math.pi)
    assert np.hypot(tr.final[0] - 1, tr.final[1]) <= 1e-6


def test_linear_decay():
    tr = integrate(PlanarField.from_str("-x1", "-x2"), (1, 1), 5.0)
    assert np.max(np.abs(tr.final - math.exp(-5))) <= 1e-7


def test_backward_time_and_dense_output():
    tr = integrate(PlanarField.from_str("-x1", "-x2"), (1, 1), -2.0)
    assert tr.final == pytest.approx([math.exp(2)] * 2, rel=1e-7)
    mid = tr(-1.0)
    assert mid == pytest.approx([math.e] * 2, rel=1e-5)


def test_energy_decreases_to_level():
    b = corollary_field(0.5)
    x0 = (0.0, math.sqrt(1.8))  # H = 0.9
    tr = integrate(b, x0, 40.0)
    h = Hv(tr.states)
    # monotone up to the local error allowance of the integrator
    assert np.all(np.diff(h) <= 1e-8)
    assert h[len(h) // 2] < 0.6
    assert h[-1] == pytest.approx(0.5, abs=1e-6)


def test_blow_up_and_tolerance_range():
    with pytest.raises(BlowUpError):
        integrate(PlanarField.from_str("x1^2", "0"), (1, 0), 2.0, bound=1e6)
    with pytest.raises(ValueError):
        integrate(rotation_field(), (1, 0), 1.0, tol=1e-2)


def test_step_underflow_near_singularity():
    with pytest.raises(IntegrationError):
        integrate(PlanarField.from_str("-1/x1", "0"), (1, 0), 1.0)


# --------------------------------------------------------------------------- #
# fixed points
# --------------------------------------------------------------------------- #

def test_corollary_fixed_points():
    fps = find_fixed_points(corollary_field(0.1), SUB)
    locs = sorted((round(p.location[0], 8), round(p.location[1], 8), p.kind) for p in fps)
    # for 0 < alpha < 1 the wells are repelled towards the cycle H = alpha
    assert locs == [(-1.0, 0.0, "UnstableSpiral"), (0.0, 0.0, "Saddle"), (1.0, 0.0, "UnstableSpiral")]


def test_saddle_jacobian():
    a = 0.1
    jac = corollary_field(a).jacobian(0.0, 0.0)
    assert jac == pytest.approx(np.array([[-a, -1], [-1, a]]), abs=1e-14)
    kind, ev = classify_jacobian(jac)
    assert kind == "Saddle"
    assert sorted(z.real for z in ev) == pytest.approx([-math.sqrt(1 + a * a), math.sqrt(1 + a * a)])


def test_rotation_center():
    fps = find_fixed_points(rotation_field(), DISK)
    assert len(fps) == 1 and fps[0].kind == "Center" and fps[0].probe == "neutral"
    assert np.allclose(fps[0].location, 0, atol=1e-12)


def test_nonhyperbolic_wells_probe_stable():
    fps = find_fixed_points(corollary_field(-0.25), SUB)
    wells = [p for p in fps if abs(abs(p.location[0]) - 1) < 1e-6]
    assert len(wells) == 2
    assert all(p.kind == "Degenerate" and p.probe == "stable" and p.is_stable for p in wells)


@pytest.mark.parametrize("jac,kind", [
    ([[-1, 0], [0, -2]], "StableNode"), ([[1, 0], [0, 3]], "UnstableNode"),
    ([[-1, -2], [2, -1]], "StableSpiral"), ([[1, -2], [2, 1]], "UnstableSpiral"),
    ([[0, -1], [1, 0]], "Center"), ([[1, 0], [0, -1]], "Saddle"), ([[0, 1], [0, 0]], "Degenerate"),
    ([[0, 0], [0, -1]], "Degenerate"),
])
def test_classification_table(jac, kind):
    assert classify_jacobian(jac)[0] == kind


FIELDS = [corollary_field(0.3), corollary_field(-0.1), VDP, rotation_field(),
          PlanarField.from_str("x2 - x1^3", "-x1 - 0.2*x2 + x1*x2")]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(range(len(FIELDS))), st.floats(0, 2 * math.pi),
       st.tuples(st.floats(-1, 1), st.floats(-1, 1)))
def test_classification_rotation_invariant(i, theta, p):
    b = FIELDS[i]
    rb = b.rotated(theta)
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    q = R @ np.array(p)
    k1, e1 = classify_jacobian(b.jacobian(*p))
    k2, e2 = classify_jacobian(rb.jacobian(*q))
    assert k1 == k2
    assert np.allclose(sorted(np.abs(e1)), sorted(np.abs(e2)), rtol=1e-9, atol=1e-12)


# --------------------------------------------------------------------------- #
# limit cycles
# --------------------------------------------------------------------------- #

@pytest.fixture(scope="module")
def cycle_half():
    return find_limit_cycle(corollary_field(0.5), (1.2, 0.0), tol=1e-8, domain=SUB)


def test_cycle_on_level_set(cycle_half):
    orb = cycle_half
    assert orb.stability == "Stable"
    assert np.max(np.abs(Hv(orb.samples) - 0.5)) <= 1e-6
    assert orb.residual <= 1e-8
    assert np.max(np.abs(Hv(orb.samples) - 0.5)) <= 10 * 1e-8
    assert orb.closure_gap <= 1e-8


def test_two_cycles_around_wells():
    b = corollary_field(-0.1)
    orbs = [find_limit_cycle(b, (s, 0.0), tol=1e-8, domain=SUB) for s in (1.05, -1.05)]
    for orb, side in zip(orbs, (1, -1)):
        assert orb.stability == "Stable"
        assert orb.encloses((side, 0.0))
        assert np.max(np.abs(Hv(orb.samples) + 0.1)) <= 1e-6


def test_van_der_pol_period():
    orb = find_limit_cycle(VDP, (0.1, 0.0), tol=1e-9)
    ref = period_reference(lambda y: [-y[1], y[0] - y[1] * (y[0] ** 2 - 1)], [2.0, 0.0])
    assert orb.stability == "Stable"
    assert orb.period == pytest.approx(ref, rel=0.01)


def test_unstable_cycle_by_time_reversal():
    stable = find_limit_cycle(VDP, (0.1, 0.0), tol=1e-9)
    start = tuple(stable.samples[0])
    orb = find_limit_cycle(VDP.scaled(-1.0), start, tol=1e-8, transient=0.0, t_max=60.0)
    assert orb.stability == "Unstable"
    assert orb.period == pytest.approx(stable.period, rel=1e-6)


def test_no_recurrence_when_attracted_to_point():
    with pytest.raises(NoRecurrenceError):
        find_limit_cycle(PlanarField.from_str("-x1 - x2", "x1 - x2"), (0.5, 0.0), domain=DISK)


@pytest.mark.parametrize("sigma", [0.5, 3.0])
def test_drift_rescaling_reparametrizes_cycles(cycle_half, sigma):
    orb = find_limit_cycle(corollary_field(0.5).scaled(sigma), (1.2, 0.0), tol=1e-8, domain=SUB)
    # same curve: both sit on H = 0.5, and the chords of one pass through the other's samples
    assert np.max(np.abs(Hv(orb.samples) - 0.5)) <= 1e-6
    assert max_dist_to_polyline(orb.samples, cycle_half.samples) <= 1e-5
    assert orb.period == pytest.approx(cycle_half.period / sigma, rel=1e-7)


def test_lyapunov_property_of_probes():
    b = corollary_field(0.5)
    fps = [(1, 0), (-1, 0), (0, 0)]
    rng = np.random.default_rng(4)
    seeds = rng.uniform([-1.6, -1.2], [1.6, 1.2], size=(12, 2))
    seeds = [s for s in seeds if Hv(s)[0] < 0.95 and min(np.hypot(*(s - f)) for f in fps) > 0.1]
    for s in seeds:
        end = integrate(b, s, 150.0, tol=1e-9).final
        near_fp = min(math.hypot(end[0] - f[0], end[1] - f[1]) for f in fps) < 1e-3
        assert near_fp or abs(Hv(end)[0] - 0.5) < 1e-3


# --------------------------------------------------------------------------- #
# homoclinic structures
# --------------------------------------------------------------------------- #

def _saddle(b, d):
    return next(p for p in find_fixed_points(b, d) if p.kind == "Saddle")


def test_figure_eight_at_alpha_zero():
    b = corollary_field(0.0)
    hs = detect_homoclinic(b, _saddle(b, SUB), domain=SUB)
    assert hs.is_union and len(hs.loops) == 2
    assert hs.stable
    for lp in hs.loops:
        assert min(np.hypot(lp[:, 0], lp[:, 1])) <= 1e-3
        assert np.max(np.abs(Hv(lp))) <= 1e-4


def test_no_loop_when_branches_reach_the_cycle():
    b = corollary_field(0.5)
    with pytest.raises(HomoclinicNotFound):
        detect_homoclinic(b, _saddle(b, SUB), domain=SUB)


def test_linear_saddle_has_no_loop():
    b = PlanarField.from_str("x1", "-x2")
    d = Disk((0, 0), 2.0)
    with pytest.raises(HomoclinicNotFound):
        detect_homoclinic(b, _saddle(b, d), domain=d)


def test_heteroclinic_connection_unsupported():
    b = PlanarField.from_str("x2", "-sin(x1)")
    d = Rect((-4.0, -3.0), (4.0, 3.0))
    fps = find_fixed_points(b, d)
    saddles = [p for p in fps if p.kind == "Saddle"]
    assert len(saddles) == 2
    with pytest.raises(UnsupportedTopologyError):
        detect_homoclinic(b, saddles[0], domain=d, others=[p.location for p in saddles])


# --------------------------------------------------------------------------- #
# assembly
# --------------------------------------------------------------------------- #

def kinds(an):
    return sorted((k.kind, k.stability) for k in an.components)


def test_assemble_single_cycle():
    an = assemble_components(corollary_field(0.5), SUB)
    assert an.inflow.satisfied
    assert kinds(an) == [("Cycle", "Stable"), ("FixedPt", "Saddle"), ("FixedPt", "Unstable"),
                         ("FixedPt", "Unstable")]
    cyc = next(k.data for k in an.components if k.kind == "Cycle")
    assert np.max(np.abs(Hv(cyc.samples) - 0.5)) <= 1e-6


def test_assemble_two_stable_points():
    an = assemble_components(corollary_field(-0.25), SUB)
    got = [(k.data.kind, k.stability) for k in an.components]
    assert sorted(got) == [("Degenerate", "Stable"), ("Degenerate", "Stable"),
                           ("Saddle", "Saddle")]


def test_assemble_rotation_family():
    an = assemble_components(rotation_field(), DISK)
    assert [k.kind for k in an.components] == ["ClosedOrbitFamily"]
    fam = an.components[0].data
    assert fam.l0 == pytest.approx(0.0, abs=1e-9)
    assert fam.l1 == pytest.approx(1.0, abs=1e-4)
    assert fam.outer_end == "boundary"


def test_assemble_shifted_family():
    an = assemble_components(prop12_field(0.25), DISK)
    fams = [k.data for k in an.components if k.kind == "ClosedOrbitFamily"]
    assert len(fams) == 1
    assert fams[0].origin == pytest.approx((0.0, -1 / 3), abs=1e-8)
    assert fams[0].l1 == pytest.approx(2 / 3, abs=1e-3)


def test_polygon_helpers():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    assert point_in_polygon(sq, (0.5, 0.5))
    assert not point_in_polygon(sq, (1.5, 0.5))
    assert hausdorff(sq, sq + [0.1, 0]) == pytest.approx(0.1)
