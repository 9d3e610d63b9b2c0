import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from owcsim import optics
from owcsim.errors import DegenerateLens, EtaUnderflow

V = optics.VcselParams(5e-6, 1550e-9)
LENS = optics.LensParams(50e-6, 250e-6)


def abcd_oracle(w0, lam, n, f, d1):
    """Propagate q through free space d1 then a thin lens, and locate the new waist."""
    q0 = 1j * np.pi * w0 ** 2 * n / lam
    M = np.array([[1.0, 0.0], [-1.0 / f, 1.0]]) @ np.array([[1.0, d1], [0.0, 1.0]])
    (A, B), (C, D) = M
    q1 = (A * q0 + B) / (C * q0 + D)
    d2 = -q1.real                         # free-space distance that makes q purely imaginary
    zr = q1.imag
    return d2, np.sqrt(zr * lam / (np.pi * n))


def test_rayleigh_range_example():
    assert optics.rayleigh_range(V) == pytest.approx(5.067e-5, rel=1e-3)
    assert optics.rayleigh_range(optics.VcselParams(10e-6, 1550e-9)) == pytest.approx(4 * optics.rayleigh_range(V))
    assert optics.rayleigh_range(optics.VcselParams(5e-6, 3100e-9)) == pytest.approx(optics.rayleigh_range(V) / 2)


def test_beam_radius():
    zr = optics.rayleigh_range(V)
    assert optics.beam_radius(5e-6, 0.0, zr) == 5e-6
    assert optics.beam_radius(5e-6, zr, zr) == pytest.approx(5e-6 * np.sqrt(2), rel=1e-14)
    w = optics.beam_radius(5e-6, 2.0, 5.067e-5)
    assert w == pytest.approx(0.1974, rel=1e-3)
    assert w == pytest.approx(5e-6 * 2.0 / 5.067e-5, rel=1e-6)


@given(st.floats(0.0, 10.0), st.floats(1e-6, 1e-4))
def test_beam_radius_never_below_waist(z, w0):
    assert optics.beam_radius(w0, z, 1e-4) >= w0


def test_lens_transform_matches_abcd():
    tb = optics.lens_transform(V, LENS)
    d2, wd = abcd_oracle(5e-6, 1550e-9, 1.0, 50e-6, 250e-6)
    assert tb.waist_location_d2 == pytest.approx(d2, rel=1e-9)
    assert tb.new_waist_wd == pytest.approx(wd, rel=1e-9)


@settings(max_examples=200)
@given(st.floats(10e-6, 5e-3), st.floats(0.0, 5e-3), st.floats(1e-6, 50e-6), st.floats(1.0, 2.0))
def test_lens_transform_random_geometries(f, d1, w0, n):
    v = optics.VcselParams(w0, 1550e-9, n)
    tb = optics.lens_transform(v, optics.LensParams(f, d1))
    d2, wd = abcd_oracle(w0, 1550e-9, n, f, d1)
    assert tb.new_waist_wd == pytest.approx(wd, rel=1e-9)
    assert tb.waist_location_d2 == pytest.approx(d2, rel=1e-9, abs=1e-9 * f)
    assert tb.new_waist_wd <= 1550e-9 * f / (np.pi * w0 * n) * (1 + 1e-12)
    theta = 1550e-9 / (np.pi * w0 * n)
    assert tb.divergence_theta2 * tb.magnification_k == pytest.approx(theta, rel=1e-12)
    assert tb.magnification_k == pytest.approx(tb.new_waist_wd / w0, rel=1e-15)


def test_collimated_limit_focuses_at_f():
    v = optics.VcselParams(5e-2, 1550e-9)
    tb = optics.lens_transform(v, optics.LensParams(0.1, 0.1))
    assert tb.waist_location_d2 == pytest.approx(0.1, rel=1e-9)


def test_degenerate_lens():
    with pytest.raises(DegenerateLens):
        optics.lens_transform(optics.VcselParams(1e-9, 1e-6), optics.LensParams(1e20, 1e20))


def test_enclosed_power():
    assert optics.enclosed_power(1.0, 1e-3, 1e-3) == pytest.approx(1 - np.exp(-2), abs=1e-12)
    assert optics.enclosed_power(0.864664 / 0.8646647167633873, 2.0, 2.0) == pytest.approx(0.864664, abs=1e-9)
    assert optics.enclosed_power(1.0, 0.0, 1.0) == 0.0
    assert optics.enclosed_power(0.05, 10.0, 1.0) == pytest.approx(0.05, abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 1))
def test_enclosed_power_monotone_bounded(a, b, w):
    lo, hi = sorted((a, b))
    assert optics.enclosed_power(1.0, lo, w) <= optics.enclosed_power(1.0, hi, w) <= 1.0


def test_eye_safe_power_unit_eta():
    e = optics.EyeSafetyParams(10.0, 7e-3, 1e-6)      # MHP inside the near field: eta -> 1
    assert optics.eye_safe_power(e, V) == pytest.approx(10.0 * np.pi * 49e-6, rel=1e-12)


def test_eta_equals_far_field_enclosed_fraction():
    # far from the waist w(z) ~ lambda z / (pi w0 n), so eta is the enclosed fraction there
    mhp, rp = 0.5, 3.5e-3
    e = optics.EyeSafetyParams(1000.0, rp, mhp)
    eta = 1000.0 * np.pi * rp ** 2 / optics.eye_safe_power(e, V)
    w = optics.beam_radius(V.beam_waist_w0, mhp, optics.rayleigh_range(V))
    assert eta == pytest.approx(optics.enclosed_power(1.0, rp, w), rel=1e-6)


def test_eta_underflow():
    with pytest.raises(EtaUnderflow):
        optics.eye_safe_power(optics.EyeSafetyParams(1000.0, 1e-3, 1e6), V)


@given(st.floats(1e-3, 7e-3), st.floats(1e-3, 7e-3), st.floats(1e-3, 1.0))
def test_eye_safe_power_monotone_in_pupil(r1, r2, mhp):
    lo, hi = sorted((r1, r2))
    p = [optics.eye_safe_power(optics.EyeSafetyParams(1000.0, r, mhp), V) for r in (lo, hi)]
    assert p[0] <= p[1] * (1 + 1e-12)


def test_eye_safety_param_validation():
    with pytest.raises(ValueError):
        optics.EyeSafetyParams(1000.0, 8e-3, 1.0)
    with pytest.raises(ValueError):
        optics.VcselParams(0.0, 1550e-9)


BEAM = optics.lens_transform(V, LENS)


def single_ap(pos=(0.0, 0.0, 3.0)):
    return optics.ApGeometry(np.array(pos), 1, 0.05, np.zeros((1, 2)))


def test_on_axis_gain():
    rx = optics.ReceiverGeometry(np.array([0.0, 0.0, 1.0]), [[0, 0, 1]], 0.8, 3.0)
    h = optics.element_channel_gain(single_ap(), 0, rx, 0, BEAM)
    w = BEAM.radius_at(2.0)
    assert h == pytest.approx(2 * 1 * 0.8 * 3.0 / (np.pi * w ** 2), rel=1e-12)


def test_fov_cutoff():
    theta = np.deg2rad(30.0)
    psi = theta + 0.01
    normal = [np.sin(psi), 0.0, np.cos(psi)]
    rx = optics.ReceiverGeometry(np.array([0.0, 0.0, 1.0]), [normal], acceptance_angle=theta)
    assert optics.element_channel_gain(single_ap(), 0, rx, 0, BEAM) == 0.0
    psi = theta - 0.01
    rx = optics.ReceiverGeometry(np.array([0.0, 0.0, 1.0]), [[np.sin(psi), 0, np.cos(psi)]], acceptance_angle=theta)
    assert optics.element_channel_gain(single_ap(), 0, rx, 0, BEAM) > 0.0


def test_gain_matches_intensity_integration():
    # 0.5 m lateral offset at 2 m vertical; a small upward PD aperture collects
    # the Gaussian intensity crossing its plane. Normalizing by the aperture
    # area recovers the closed form's spatial factor.
    ap, x0, h = single_ap(), 0.5, 2.0
    rx = optics.ReceiverGeometry(np.array([x0, 0.0, 1.0]), [[0, 0, 1]], acceptance_angle=np.pi / 2)
    closed = optics.element_channel_gain(ap, 0, rx, 0, BEAM)
    a = 1e-3

    def intensity(y, x):
        # beam axis points down; the plane z = 1 m is at axial distance h
        w = BEAM.radius_at(h)
        return 2 / (np.pi * w ** 2) * np.exp(-2 * (x ** 2 + y ** 2) / w ** 2)

    power, _ = integrate.dblquad(intensity, x0 - a, x0 + a, -a, a, epsabs=0, epsrel=1e-10)
    d = np.hypot(x0, h)
    cos_psi = h / d
    oracle = power / (4 * a * a) * cos_psi       # N_PD = A_PD = G = 1
    assert closed == pytest.approx(oracle, rel=0.05)


def test_aggregate_gain_equals_double_loop():
    ap = optics.ApGeometry.grid(np.array([0.0, 0.0, 3.0]))
    rx = optics.ReceiverGeometry(np.array([0.0, 0.0, 1.0]), optics.adr_orientations(), 1.0,
                                 optics.cpc_gain(1.77, np.deg2rad(30)))
    terms = [optics.element_channel_gain(ap, i, rx, p, BEAM) for i in range(25) for p in range(5)]
    brute = 0.0
    for t in terms:
        brute += t
    assert optics.aggregate_gain(ap, rx, BEAM) == math.fsum(terms)
    assert optics.aggregate_gain(ap, rx, BEAM) == pytest.approx(brute, rel=1e-13)
    m = optics.gain_matrix([ap], rx.position, rx, BEAM)
    assert m.shape == (1, 1)
    assert m[0, 0] == pytest.approx(brute, rel=1e-13)


def test_single_element_single_pd_aggregate():
    rx = optics.ReceiverGeometry(np.array([0.2, 0.1, 1.0]), [[0, 0, 1]])
    assert optics.aggregate_gain(single_ap(), rx, BEAM) == optics.element_channel_gain(single_ap(), 0, rx, 0, BEAM)


def test_all_pds_out_of_fov():
    rx = optics.ReceiverGeometry(np.array([0.0, 0.0, 1.0]), [[1, 0, 0], [0, 1, 0], [0, 0, -1]])
    assert optics.aggregate_gain(optics.ApGeometry.grid(np.array([0.0, 0.0, 3.0])), rx, BEAM) == 0.0


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_gain_axial_symmetry(x, y):
    rx = optics.ReceiverGeometry(np.array([x, y, 1.0]), [[0, 0, 1]], acceptance_angle=np.pi / 2)
    mirrored = rx.moved_to(np.array([-x, -y, 1.0]))
    assert optics.aggregate_gain(single_ap(), rx, BEAM) == pytest.approx(
        optics.aggregate_gain(single_ap(), mirrored, BEAM), rel=1e-12, abs=1e-300)


def test_gain_continuous_inside_fov():
    rx = optics.ReceiverGeometry(np.array([0.3, 0.0, 1.0]), optics.adr_orientations())
    h0 = optics.aggregate_gain(single_ap(), rx, BEAM)
    h1 = optics.aggregate_gain(single_ap(), rx.moved_to(np.array([0.3 + 1e-7, 0.0, 1.0])), BEAM)
    assert h1 == pytest.approx(h0, rel=1e-5)


def test_ap_geometry_power():
    ap = optics.ApGeometry.grid(np.array([1.0, 1.0, 3.0]))
    assert ap.total_power == pytest.approx(1.25)
    assert ap.element_positions.shape == (25, 3)
    with pytest.raises(ValueError):
        optics.ApGeometry(np.zeros(3), 2, 0.05, np.zeros((3, 2)))


def test_receiver_validation():
    with pytest.raises(ValueError):
        optics.ReceiverGeometry(np.zeros(3), [[0, 0, 1]], active_area=0.0)
    with pytest.raises(ValueError):
        optics.ReceiverGeometry(np.zeros(3), [[0, 0, 1]], concentrator_gain=0.5)
    assert len(optics.adr_orientations()) == 5
