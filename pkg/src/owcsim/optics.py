"""VCSEL Gaussian-beam optics and line-of-sight DC channel gains.

All lengths are in metres, powers in watts, angles in radians.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLens, EtaUnderflow

LENS_DENOM_TOL = 1e-30
ETA_MIN = 1e-12


@dataclass(frozen=True)
class VcselParams:
    beam_waist_w0: float
    wavelength: float
    medium_index: float = 1.0
    emit_power: float = 50e-3

    def __post_init__(self):
        for name in ("beam_waist_w0", "wavelength", "medium_index", "emit_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class LensParams:
    focal_length: float
    vcsel_to_lens_d1: float

    def __post_init__(self):
        if not self.focal_length > 0:
            raise ValueError("focal_length must be strictly positive")
        if self.vcsel_to_lens_d1 < 0:
            raise ValueError("vcsel_to_lens_d1 must be non-negative")


@dataclass(frozen=True)
class TransformedBeam:
    """Post-lens Gaussian beam: waist ``new_waist_wd`` located ``waist_location_d2`` after the lens."""

    new_waist_wd: float
    waist_location_d2: float
    divergence_theta2: float
    magnification_k: float
    wavelength: float
    medium_index: float = 1.0

    @property
    def rayleigh_range(self):
        return np.pi * self.new_waist_wd ** 2 * self.medium_index / self.wavelength

    def radius_at(self, z):
        """Beam radius at propagation distance ``z`` from the AP plane."""
        return beam_radius(self.new_waist_wd, z, self.rayleigh_range)


@dataclass(frozen=True)
class EyeSafetyParams:
    mpe: float
    pupil_radius_rp: float
    mhp_distance: float

    def __post_init__(self):
        if not (self.mpe > 0 and self.mhp_distance > 0):
            raise ValueError("mpe and mhp_distance must be strictly positive")
        if not 1e-3 <= self.pupil_radius_rp <= 7e-3:
            raise ValueError("pupil_radius_rp must lie in [1e-3, 7e-3] m")


@dataclass(frozen=True)
class ApGeometry:
    position: np.ndarray
    array_side_Lc: int
    per_vcsel_power: float
    element_offsets: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.element_offsets, dtype=float).reshape(-1, 2)
        if offsets.shape[0] != self.array_side_Lc ** 2:
            raise ValueError("element count must equal Lc x Lc")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "element_offsets", offsets)

    @classmethod
    def grid(cls, position, array_side=5, pitch=300e-6, per_vcsel_power=50e-3):
        """Uniform ``array_side x array_side`` element grid centred on ``position``."""
        c = (np.arange(array_side) - (array_side - 1) / 2) * pitch
        xx, yy = np.meshgrid(c, c, indexing="ij")
        offsets = np.column_stack([xx.ravel(), yy.ravel()])
        return cls(np.asarray(position, dtype=float), array_side, per_vcsel_power, offsets)

    @property
    def total_power(self):
        return self.array_side_Lc ** 2 * self.per_vcsel_power

    @property
    def element_positions(self):
        pos = np.repeat(self.position[None, :], len(self.element_offsets), axis=0)
        pos[:, :2] += self.element_offsets
        return pos


@dataclass(frozen=True)
class ReceiverGeometry:
    position: np.ndarray
    pd_orientations: np.ndarray
    active_area: float = 1.0
    concentrator_gain: float = 1.0
    acceptance_angle: float = np.deg2rad(30.0)
    responsivity: float = 0.7

    def __post_init__(self):
        normals = np.asarray(self.pd_orientations, dtype=float).reshape(-1, 3)
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        object.__setattr__(self, "pd_orientations", normals)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if not 0 < self.active_area <= 1:
            raise ValueError("active_area must lie in (0, 1]")
        if self.concentrator_gain < 1:
            raise ValueError("concentrator_gain must be >= 1")
        if not 0 < self.acceptance_angle <= np.pi / 2:
            raise ValueError("acceptance_angle must lie in (0, pi/2]")

    @property
    def pd_count(self):
        return len(self.pd_orientations)

    def moved_to(self, position):
        return ReceiverGeometry(position, self.pd_orientations, self.active_area,
                                self.concentrator_gain, self.acceptance_angle, self.responsivity)


def cpc_gain(refractive_index, acceptance_angle):
    """Ideal CPC concentration gain n^2 / sin^2(theta_acc)."""
    return refractive_index ** 2 / np.sin(acceptance_angle) ** 2


def adr_orientations(n_pd=5, tilt=np.deg2rad(40.0)):
    """One upward-facing PD plus ``n_pd - 1`` PDs tilted by ``tilt`` at equal azimuth spacing."""
    normals = [np.array([0.0, 0.0, 1.0])]
    for i in range(n_pd - 1):
        az = 2 * np.pi * i / (n_pd - 1)
        normals.append(np.array([np.sin(tilt) * np.cos(az), np.sin(tilt) * np.sin(az), np.cos(tilt)]))
    return np.array(normals)


def rayleigh_range(v):
    return np.pi * v.beam_waist_w0 ** 2 * v.medium_index / v.wavelength


def beam_radius(w0, z, z_R):
    z = np.asarray(z, dtype=float)
    return w0 * np.sqrt(1.0 + (z / z_R) ** 2)


def lens_transform(v, lens):
    """Thin-lens transformation of the VCSEL waist.

    Returns the new waist, its location after the lens, the post-lens
    divergence and the magnification ``k = wd / w0``.
    """
    f = lens.focal_length
    d1 = lens.vcsel_to_lens_d1
    a = v.wavelength / (np.pi * v.beam_waist_w0 ** 2 * v.medium_index)
    denom = 1.0 / f ** 2 + (1.0 - d1 / f) ** 2 * a ** 2
    if denom < LENS_DENOM_TOL:
        raise DegenerateLens(f"lens denominator {denom:.3g} below tolerance")
    d2 = (1.0 / f - (1.0 - d1 / f) * d1 * a ** 2) / denom
    # waist uses the object distance d1; the d2 variant disagrees with q-parameter propagation
    wd = v.wavelength * f / (np.pi * v.beam_waist_w0 * v.medium_index
                             * np.sqrt(1.0 + (1.0 - d1 / f) ** 2 * a ** 2 * f ** 2))
    k = wd / v.beam_waist_w0
    theta = v.wavelength / (np.pi * v.beam_waist_w0 * v.medium_index)
    return TransformedBeam(wd, d2, theta / k, k, v.wavelength, v.medium_index)


def enclosed_power(p_out, r0, w_at_z):
    r0 = np.asarray(r0, dtype=float)
    return p_out * -np.expm1(-2.0 * r0 ** 2 / np.asarray(w_at_z, dtype=float) ** 2)


def eye_safe_power(e, v):
    """Maximum per-VCSEL power that keeps the most hazardous position below the MPE.

    The enclosure factor is the far-field fraction of the beam passing the
    pupil at the MHP, ``1 - exp(-2 r_p^2 (pi w0 n)^2 / (lambda MHP)^2)``.
    """
    x = 2.0 * e.pupil_radius_rp ** 2 * (np.pi * v.beam_waist_w0 * v.medium_index) ** 2 \
        / (v.wavelength * e.mhp_distance) ** 2
    eta = -np.expm1(-x)
    if eta < ETA_MIN:
        raise EtaUnderflow(f"enclosure factor {eta:.3g} below {ETA_MIN}")
    return e.mpe * np.pi * e.pupil_radius_rp ** 2 / eta


def _gain_terms(src, rx_pos, normals, beam, rx):
    """Gain for every (source, PD) pair; ``src`` is (E, 3), ``normals`` is (P, 3)."""
    v = rx_pos[None, :] - src                     # (E, 3) source -> receiver
    d = np.linalg.norm(v, axis=1)
    cos_phi = -v[:, 2] / d                        # beams point straight down
    sin2_phi = np.clip(1.0 - cos_phi ** 2, 0.0, None)
    w2 = beam.radius_at(d * cos_phi) ** 2
    pref = 2.0 * rx.pd_count * rx.active_area * rx.concentrator_gain / (np.pi * w2)
    spatial = pref * np.exp(-2.0 * d ** 2 * sin2_phi / w2)
    cos_psi = (-v / d[:, None]) @ normals.T       # (E, P)
    inside = cos_psi >= np.cos(rx.acceptance_angle)
    return np.where(inside, spatial[:, None] * cos_psi, 0.0)


def element_channel_gain(ap, element_index, rx, pd_index, beam):
    src = ap.element_positions[element_index][None, :]
    normal = rx.pd_orientations[pd_index][None, :]
    return float(_gain_terms(src, rx.position, normal, beam, rx)[0, 0])


def aggregate_gain(ap, rx, beam):
    """Sum of element gains over every VCSEL element and every photodiode.

    ``math.fsum`` rounds the sum correctly, so the result does not depend on
    the order in which the elements are visited.
    """
    return math.fsum(_gain_terms(ap.element_positions, rx.position, rx.pd_orientations, beam, rx).ravel())


def gain_matrix(aps, positions, rx_template, beam):
    """Aggregate gains for many receiver positions, shape ``(n_positions, n_aps)``.

    Receivers share the template's photodiode orientations and optics.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    src = np.stack([ap.element_positions for ap in aps])          # (A, E, 3)
    A, E, _ = src.shape
    v = positions[:, None, None, :] - src[None]                    # (N, A, E, 3)
    d = np.linalg.norm(v, axis=-1)
    cos_phi = -v[..., 2] / d
    sin2_phi = np.clip(1.0 - cos_phi ** 2, 0.0, None)
    w2 = beam.radius_at(d * cos_phi) ** 2
    rx = rx_template
    spatial = 2.0 * rx.pd_count * rx.active_area * rx.concentrator_gain / (np.pi * w2) \
        * np.exp(-2.0 * d ** 2 * sin2_phi / w2)
    cos_psi = (-v / d[..., None]) @ rx.pd_orientations.T           # (N, A, E, P)
    cos_psi = np.where(cos_psi >= np.cos(rx.acceptance_angle), cos_psi, 0.0)
    return np.einsum("nae,naep->na", spatial, cos_psi)
