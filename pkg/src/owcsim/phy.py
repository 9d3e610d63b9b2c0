"""DCO-OFDM physical layer: adaptive square QAM, ZF precoding, noise and rates."""
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import rng as rngmod
from .errors import BitCountMismatch, InvalidBer, RankDeficientWarning

BOLTZMANN = 1.380649e-23
SUPPORTED_ORDERS = (4, 16, 64, 256)
E_OVER_2PI = np.e / (2 * np.pi)


@dataclass(frozen=True)
class OfdmParams:
    fft_size: int = 64
    bandwidth: float = 1.5e9
    dc_bias: float | None = None     # None -> bias_sigmas * sqrt(P)
    bias_sigmas: float = 3.0

    def __post_init__(self):
        M = self.fft_size
        if M < 4 or M & (M - 1):
            raise ValueError("fft_size must be a power of two >= 4")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    @property
    def xi(self):
        return (self.fft_size - 2) / self.fft_size

    @property
    def alpha(self):
        return np.sqrt(self.fft_size / (self.fft_size - 2))

    @property
    def n_data(self):
        return self.fft_size // 2 - 1

    def bias_for(self, tx_power):
        if self.dc_bias is not None:
            return self.dc_bias
        return self.bias_sigmas * np.sqrt(tx_power)


@dataclass(frozen=True)
class QamLink:
    target_ber: float
    constellation_F: int = 4

    @property
    def sinr_gap(self):
        return sinr_gap(self.target_ber)


@dataclass(frozen=True)
class NoiseModel:
    psd: float
    bandwidth: float

    @property
    def variance(self):
        return self.psd * self.bandwidth


@dataclass(frozen=True)
class Link:
    """Everything the rate formula needs for one receiver chain."""

    responsivity: float
    xi: float
    bandwidth: float
    noise_var: float
    gamma: float

    @classmethod
    def build(cls, ofdm, noise, qam, responsivity):
        return cls(responsivity, ofdm.xi, ofdm.bandwidth, noise.variance, qam.sinr_gap)

    @property
    def noise_floor(self):
        return self.xi ** 2 * self.noise_var

    def sinr(self, P, H, interference=0.0):
        """Gap-free SINR per data subcarrier."""
        return E_OVER_2PI * (self.responsivity * H) ** 2 * P / (self.noise_floor + interference)

    def kappa(self, H, interference=0.0):
        """Effective SINR-over-gap per watt, so that rate = xi B log2(1 + kappa P)."""
        return self.sinr(1.0, H, interference) / self.gamma

    def rate(self, P, H, interference=0.0):
        return self.xi * self.bandwidth * np.log2(1.0 + self.kappa(H, interference) * P)


class Constellation(NamedTuple):
    order: int
    raw: float
    below_min: bool


def sinr_gap(target_ber):
    if not 0 < target_ber < 0.2:
        raise InvalidBer(f"target BER {target_ber!r} outside (0, 0.2)")
    return -np.log(5.0 * target_ber) / 1.5


def ber_upper_bound(sinr, F):
    return 0.2 * np.exp(-1.5 * np.asarray(sinr, dtype=float) / (F - 1))


def max_constellation(sinr, gamma):
    """Largest supported square-QAM order not above ``1 + sinr / gamma``."""
    raw = 1.0 + sinr / gamma
    fits = [F for F in SUPPORTED_ORDERS if F <= raw * (1 + 1e-12)]
    if not fits:
        return Constellation(SUPPORTED_ORDERS[0], raw, True)
    return Constellation(fits[-1], raw, False)


def zf_precoder(H):
    """Zero-forcing precoder ``W = pinv(H)``; warns when H is rank deficient."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if not np.all(np.isfinite(H)):
        raise ValueError("channel matrix must be finite")
    W = np.linalg.pinv(H)
    if np.linalg.matrix_rank(H) < H.shape[0]:
        warnings.warn("channel matrix is rank deficient", RankDeficientWarning, stacklevel=2)
    return W


def default_noise_psd(responsivity, ref_gain, ref_power, rin_db_hz=-155.0, noise_figure_db=5.0,
                      temperature=300.0, load_resistance=50.0):
    """Thermal noise with the preamp noise figure plus RIN on a reference DC photocurrent (A^2/Hz)."""
    thermal = 4 * BOLTZMANN * temperature * 10 ** (noise_figure_db / 10) / load_resistance
    i_dc = responsivity * ref_gain * ref_power
    return thermal + 10 ** (rin_db_hz / 10) * i_dc ** 2


def subcarrier_snr(P, responsivity, p, noise):
    return responsivity ** 2 * p.alpha ** 2 * P / (p.xi * noise.variance)


def user_rate(P, H, interference, link, p, noise, responsivity):
    """Achievable rate (bit/s) of one user under the IM/DD lower bound with SINR gap."""
    snr = E_OVER_2PI * (responsivity * H) ** 2 * P / (link.sinr_gap * (p.xi ** 2 * noise.variance + interference))
    return p.xi * p.bandwidth * np.log2(1.0 + snr)


# ---------------------------------------------------------------------------
# Gray-coded square QAM
# ---------------------------------------------------------------------------

def _check_order(F):
    if F not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported constellation order {F}")
    return int(np.log2(F))


def _pam_levels(bits_axis, L):
    half = bits_axis.shape[-1]
    weights = 1 << np.arange(half - 1, -1, -1)
    g = bits_axis @ weights
    idx = g.copy()
    shift = g >> 1
    while np.any(shift):
        idx ^= shift
        shift >>= 1
    return 2 * idx - (L - 1)


def qam_map(bits, F):
    """Map ``(..., k*log2 F)`` bits onto ``(..., k)`` unit-energy Gray QAM symbols."""
    b = _check_order(F)
    bits = np.asarray(bits, dtype=np.int64)
    groups = bits.reshape(*bits.shape[:-1], -1, b)
    L = int(np.sqrt(F))
    i = _pam_levels(groups[..., : b // 2], L)
    q = _pam_levels(groups[..., b // 2:], L)
    return (i + 1j * q) / np.sqrt(2 * (F - 1) / 3)


def _pam_bits(levels, L, half):
    idx = np.clip(np.rint((levels + (L - 1)) / 2), 0, L - 1).astype(np.int64)
    g = idx ^ (idx >> 1)
    shifts = np.arange(half - 1, -1, -1)
    return (g[..., None] >> shifts) & 1


def qam_demap(symbols, F):
    b = _check_order(F)
    L = int(np.sqrt(F))
    s = np.asarray(symbols) * np.sqrt(2 * (F - 1) / 3)
    bi = _pam_bits(s.real, L, b // 2)
    bq = _pam_bits(s.imag, L, b // 2)
    out = np.concatenate([bi, bq], axis=-1)
    return out.reshape(*out.shape[:-2], -1)


# ---------------------------------------------------------------------------
# DCO-OFDM frames
# ---------------------------------------------------------------------------

def bits_per_frame(F, p):
    return p.n_data * _check_order(F)


def unbiased_symbols(symbols, p):
    """Hermitian loading of ``(n, M/2-1)`` data symbols, alpha scaling and IFFT."""
    symbols = np.atleast_2d(symbols)
    M = p.fft_size
    X = np.zeros((symbols.shape[0], M), dtype=complex)
    X[:, 1:M // 2] = symbols
    X[:, M // 2 + 1:] = np.conj(symbols[:, ::-1])
    return p.alpha * np.sqrt(M) * np.fft.ifft(X, axis=1).real


def modulate_symbols(symbols, p, tx_power=1.0):
    """Scale, bias and clip at zero; returns ``(samples, n_clipped)``."""
    x_op = np.sqrt(tx_power) * unbiased_symbols(symbols, p) + p.bias_for(tx_power)
    clipped = int(np.count_nonzero(x_op < 0))
    return np.maximum(x_op, 0.0), clipped


def unbiased_signal(bits, F, p):
    """Pre-bias, unit-power time-domain frames."""
    return unbiased_symbols(qam_map(np.atleast_2d(bits), F), p)


def modulate_frames(bits, F, p, tx_power=1.0):
    """Batch version of :func:`modulate_frame`; returns ``(samples, n_clipped)``."""
    bits = np.atleast_2d(bits)
    if bits.shape[-1] != bits_per_frame(F, p):
        raise BitCountMismatch(f"expected {bits_per_frame(F, p)} bits per frame, got {bits.shape[-1]}")
    return modulate_symbols(qam_map(bits, F), p, tx_power)


def modulate_frame(bits, F, p, tx_power=1.0):
    samples, _ = modulate_frames(np.asarray(bits)[None, :], F, p, tx_power)
    return samples[0]


def demodulate_frames(samples, p, F, tx_power=1.0, dc_bias=None):
    M = p.fft_size
    samples = np.atleast_2d(samples)
    dc = p.bias_for(tx_power) if dc_bias is None else dc_bias
    y = (samples - dc) / (np.sqrt(tx_power) * p.alpha)
    Y = np.fft.fft(y, axis=1) / np.sqrt(M)
    return qam_demap(Y[:, 1:M // 2], F)


def demodulate_frame(samples, p, F, tx_power=1.0, dc_bias=None):
    return demodulate_frames(np.asarray(samples)[None, :], p, F, tx_power, dc_bias)[0]


@dataclass(frozen=True)
class BerPoint:
    snr_db: float
    ber: float
    bits: int
    frames: int
    clip_rate: float


def simulate_ber(snr_lin, F, p, frames, rng, tx_power=1.0, chunk=4096):
    """Monte-Carlo BER at per-symbol subcarrier SNR ``snr_lin`` through AWGN.

    Returns ``(bit_errors, bits, clipped_samples)``.
    """
    nb = bits_per_frame(F, p)
    sigma = np.sqrt(p.alpha ** 2 * tx_power / snr_lin)
    errors = clipped = 0
    done = 0
    while done < frames:
        n = min(chunk, frames - done)
        bits = rng.integers(0, 2, size=(n, nb))
        tx, c = modulate_frames(bits, F, p, tx_power)
        rx = tx + sigma * rng.standard_normal(tx.shape)
        errors += int(np.count_nonzero(demodulate_frames(rx, p, F, tx_power) != bits))
        clipped += c
        done += n
    return errors, frames * nb, clipped


def simulate_ber_curve(scheme_powers, gains, F, snr_grid_db, frames, seed, p=None,
                       reference=1.0, scheme="", chunk=4096):
    """Empirical BER versus reference SNR for a set of users.

    Each user's per-symbol SNR is the grid SNR scaled by ``gain^2 * power /
    reference``; a single user with unit gain, unit power and unit
    reference sees the grid SNR exactly. Every (grid point, user) pair gets
    its own random stream so results do not depend on evaluation order.
    """
    p = p or OfdmParams()
    if frames < 1000:
        raise ValueError("at least 1000 frames per point are required")
    powers = np.atleast_1d(np.asarray(scheme_powers, dtype=float))
    gains = np.atleast_1d(np.asarray(gains, dtype=float))
    rel = gains ** 2 * powers / reference
    out = []
    for gi, snr_db in enumerate(snr_grid_db):
        err = bits = clipped = 0
        for ui, r in enumerate(rel):
            if r <= 0:
                continue
            g = rngmod.stream(seed, f"ber:{scheme}:{F}", gi, ui)
            e, b, c = simulate_ber(10 ** (snr_db / 10) * r, F, p, frames, g, chunk=chunk)
            err, bits, clipped = err + e, bits + b, clipped + c
        n_frames = frames * int(np.count_nonzero(rel > 0))
        ber = err / bits if bits else float("nan")
        clip_rate = clipped / (n_frames * p.fft_size) if n_frames else 0.0
        out.append(BerPoint(float(snr_db), ber, bits, n_frames, clip_rate))
    return out
