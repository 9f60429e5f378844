"""SIMO fading draws, TO/FO phase impairments, and received-signal synthesis.

Everything is frequency-domain: a time offset within the CP appears as a
phase ramp across subcarriers and a small carrier offset as a phase ramp
across OFDM symbols, so no waveform synthesis is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gfsim.frame import GridConfig, GridCoord, _data_re_arrays, _pilot_re_arrays
from gfsim.pilots import PilotSet

FLAT = "flat"
SELECTIVE = "selective"


@dataclass(frozen=True)
class ChannelModel:
    """Fading profile: single-tap Rayleigh (flat) or a tapped delay line
    with an exponential power-delay profile (frequency selective)."""

    kind: str
    taps: tuple[tuple[float, float], ...]  # (delay s, linear power), powers sum to 1
    rms_delay_spread: float

    @staticmethod
    def flat() -> "ChannelModel":
        return ChannelModel(kind=FLAT, taps=((0.0, 1.0),), rms_delay_spread=0.0)

    @staticmethod
    def selective(
        rms_delay_spread: float = 300e-9,
        n_taps: int = 8,
        tap_spacing: float = 100e-9,
    ) -> "ChannelModel":
        delays = np.arange(n_taps) * tap_spacing
        powers = np.exp(-delays / rms_delay_spread)
        powers /= powers.sum()
        return ChannelModel(
            kind=SELECTIVE,
            taps=tuple((float(d), float(p)) for d, p in zip(delays, powers)),
            rms_delay_spread=rms_delay_spread,
        )


@dataclass
class ChannelRealization:
    """Per-UE spatial frequency response plus this slot's TO/FO draw."""

    H: np.ndarray  # [M antennas x J subcarriers]
    to: float  # arrival delay, s
    fo: float  # carrier offset, Hz

    @property
    def n_antennas(self) -> int:
        return self.H.shape[0]


@dataclass
class ReceivedSignal:
    Y_p: list[np.ndarray]  # per region, [M x pilot REs]
    Y_d: np.ndarray  # [M x L]
    noise_var: float
    grid: GridConfig


def draw_channel(
    rng: np.random.Generator,
    model: ChannelModel,
    M: int,
    grid: GridConfig,
    to_max: float = 0.0,
    fo_max: float = 0.0,
) -> ChannelRealization:
    """Draw one UE's channel: i.i.d. CN(0,1) per antenna (unit average power
    per subcarrier), plus independent uniform TO in [0, to_max] and FO in
    [-fo_max, fo_max]."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if not model.taps:
        raise ValueError("channel model needs at least one tap")
    delays = np.array([t[0] for t in model.taps])
    powers = np.array([t[1] for t in model.taps])
    gains = (
        rng.standard_normal((M, len(delays))) + 1j * rng.standard_normal((M, len(delays)))
    ) * np.sqrt(powers / 2.0)
    freqs = np.arange(grid.n_subcarriers) * grid.subcarrier_spacing
    steer = np.exp(-2j * np.pi * np.outer(delays, freqs))  # [taps x J]
    H = gains @ steer
    to = rng.uniform(0.0, to_max)
    fo = rng.uniform(-fo_max, fo_max)
    return ChannelRealization(H=H, to=float(to), fo=float(fo))


def _impairment_phases(
    sc: np.ndarray, sym: np.ndarray, to: float, fo: float, grid: GridConfig
) -> np.ndarray:
    """Unit phasors multiplying a UE's RE values: TO ramps phase down across
    frequency, FO ramps it up across time."""
    ph = -2.0 * np.pi * grid.subcarrier_spacing * to * sc + (
        2.0 * np.pi * fo * grid.symbol_duration * sym
    )
    return np.exp(1j * ph)


def impairment_phase(
    coord: GridCoord, to: float, fo: float, grid: GridConfig
) -> complex:
    """TO/FO phasor at a single grid coordinate."""
    return complex(
        _impairment_phases(
            np.array([coord.subcarrier]), np.array([coord.symbol]), to, fo, grid
        )[0]
    )


def synthesize(
    ues: list[tuple[ChannelRealization, np.ndarray, np.ndarray]],
    pset: PilotSet,
    noise_var: float,
    rng: np.random.Generator,
    n_antennas: int | None = None,
) -> ReceivedSignal:
    """Superimpose K UEs' pilot and data contributions and add noise.

    ``ues`` holds per UE ``(channel, pilot ids per region, data symbols)``;
    the data symbols are placed on the grid in serial data-RE order. Noise is
    complex Gaussian with variance ``noise_var`` per antenna per RE.
    ``n_antennas`` is only needed for the zero-UE (noise-only) case.
    """
    grid = pset.grid
    L = grid.n_data_res
    if ues:
        M = ues[0][0].n_antennas
    else:
        M = n_antennas if n_antennas is not None else 1
    data_sc, data_sym = _data_re_arrays(grid)

    Y_d = np.zeros((M, L), dtype=complex)
    Y_p = [
        np.zeros((M, grid.n_pilot_res_per_region), dtype=complex)
        for _ in range(pset.n_regions)
    ]

    for chan, pilot_ids, symbols in ues:
        if chan.n_antennas != M:
            raise ValueError("all UEs must share the antenna count")
        if chan.H.shape[1] != grid.n_subcarriers or len(symbols) != L:
            raise ValueError("dimension mismatch")
        x = symbols * _impairment_phases(data_sc, data_sym, chan.to, chan.fo, grid)
        if chan.H.shape[1] and np.all(chan.H[:, :1] == chan.H):
            Y_d += chan.H[:, :1] * x[None, :]
        else:
            Y_d += chan.H[:, data_sc] * x[None, :]
        for region in range(pset.n_regions):
            pat = pset.patterns[region][int(pilot_ids[region])]
            p_sc = np.array([c.subcarrier for c, _ in pat.entries])
            p_sym = np.array([c.symbol for c, _ in pat.entries])
            vals = pat.values * _impairment_phases(p_sc, p_sym, chan.to, chan.fo, grid)
            Y_p[region][:, pat.re_idx] += chan.H[:, p_sc] * vals[None, :]

    if noise_var > 0:
        std = np.sqrt(noise_var / 2.0)
        for region in range(pset.n_regions):
            shape = Y_p[region].shape
            Y_p[region] += std * (
                rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            )
        Y_d += std * (rng.standard_normal(Y_d.shape) + 1j * rng.standard_normal(Y_d.shape))

    return ReceivedSignal(Y_p=Y_p, Y_d=Y_d, noise_var=noise_var, grid=grid)
