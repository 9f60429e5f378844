"""Simulation configuration: dataclass, INI-style config files, resolution.

The config file is flat key=value text with sections matching the module
names ([sim], [frame], [channel], [phy], [receiver], [pilots]); every key has
a default, so an empty file is a valid config.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace

import numpy as np

from gfsim.channel import FLAT, SELECTIVE, ChannelModel
from gfsim.frame import GridConfig, build_grid_config
from gfsim.phy import BPSK, CodeConfig, build_code_config
from gfsim.pilots import ESOP, TOP, PilotSet, build_pilot_set
from gfsim.receiver import MMSE_HHAT, MMSE_RY, ReceiverConfig

AUTO = "auto"


@dataclass(frozen=True)
class SimConfig:
    # sim
    scheme: str = ESOP
    n_regions: int = 1
    k_list: tuple[int, ...] = (10,)
    snr_db_list: tuple[float, ...] = (10.0,)
    trials: int = 200
    base_seed: int = 1
    workers: int = 1
    output: str = "report.csv"
    # frame
    n_prb: int = 6
    # recorded for provenance only; the frequency-domain model never uses them
    carrier_freq: float = 700e6
    bandwidth: float = 10e6
    # pilots
    pilot_energy: float = 1.0
    # channel
    channel: str = FLAT
    rms_delay_spread: float = 300e-9
    n_taps: int = 8
    tap_spacing: float = 100e-9
    tap_delays: tuple[float, ...] = ()
    tap_powers: tuple[float, ...] = ()
    n_antennas: int = 8
    to_max: float = 0.0
    fo_max: float = 0.0
    # phy
    modulation: str = BPSK
    info_bits: int = 320
    crc_bits: int = 16
    coded_bits: int = 864
    code_seed: int = 7
    max_bp_iters: int = 50
    # receiver
    p_fa: float = 1e-3
    combiner: str = AUTO
    pm_groups_freq: int = 24
    pm_groups_time: int = 4
    pm_alternations: int = 2
    max_sic_rounds: int = 8
    selective_mode: str = AUTO
    pairing_threshold: float = 0.7

    def grid(self) -> GridConfig:
        return build_grid_config(self.n_prb, self.n_regions)

    def pilot_set(self) -> PilotSet:
        return build_pilot_set(self.scheme, self.grid(), self.pilot_energy)

    def channel_model(self) -> ChannelModel:
        if self.channel == FLAT:
            return ChannelModel.flat()
        if self.channel != SELECTIVE:
            raise ValueError(f"unknown channel kind {self.channel!r}")
        if self.tap_delays:
            powers = np.asarray(self.tap_powers, dtype=float)
            powers = powers / powers.sum()
            return ChannelModel(
                kind=SELECTIVE,
                taps=tuple(zip(self.tap_delays, powers.tolist())),
                rms_delay_spread=self.rms_delay_spread,
            )
        return ChannelModel.selective(self.rms_delay_spread, self.n_taps, self.tap_spacing)

    def code_config(self) -> CodeConfig:
        return build_code_config(
            self.info_bits, self.crc_bits, self.coded_bits, self.code_seed, self.max_bp_iters
        )

    def receiver_config(self) -> ReceiverConfig:
        combiner = self.combiner
        if combiner == AUTO:
            # the autocorrelation combiner pays off for the two-pilot sparse
            # configuration, where collisions corrupt the channel-matrix model
            combiner = MMSE_RY if (self.scheme == ESOP and self.n_regions == 2) else MMSE_HHAT
        if combiner not in (MMSE_HHAT, MMSE_RY):
            raise ValueError(f"unknown combiner {combiner!r}")
        selective = self.selective_mode
        if selective == AUTO:
            sel = self.channel == SELECTIVE
        else:
            sel = _parse_bool(selective)
        return ReceiverConfig(
            p_fa=self.p_fa,
            combiner=combiner,
            pm_groups_freq=self.pm_groups_freq,
            pm_groups_time=self.pm_groups_time,
            pm_alternations=self.pm_alternations,
            max_sic_rounds=self.max_sic_rounds,
            selective_mode=sel,
            pairing_threshold=self.pairing_threshold,
            modulation=self.modulation,
        )


_SECTIONS = {
    "sim": (
        "scheme",
        "n_regions",
        "k_list",
        "snr_db_list",
        "trials",
        "base_seed",
        "workers",
        "output",
    ),
    "frame": ("n_prb", "carrier_freq", "bandwidth"),
    "pilots": ("pilot_energy",),
    "channel": (
        "channel",
        "rms_delay_spread",
        "n_taps",
        "tap_spacing",
        "tap_delays",
        "tap_powers",
        "n_antennas",
        "to_max",
        "fo_max",
    ),
    "phy": (
        "modulation",
        "info_bits",
        "crc_bits",
        "coded_bits",
        "code_seed",
        "max_bp_iters",
    ),
    "receiver": (
        "p_fa",
        "combiner",
        "pm_groups_freq",
        "pm_groups_time",
        "pm_alternations",
        "max_sic_rounds",
        "selective_mode",
        "pairing_threshold",
    ),
}

_FIELD_SECTION = {key: sec for sec, keys in _SECTIONS.items() for key in keys}
# [channel] kind = ... reads more naturally than channel = ...
_KEY_ALIASES = {("channel", "kind"): "channel"}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(name: str, text: str, py_type):
    text = text.strip()
    if py_type is int:
        return int(text)
    if py_type is float:
        return float(text)
    if py_type is str:
        return text
    # tuples: comma separated
    items = [s for s in (p.strip() for p in text.split(",")) if s]
    if name == "k_list":
        return tuple(int(s) for s in items)
    return tuple(float(s) for s in items)


def load_config(path_or_text: str, from_text: bool = False) -> SimConfig:
    """Load a SimConfig from an INI file (or raw text with from_text)."""
    parser = configparser.ConfigParser()
    if from_text:
        parser.read_string(path_or_text)
    else:
        with open(path_or_text) as fh:
            parser.read_file(fh)
    by_name = {f.name: f for f in fields(SimConfig)}
    updates = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            name = _KEY_ALIASES.get((section, key), key)
            if name not in by_name or _FIELD_SECTION.get(name) != section:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            f = by_name[name]
            base = SimConfig()
            py_type = type(getattr(base, name))
            updates[name] = _parse_value(name, raw, py_type)
    return replace(SimConfig(), **updates)


def dump_config(cfg: SimConfig) -> str:
    """Render a config as INI text (used for the provenance report)."""
    out = io.StringIO()
    for section, keys in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for key in keys:
            val = getattr(cfg, key)
            if isinstance(val, tuple):
                val = ",".join(f"{v:.10g}" if isinstance(v, float) else str(v) for v in val)
            out.write(f"{key} = {val}\n")
        out.write("\n")
    return out.getvalue()
