"""Time-frequency resource grid: pilot/data partition and serial symbol order."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

N_SYMBOLS_PER_SLOT = 14
SUBCARRIERS_PER_PRB = 12
SUBCARRIER_SPACING_HZ = 15e3
SLOT_DURATION_S = 1e-3
CP_LENGTH_S = 4.69e-6


class GridCoord(NamedTuple):
    subcarrier: int
    symbol: int


@dataclass(frozen=True)
class GridConfig:
    """One uplink slot: ``n_subcarriers`` x 14 OFDM symbols, two of which
    are reserved for pilots (overhead 2/14 = 1/7).

    ``pilot_symbols`` holds the reserved OFDM-symbol indices; with one pilot
    region both symbols form a single region, with two regions each symbol is
    its own region (early/late split for two independent pilot selections).
    """

    n_prb: int
    n_subcarriers: int
    n_symbols: int
    subcarrier_spacing: float
    slot_duration: float
    cp_length: float
    pilot_symbols: tuple[int, ...]
    n_pilot_regions: int

    @property
    def symbol_duration(self) -> float:
        # uniform symbol timing; CP-length variation across symbols ignored
        return self.slot_duration / self.n_symbols

    @property
    def n_data_res(self) -> int:
        return self.n_subcarriers * (self.n_symbols - len(self.pilot_symbols))

    @property
    def n_pilot_res(self) -> int:
        return self.n_subcarriers * len(self.pilot_symbols)

    def region_symbols(self, region: int) -> tuple[int, ...]:
        """OFDM symbols belonging to one pilot region."""
        if not 0 <= region < self.n_pilot_regions:
            raise ValueError(f"region {region} out of range")
        if self.n_pilot_regions == 1:
            return self.pilot_symbols
        return (self.pilot_symbols[region],)

    @property
    def n_pilot_res_per_region(self) -> int:
        return self.n_subcarriers * len(self.region_symbols(0))


def build_grid_config(n_prb: int, n_pilot_regions: int) -> GridConfig:
    """Standard 15 kHz / 1 ms slot grid with pilots on symbols {2,3}
    (single region) or {2,11} (two regions)."""
    if n_prb < 1:
        raise ValueError("n_prb must be >= 1")
    if n_pilot_regions not in (1, 2):
        raise ValueError("n_pilot_regions must be 1 or 2")
    pilot_symbols = (2, 3) if n_pilot_regions == 1 else (2, 11)
    return GridConfig(
        n_prb=n_prb,
        n_subcarriers=SUBCARRIERS_PER_PRB * n_prb,
        n_symbols=N_SYMBOLS_PER_SLOT,
        subcarrier_spacing=SUBCARRIER_SPACING_HZ,
        slot_duration=SLOT_DURATION_S,
        cp_length=CP_LENGTH_S,
        pilot_symbols=pilot_symbols,
        n_pilot_regions=n_pilot_regions,
    )


@lru_cache(maxsize=32)
def _data_re_arrays(grid: GridConfig) -> tuple[np.ndarray, np.ndarray]:
    """(subcarrier, symbol) index arrays of the data REs in serial order:
    frequency-major within each OFDM symbol, symbols ascending, pilot
    symbols skipped."""
    data_syms = [t for t in range(grid.n_symbols) if t not in grid.pilot_symbols]
    sym = np.repeat(data_syms, grid.n_subcarriers)
    sc = np.tile(np.arange(grid.n_subcarriers), len(data_syms))
    sc.setflags(write=False)
    sym.setflags(write=False)
    return sc, sym


@lru_cache(maxsize=32)
def _pilot_re_arrays(grid: GridConfig, region: int) -> tuple[np.ndarray, np.ndarray]:
    """(subcarrier, symbol) arrays of one region's pilot REs, same ordering
    convention as the data REs."""
    syms = grid.region_symbols(region)
    sym = np.repeat(syms, grid.n_subcarriers)
    sc = np.tile(np.arange(grid.n_subcarriers), len(syms))
    sc.setflags(write=False)
    sym.setflags(write=False)
    return sc, sym


def data_coords(grid: GridConfig) -> list[GridCoord]:
    """Data-RE coordinates in serial order; defines the index of every
    transmitted data symbol."""
    sc, sym = _data_re_arrays(grid)
    return [GridCoord(int(f), int(t)) for f, t in zip(sc, sym)]


def pilot_coords(grid: GridConfig, region: int) -> list[GridCoord]:
    """Pilot-RE coordinates of one region in canonical order."""
    sc, sym = _pilot_re_arrays(grid, region)
    return [GridCoord(int(f), int(t)) for f, t in zip(sc, sym)]
