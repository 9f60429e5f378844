"""Orthogonal pilot sets, autonomous pilot selection, and collision statistics.

Two constructions on the grid's pilot region(s):

* ``esop``: one pattern per pilot RE, a single non-zero entry each, so every
  pilot RE of the region is its own pilot (144 pilots on the 6-PRB grid).
* ``top``: DMRS-style comb patterns, 6 CDM groups spread by orthogonal cover
  codes (24 pilots single-region, 12 per region in two-region mode).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gfsim.frame import GridConfig, GridCoord, _pilot_re_arrays

ESOP = "esop"
TOP = "top"

# Walsh spreading over one 4-RE patch, entry order (f0t0, f1t0, f0t1, f1t1)
_OCC4 = np.array(
    [
        [1, 1, 1, 1],
        [1, -1, 1, -1],
        [1, 1, -1, -1],
        [1, -1, -1, 1],
    ],
    dtype=float,
)
_OCC2 = np.array([[1, 1], [1, -1]], dtype=float)


@dataclass
class PilotPattern:
    """One pilot: its non-zero REs within a pilot region.

    ``re_idx``/``values`` mirror ``entries`` as arrays indexing the region's
    canonical pilot-RE ordering; entries are patch-major so that reshaping by
    ``patch_size`` recovers the per-PRB despreading patches.
    """

    id: int
    region: int
    entries: list[tuple[GridCoord, complex]]
    re_idx: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    patch_size: int = 1

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2))

    @property
    def n_patches(self) -> int:
        return len(self.entries) // self.patch_size


@dataclass
class PilotSet:
    scheme: str
    grid: GridConfig
    patterns: tuple[tuple[PilotPattern, ...], ...]  # per region
    N_per_region: int
    pilot_energy: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_regions(self) -> int:
        return len(self.patterns)

    def stacked_entries(self, region: int) -> tuple[np.ndarray, np.ndarray, int]:
        """(re_idx [N x E], values [N x E], patch_size) for vectorized
        despreading; all patterns of a scheme share one entry count."""
        key = ("stack", region)
        if key not in self._cache:
            pats = self.patterns[region]
            idx = np.stack([p.re_idx for p in pats])
            vals = np.stack([p.values for p in pats])
            self._cache[key] = (idx, vals, pats[0].patch_size)
        return self._cache[key]

    def pattern_matrix(self, region: int) -> np.ndarray:
        """Dense [N x pilot REs] matrix of the region's pilots (test oracle)."""
        n_res = self.grid.n_pilot_res_per_region
        mat = np.zeros((self.N_per_region, n_res), dtype=complex)
        for pat in self.patterns[region]:
            mat[pat.id, pat.re_idx] = pat.values
        return mat


def _re_lookup(grid: GridConfig, region: int) -> dict[tuple[int, int], int]:
    sc, sym = _pilot_re_arrays(grid, region)
    return {(int(f), int(t)): i for i, (f, t) in enumerate(zip(sc, sym))}


def _make_pattern(
    pid: int,
    region: int,
    coords: list[GridCoord],
    values: np.ndarray,
    lookup: dict[tuple[int, int], int],
    patch_size: int,
) -> PilotPattern:
    re_idx = np.array([lookup[(c.subcarrier, c.symbol)] for c in coords], dtype=np.int64)
    return PilotPattern(
        id=pid,
        region=region,
        entries=[(c, complex(v)) for c, v in zip(coords, values)],
        re_idx=re_idx,
        values=np.asarray(values, dtype=complex),
        patch_size=patch_size,
    )


def build_pilot_set(scheme: str, grid: GridConfig, pilot_energy: float = 1.0) -> PilotSet:
    """Construct the orthogonal pilot set of a scheme on a grid.

    Every pattern is normalized to total energy ``pilot_energy``. ``esop``
    patterns have disjoint single-RE supports and are exactly orthogonal;
    ``top`` patterns within a CDM group share REs and are separated by
    orthogonal cover codes.
    """
    if scheme not in (ESOP, TOP):
        raise ValueError(f"unknown scheme {scheme!r}")
    if grid.n_subcarriers % 12 != 0:
        raise ValueError("pilot construction requires a whole number of PRBs")

    regions: list[tuple[PilotPattern, ...]] = []
    for region in range(grid.n_pilot_regions):
        syms = grid.region_symbols(region)
        lookup = _re_lookup(grid, region)
        pats: list[PilotPattern] = []
        if scheme == ESOP:
            amp = np.sqrt(pilot_energy)
            pid = 0
            for t in syms:
                for f in range(grid.n_subcarriers):
                    pats.append(
                        _make_pattern(
                            pid, region, [GridCoord(f, t)], np.array([amp]), lookup, 1
                        )
                    )
                    pid += 1
        else:
            occ = _OCC4 if len(syms) == 2 else _OCC2
            patch_size = occ.shape[1]
            amp = np.sqrt(pilot_energy / (patch_size * grid.n_prb))
            pid = 0
            for g in range(6):  # CDM groups, adjacent-subcarrier pair per PRB
                for code in occ:
                    coords: list[GridCoord] = []
                    values: list[float] = []
                    for prb in range(grid.n_prb):
                        base = 12 * prb + 2 * g
                        for ci, (t, df) in enumerate(
                            (t, df) for t in syms for df in (0, 1)
                        ):
                            coords.append(GridCoord(base + df, t))
                            values.append(amp * code[ci])
                    pats.append(
                        _make_pattern(pid, region, coords, np.array(values), lookup, patch_size)
                    )
                    pid += 1
        regions.append(tuple(pats))

    return PilotSet(
        scheme=scheme,
        grid=grid,
        patterns=tuple(regions),
        N_per_region=len(regions[0]),
        pilot_energy=pilot_energy,
    )


@dataclass
class PilotAssignment:
    """Autonomous selections of K active UEs: one pilot id per region each."""

    ids: np.ndarray  # [K x n_regions] int

    @property
    def n_ues(self) -> int:
        return self.ids.shape[0]

    def collided_mask(self) -> np.ndarray:
        """Per UE: True when every one of its pilots is also chosen by
        another UE (the per-UE decoding-failure rule of the collision model)."""
        k, n_regions = self.ids.shape
        dup = np.zeros((k, n_regions), dtype=bool)
        for r in range(n_regions):
            counts = np.bincount(self.ids[:, r])
            dup[:, r] = counts[self.ids[:, r]] >= 2
        return dup.all(axis=1)


def _draw_ids(
    rng: np.random.Generator, trials: int, K: int, n_regions: int, N: int
) -> np.ndarray:
    return rng.integers(0, N, size=(trials, K, n_regions), dtype=np.int64)


def select_pilots(rng: np.random.Generator, K: int, pset: PilotSet) -> PilotAssignment:
    """Each UE draws one uniform pilot id per region, independently."""
    if K < 1:
        raise ValueError("K must be >= 1")
    ids = _draw_ids(rng, 1, K, pset.n_regions, pset.N_per_region)[0]
    return PilotAssignment(ids=ids)


def collision_prob_analytic(N_per_region: int, K: int, n_regions: int) -> float:
    """Expected fraction of UEs whose every pilot is chosen by another UE.

    With independent uniform selection the per-region collision probability is
    c = 1 - (1 - 1/N)^(K-1); regions are independent, so the per-UE failure
    probability is c^n_regions.
    """
    if N_per_region < 1 or K < 1 or n_regions not in (1, 2):
        raise ValueError("invalid arguments")
    c = 1.0 - (1.0 - 1.0 / N_per_region) ** (K - 1)
    return c**n_regions


def collision_prob_mc(
    rng: np.random.Generator,
    N_per_region: int,
    K: int,
    n_regions: int,
    trials: int,
    chunk: int = 20_000,
) -> float:
    """Monte Carlo estimate of the per-UE collision probability.

    Draws are identical in law to :func:`select_pilots` but batched across
    trials so large calibration runs stay fast.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    failed = 0
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        ids = _draw_ids(rng, t, K, n_regions, N_per_region)
        # global bincount over (trial, region) blocks, then gather
        offs = (
            np.arange(t, dtype=np.int64)[:, None, None] * n_regions
            + np.arange(n_regions, dtype=np.int64)[None, None, :]
        ) * N_per_region
        flat = (ids + offs).ravel()
        counts = np.bincount(flat, minlength=t * n_regions * N_per_region)
        dup = counts[flat].reshape(t, K, n_regions) >= 2
        failed += int(dup.all(axis=2).sum())
        done += t
    return failed / (trials * K)
