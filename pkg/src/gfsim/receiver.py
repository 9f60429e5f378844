"""Multi-user receiver: detection, spatial combining, blind equalization, SIC.

Per SIC round the receiver correlates the residual pilot observations with
every pilot, thresholds the resulting energies, spatially combines the data
for all detected candidates jointly, then runs a per-candidate equalize /
demap / decode chain. CRC-verified users are re-estimated from their own data
symbols (least squares per subchannel) and subtracted from both the pilot and
data observations, after which detection runs again on the residual; a pilot
masked by a collision can re-emerge once its partner is removed.

For sparse single-RE pilots the chain distorts: the spatial estimate holds
only at one subcarrier, so residual rotations across frequency (time offset,
channel selectivity) and time (carrier offset) are estimated blindly from the
constellation geometry of the combined data symbols and removed, with the
pilot position acting as the absolute phase reference. Dense comb pilots
instead get interpolated subband estimates and per-subcarrier combining, and
skip the blind stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainccinv

from gfsim.channel import _impairment_phases
from gfsim.frame import GridConfig, GridCoord, _data_re_arrays
from gfsim.phy import BPSK, CodeConfig, crc_check, demap_llr, ldpc_decode_batch, ldpc_encode, modulate
from gfsim.pilots import ESOP, PilotSet

MMSE_HHAT = "mmse_hhat"  # weights from the estimated channel matrix
MMSE_RY = "mmse_ry"  # weights from the sample autocorrelation of the data


@dataclass
class ReceiverConfig:
    p_fa: float = 1e-3
    combiner: str = MMSE_HHAT
    pm_groups_freq: int = 24
    pm_groups_time: int = 4
    pm_alternations: int = 2
    max_sic_rounds: int = 8
    selective_mode: bool = False
    pairing_threshold: float = 0.7
    modulation: str = BPSK


@dataclass
class DetectionEntry:
    pilot_id: int
    region: int
    hhat: np.ndarray  # [M]
    energy: float
    patch_ests: np.ndarray = field(repr=False, default=None)  # [P x M]


@dataclass
class DetectionResult:
    entries: list[DetectionEntry]

    @property
    def q(self) -> int:
        return len(self.entries)


@dataclass
class DecodedUser:
    payload: np.ndarray  # info bits, CRC stripped
    pilot_ids: list[tuple[int, int]]  # (region, pilot id)
    h_refined: np.ndarray  # [M x G] per-subchannel channel (impairments folded in)
    slope_freq: float  # estimated phase ramp, rad per subcarrier
    slope_time: float  # estimated phase ramp, rad per OFDM symbol
    sic_round: int
    x_rot: np.ndarray = field(repr=False, default=None)  # re-encoded rotated symbols


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------


def estimate_spatial_channels(
    Y_p: np.ndarray, pset: PilotSet, region: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Correlate one region's pilot observation with every pilot.

    Returns (hhat [N x M], patch_ests [N x P x M], energies [N]).  ``hhat``
    is the patch-averaged spatial estimate (for single-entry sparse pilots it
    is exactly the scaled pilot-RE column); ``energies`` is the mean
    per-patch energy, the detection statistic.
    """
    idx, vals, patch_size = pset.stacked_entries(region)
    n, e = idx.shape
    n_patches = e // patch_size
    patch_energy = float(np.sum(np.abs(vals[0]) ** 2)) / n_patches
    raw = Y_p[:, idx] * np.conj(vals)[None, :, :]  # [M x N x E]
    patches = raw.reshape(raw.shape[0], n, n_patches, patch_size).sum(axis=3)
    patches /= patch_energy  # [M x N x P]
    hhat = patches.mean(axis=2).T  # [N x M]
    energies = np.mean(np.sum(np.abs(patches) ** 2, axis=0), axis=1)  # [N]
    return hhat, np.transpose(patches, (1, 2, 0)), energies


def detection_threshold(
    noise_var: float, shape_m: int, pilot_norm_sq: float, p_fa: float
) -> float:
    """Energy threshold with false-alarm probability ``p_fa`` under noise.

    The noise-only detection statistic is Gamma-distributed with shape
    ``shape_m`` (antennas, times despreading patches when the statistic
    averages per-patch energies) and scale ``noise_var / pilot_norm_sq``.
    """
    if noise_var < 0 or pilot_norm_sq <= 0 or not 0 < p_fa < 1:
        raise ValueError("invalid threshold arguments")
    return float(noise_var / pilot_norm_sq * gammainccinv(shape_m, p_fa))


def detect_active(
    hhat: np.ndarray,
    energies: np.ndarray,
    threshold: float,
    region: int,
    patch_ests: np.ndarray | None = None,
) -> DetectionResult:
    """Keep pilots whose energy clears the threshold, strongest first."""
    keep = np.nonzero(energies > threshold)[0]
    order = keep[np.argsort(-energies[keep], kind="stable")]
    entries = [
        DetectionEntry(
            pilot_id=int(i),
            region=region,
            hhat=hhat[i],
            energy=float(energies[i]),
            patch_ests=None if patch_ests is None else patch_ests[i],
        )
        for i in order
    ]
    return DetectionResult(entries=entries)


# ---------------------------------------------------------------------------
# Combining
# ---------------------------------------------------------------------------


def mmse_weights(Hhat: np.ndarray, noise_var: float) -> np.ndarray:
    """Regularized spatial MMSE rows w_q = h_q^H (H H^H + noise I)^-1,
    computed by a symmetric solve."""
    M = Hhat.shape[0]
    A = Hhat @ Hhat.conj().T + noise_var * np.eye(M)
    W = np.linalg.solve(A, Hhat).conj().T  # [Q x M]
    if not np.all(np.isfinite(W)):
        raise FloatingPointError("non-finite MMSE weights")
    return W


def ry_weights(Y_d: np.ndarray, Hhat: np.ndarray) -> np.ndarray:
    """Combiner rows w_q = h_q^H R^-1 with R the diagonally loaded sample
    autocorrelation of the received data; robust when the channel matrix
    misses collided users."""
    M, L = Y_d.shape
    if L < M:
        raise ValueError("need at least as many symbols as antennas")
    R = Y_d @ Y_d.conj().T / L
    R += (1e-6 * np.trace(R).real / M) * np.eye(M)
    try:
        W = np.linalg.solve(R, Hhat).conj().T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular data autocorrelation: {exc}") from exc
    return W


def combine(W: np.ndarray, Y_d: np.ndarray) -> np.ndarray:
    return W @ Y_d


# ---------------------------------------------------------------------------
# Blind rotation estimation (partition matching)
# ---------------------------------------------------------------------------


def _mod_order(modulation: str) -> int:
    return 2 if modulation == BPSK else 4


def wrap_angle(x: np.ndarray | float, m: int):
    """Wrap into [-pi/m, pi/m)."""
    half = np.pi / m
    return (np.asarray(x) + half) % (2 * half) - half


def pm_group_rotation(symbols: np.ndarray, modulation: str = BPSK) -> float:
    """Blind average rotation of a symbol group via the m-th power method:
    theta = arg(sum s^m) / m, ambiguous mod pi (BPSK) or pi/2 (QPSK).
    Returns NaN when the power sum vanishes exactly."""
    m = _mod_order(modulation)
    z = np.sum(np.asarray(symbols) ** m)
    if z == 0:
        return float("nan")
    return float(wrap_angle(np.angle(z) / m, m))


def estimate_slope(
    symbols: np.ndarray,
    positions: np.ndarray,
    n_groups: int,
    modulation: str = BPSK,
) -> float:
    """Phase ramp per axis step from per-group rotations.

    The axis (subcarrier or OFDM-symbol index per combined symbol) is split
    into ``n_groups`` contiguous groups of equal position count; adjacent
    groups' rotation differences are wrapped and averaged, then normalized by
    the mean group-center spacing. Using center spacing keeps the estimate
    unbiased when the axis has gaps (the pilot symbols interrupt the time
    axis).
    """
    uniq = np.unique(positions)
    if n_groups < 2 or uniq.size % n_groups != 0:
        raise ValueError("group count must be >= 2 and divide the axis length")
    m = _mod_order(modulation)
    per = uniq.size // n_groups
    bounds = uniq[per - 1 :: per]  # last position of each group
    group_of = np.searchsorted(bounds, positions)
    thetas = np.empty(n_groups)
    centers = np.empty(n_groups)
    for g in range(n_groups):
        mask = group_of == g
        if not mask.any():
            return float("nan")
        thetas[g] = pm_group_rotation(symbols[mask], modulation)
        centers[g] = positions[mask].mean()
    if np.any(np.isnan(thetas)):
        return float("nan")
    deltas = wrap_angle(np.diff(thetas), m)
    return float(np.mean(deltas) / np.mean(np.diff(centers)))


@dataclass
class PmResult:
    symbols: np.ndarray  # equalized, unit nominal gain
    group_gain: np.ndarray  # complex gain removed per frequency subchannel
    group_noise_var: np.ndarray  # residual variance per subchannel (pre-division)
    llr_noise_var: np.ndarray  # per-symbol variance for unit-gain demapping
    slope_freq: float
    slope_time: float
    group_of_symbol: np.ndarray
    degenerate: bool = False


def pm_equalize(
    symbols: np.ndarray,
    grid: GridConfig,
    cfg: ReceiverConfig,
    anchor: GridCoord,
    anchor_gain: complex,
) -> PmResult:
    """Blind equalization of combined data symbols.

    Alternates frequency-ramp (time offset) and time-ramp (carrier offset)
    estimation/derotation; corrections are referenced to ``anchor`` so the
    residual rotation at the pilot position is zero, which also pins the
    constellation's absolute sign. ``anchor_gain`` is the combined channel
    gain at the anchor (w . h_hat), divided out first.

    With ``selective_mode`` the band is split into ``pm_groups_freq``
    subchannels and a complex gain per subchannel (mean magnitude, blind
    rotation unwrapped outward from the anchor subchannel) is estimated and
    removed; otherwise a single global gain is used. The residual variance
    per subchannel feeds the demapper; a non-positive variance estimate is
    floored at 10% of the mean symbol power.
    """
    data_sc, data_sym = _data_re_arrays(grid)
    m = _mod_order(cfg.modulation)
    s = symbols / anchor_gain
    slope_f = 0.0
    slope_t = 0.0
    degenerate = False
    for _ in range(cfg.pm_alternations):
        sf = estimate_slope(s, data_sc, cfg.pm_groups_freq, cfg.modulation)
        if np.isfinite(sf):
            s = s * np.exp(-1j * sf * (data_sc - anchor.subcarrier))
            slope_f += sf
        else:
            degenerate = True
        st = estimate_slope(s, data_sym, cfg.pm_groups_time, cfg.modulation)
        if np.isfinite(st):
            s = s * np.exp(-1j * st * (data_sym - anchor.symbol))
            slope_t += st
        else:
            degenerate = True

    n_sub = cfg.pm_groups_freq if cfg.selective_mode else 1
    width = grid.n_subcarriers // n_sub
    group_of = data_sc // width
    a = np.empty(n_sub)
    theta = np.empty(n_sub)
    power = np.empty(n_sub)
    for g in range(n_sub):
        sg = s[group_of == g]
        a[g] = np.mean(np.abs(sg))
        power[g] = np.mean(np.abs(sg) ** 2)
        theta[g] = pm_group_rotation(sg, cfg.modulation)
    if np.any(np.isnan(theta)):
        degenerate = True
        theta = np.nan_to_num(theta)

    # unwrap subchannel phases outward from the anchor's subchannel
    anchor_g = min(anchor.subcarrier // width, n_sub - 1)
    unw = np.array(theta)
    for g in range(anchor_g + 1, n_sub):
        unw[g] = unw[g - 1] + wrap_angle(theta[g] - theta[g - 1], m)
    for g in range(anchor_g - 1, -1, -1):
        unw[g] = unw[g + 1] + wrap_angle(theta[g] - theta[g + 1], m)

    noise = power - a**2
    floor = 0.1 * power
    noise = np.where(noise > floor, noise, floor)
    gain = a * np.exp(1j * unw)
    safe = np.where(a > 0, gain, 1.0)
    eq = s / safe[group_of]
    llr_var = (noise / np.where(a > 0, a**2, 1.0))[group_of]
    return PmResult(
        symbols=eq,
        group_gain=gain,
        group_noise_var=noise,
        llr_noise_var=llr_var,
        slope_freq=slope_f,
        slope_time=slope_t,
        group_of_symbol=group_of,
        degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# Dense-pilot subband estimation
# ---------------------------------------------------------------------------


def _interp_extrap(x: np.ndarray, xp: np.ndarray, fp: np.ndarray) -> np.ndarray:
    """np.interp with linear extrapolation beyond the sample range."""
    y = np.interp(x, xp, fp)
    if xp.size >= 2:
        lo = x < xp[0]
        hi = x > xp[-1]
        if lo.any():
            slope = (fp[1] - fp[0]) / (xp[1] - xp[0])
            y[lo] = fp[0] + slope * (x[lo] - xp[0])
        if hi.any():
            slope = (fp[-1] - fp[-2]) / (xp[-1] - xp[-2])
            y[hi] = fp[-1] + slope * (x[hi] - xp[-1])
    return y


def estimate_top_subband(
    patch_ests: np.ndarray, pattern, grid: GridConfig
) -> np.ndarray:
    """Per-subcarrier channel for a comb pilot: per-PRB despread estimates
    placed at their patch-center subcarriers, linearly interpolated and
    extrapolated across the band. A time-offset phase ramp is tracked by the
    interpolation itself, so no blind compensation runs on this path."""
    n_patches, M = patch_ests.shape
    patch_size = pattern.patch_size
    centers = np.empty(n_patches)
    for p in range(n_patches):
        scs = [c.subcarrier for c, _ in pattern.entries[p * patch_size : (p + 1) * patch_size]]
        centers[p] = np.mean(scs)
    x = np.arange(grid.n_subcarriers, dtype=float)
    H = np.empty((M, grid.n_subcarriers), dtype=complex)
    for ant in range(M):
        H[ant] = _interp_extrap(x, centers, patch_ests[:, ant].real) + 1j * _interp_extrap(
            x, centers, patch_ests[:, ant].imag
        )
    return H


# ---------------------------------------------------------------------------
# Data-assisted refinement and cancellation
# ---------------------------------------------------------------------------


def data_assisted_ls(
    Y_d: np.ndarray, x_rot: np.ndarray, n_sub: int, grid: GridConfig
) -> np.ndarray:
    """Least-squares channel per frequency subchannel from known (re-encoded,
    re-rotated) data symbols; absorbs channel and impairments jointly."""
    data_sc, _ = _data_re_arrays(grid)
    width = grid.n_subcarriers // n_sub
    group_of = data_sc // width
    M = Y_d.shape[0]
    H = np.zeros((M, n_sub), dtype=complex)
    for g in range(n_sub):
        mask = group_of == g
        den = float(np.sum(np.abs(x_rot[mask]) ** 2))
        if den == 0.0:
            continue
        H[:, g] = (Y_d[:, mask] @ np.conj(x_rot[mask])) / den
    return H


def reconstruct_and_cancel(
    Y_p: list[np.ndarray],
    Y_d: np.ndarray,
    user: DecodedUser,
    pset: PilotSet,
) -> None:
    """Subtract a decoded user's reconstructed contribution in place from the
    data observation and from every pilot RE it owns."""
    grid = pset.grid
    data_sc, _ = _data_re_arrays(grid)
    n_sub = user.h_refined.shape[1]
    width = grid.n_subcarriers // n_sub
    Y_d -= user.h_refined[:, data_sc // width] * user.x_rot[None, :]
    for region, pid in user.pilot_ids:
        pat = pset.patterns[region][pid]
        sc = np.array([c.subcarrier for c, _ in pat.entries])
        sym = np.array([c.symbol for c, _ in pat.entries])
        phase = np.exp(1j * (user.slope_freq * sc + user.slope_time * sym))
        vals = pat.values * phase
        Y_p[region][:, pat.re_idx] -= user.h_refined[:, sc // width] * vals[None, :]


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


def _candidate_anchor(pset: PilotSet, entry: DetectionEntry) -> GridCoord:
    pat = pset.patterns[entry.region][entry.pilot_id]
    if len(pat.entries) == 1:
        return pat.entries[0][0]
    # dense pilot: band center on the region's first pilot symbol (unused,
    # the comb path skips blind equalization)
    return GridCoord(pset.grid.n_subcarriers // 2, pat.entries[0][0].symbol)


def run_receiver(
    Y_p: list[np.ndarray],
    Y_d: np.ndarray,
    pset: PilotSet,
    cfg: ReceiverConfig,
    noise_var: float,
    code_cfg: CodeConfig,
) -> tuple[list[DecodedUser], dict]:
    """Iterative detection / combining / decode / cancellation.

    Returns the decoded users (one entry per distinct payload) and a
    diagnostics dict with per-round counters, the set of detected pilots, and
    residual energies.
    """
    grid = pset.grid
    data_sc, data_sym = _data_re_arrays(grid)
    M = Y_d.shape[0]
    Yp = [y.copy() for y in Y_p]
    Yd = Y_d.copy()
    n_sub_ls = cfg.pm_groups_freq if cfg.selective_mode else 1

    decoded: list[DecodedUser] = []
    seen_payloads: set[bytes] = set()
    detected_ever: set[tuple[int, int]] = set()
    rounds: list[dict] = []

    for rnd in range(cfg.max_sic_rounds):
        # (1) detection on the residual pilot observations, both regions
        entries: list[DetectionEntry] = []
        for region in range(pset.n_regions):
            hhat, patch_ests, energies = estimate_spatial_channels(Yp[region], pset, region)
            _, vals, patch_size = pset.stacked_entries(region)
            n_patches = vals.shape[1] // patch_size
            pnorm = float(np.sum(np.abs(vals[0]) ** 2))
            thr = detection_threshold(noise_var, n_patches * M, pnorm, cfg.p_fa)
            det = detect_active(hhat, energies, thr, region, patch_ests)
            entries.extend(det.entries)
        entries.sort(key=lambda e: -e.energy)
        detected_ever.update((e.region, e.pilot_id) for e in entries)
        if not entries:
            rounds.append({"detected": 0, "new_decoded": 0, "duplicates": 0})
            break

        # (2) joint combining over all candidates
        Q = len(entries)
        Hhat = np.stack([e.hhat for e in entries], axis=1)  # [M x Q]
        llrs = np.zeros((Q, grid.n_data_res))
        pm_results: list[PmResult | None] = [None] * Q
        if pset.scheme == ESOP:
            if cfg.combiner == MMSE_RY:
                W = ry_weights(Yd, Hhat)
            else:
                W = mmse_weights(Hhat, noise_var)
            S = combine(W, Yd)
            for q, entry in enumerate(entries):
                anchor = _candidate_anchor(pset, entry)
                anchor_gain = complex(W[q] @ entry.hhat)
                if anchor_gain == 0:
                    continue
                pm = pm_equalize(S[q], grid, cfg, anchor, anchor_gain)
                pm_results[q] = pm
                llrs[q] = demap_llr(pm.symbols, 1.0, pm.llr_noise_var, cfg.modulation)
        else:
            # comb pilots: interpolated subband estimates, per-subcarrier MMSE
            Hs = np.stack(
                [
                    estimate_top_subband(
                        e.patch_ests, pset.patterns[e.region][e.pilot_id], grid
                    )
                    for e in entries
                ]
            )  # [Q x M x J]
            A = np.einsum("qmj,qnj->jmn", Hs, Hs.conj()) + noise_var * np.eye(M)
            X = np.linalg.solve(A, np.transpose(Hs, (2, 1, 0)))  # [J x M x Q]
            c = np.einsum("jmq,qmj->jq", X.conj(), Hs).real  # combined gain per sc
            v = np.maximum(c * (1.0 - c), 1e-12)  # post-combining irrelevant+noise power
            Wd = np.transpose(X.conj(), (0, 2, 1))[data_sc]  # [L x Q x M]
            S = np.einsum("lqm,ml->ql", Wd, Yd)
            gains = c.T[:, data_sc]  # [Q x L]
            variances = v.T[:, data_sc]
            llrs = demap_llr(S, gains, variances, cfg.modulation)

        finite = np.all(np.isfinite(llrs), axis=1)
        llrs[~finite] = 0.0
        bits, _conv = ldpc_decode_batch(code_cfg, llrs)

        # (3) CRC gate, refinement, cancellation in energy order
        new_decoded = 0
        duplicates = 0
        claimed_partners: set[tuple[int, int]] = set()
        for q, entry in enumerate(entries):
            if not finite[q] or not crc_check(bits[q]):
                continue
            payload = bits[q][: code_cfg.info_bits]
            key = payload.tobytes()
            if key in seen_payloads:
                duplicates += 1
                continue
            cw = ldpc_encode(code_cfg, bits[q])
            s_ref = modulate(cw, cfg.modulation)
            pm = pm_results[q]
            sf = pm.slope_freq if pm is not None else 0.0
            st = pm.slope_time if pm is not None else 0.0
            x_rot = s_ref * np.exp(1j * (sf * data_sc + st * data_sym))
            h_ref = data_assisted_ls(Yd, x_rot, n_sub_ls, grid)
            pilot_ids = [(entry.region, entry.pilot_id)]
            if pset.n_regions == 2:
                partner = _find_partner(
                    entries, entry, h_ref, pset, cfg.pairing_threshold, claimed_partners
                )
                if partner is not None:
                    pilot_ids.append(partner)
                    claimed_partners.add(partner)
            user = DecodedUser(
                payload=payload,
                pilot_ids=pilot_ids,
                h_refined=h_ref,
                slope_freq=sf,
                slope_time=st,
                sic_round=rnd,
                x_rot=x_rot,
            )
            reconstruct_and_cancel(Yp, Yd, user, pset)
            decoded.append(user)
            seen_payloads.add(key)
            new_decoded += 1

        rounds.append(
            {
                "detected": Q,
                "new_decoded": new_decoded,
                "duplicates": duplicates,
                "residual_pilot_energy": float(sum(np.sum(np.abs(y) ** 2) for y in Yp)),
                "residual_data_energy": float(np.sum(np.abs(Yd) ** 2)),
            }
        )
        if new_decoded == 0:
            break

    diagnostics = {
        "rounds": rounds,
        "n_rounds": len(rounds),
        "detected_pilots": detected_ever,
        "residual_pilot_energy": float(sum(np.sum(np.abs(y) ** 2) for y in Yp)),
        "residual_data_energy": float(np.sum(np.abs(Yd) ** 2)),
    }
    return decoded, diagnostics


def _find_partner(
    entries: list[DetectionEntry],
    entry: DetectionEntry,
    h_ref: np.ndarray,
    pset: PilotSet,
    threshold: float,
    claimed: set[tuple[int, int]],
) -> tuple[int, int] | None:
    """Pick the detected pilot in the other region whose spatial estimate
    best matches the refined channel (normalized correlation above the
    pairing threshold)."""
    other = 1 - entry.region
    best: tuple[int, int] | None = None
    best_corr = threshold
    width = pset.grid.n_subcarriers // h_ref.shape[1]
    for cand in entries:
        if cand.region != other or (cand.region, cand.pilot_id) in claimed:
            continue
        pat = pset.patterns[cand.region][cand.pilot_id]
        sc = pat.entries[0][0].subcarrier
        href_col = h_ref[:, min(sc // width, h_ref.shape[1] - 1)]
        denom = np.linalg.norm(cand.hhat) * np.linalg.norm(href_col)
        if denom == 0:
            continue
        corr = float(np.abs(np.vdot(cand.hhat, href_col)) / denom)
        if corr > best_corr:
            best_corr = corr
            best = (cand.region, cand.pilot_id)
    return best
