"""Bit-level chain: CRC-16, a seeded LDPC code, and BPSK/QPSK mapping.

The code is a reproducible Gallager-style construction (column weight 3,
near-regular row weights, 4-cycle repair) at rate 336/864. Decoding is
sum-product belief propagation, vectorized over a batch of codewords with
an active set that shrinks as codewords converge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

DEFAULT_INFO_BITS = 320
DEFAULT_CRC_BITS = 16
DEFAULT_CODED_BITS = 864
DEFAULT_CODE_SEED = 7
DEFAULT_MAX_BP_ITERS = 50

BPSK = "bpsk"
QPSK = "qpsk"

# ---------------------------------------------------------------------------
# CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, xorout 0
# ---------------------------------------------------------------------------

_CRC_POLY = 0x1021


def _crc_table() -> np.ndarray:
    table = np.zeros(256, dtype=np.uint16)
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ _CRC_POLY) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
        table[byte] = crc
    return table


_CRC_TABLE = _crc_table()


def crc16(data: bytes | np.ndarray) -> int:
    """CRC over bytes; check value: crc16(b"123456789") == 0x29B1."""
    crc = 0xFFFF
    for b in np.frombuffer(bytes(data), dtype=np.uint8):
        crc = ((crc << 8) & 0xFFFF) ^ int(_CRC_TABLE[((crc >> 8) ^ b) & 0xFF])
    return crc


def crc_attach(payload: np.ndarray) -> np.ndarray:
    """Append the 16-bit CRC of a payload (bit array, length multiple of 8)."""
    payload = np.asarray(payload, dtype=np.uint8)
    if payload.ndim != 1 or payload.size % 8 != 0:
        raise ValueError("payload must be a flat bit array with length a multiple of 8")
    crc = crc16(np.packbits(payload).tobytes())
    crc_bits = (crc >> np.arange(15, -1, -1)) & 1
    return np.concatenate([payload, crc_bits.astype(np.uint8)])


def crc_check(bits: np.ndarray) -> bool:
    """True when the trailing 16 bits match the CRC of the leading bits."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 1 or bits.size <= 16 or (bits.size - 16) % 8 != 0:
        raise ValueError("expected payload+16 CRC bits, payload a multiple of 8")
    payload, tail = bits[:-16], bits[-16:]
    crc = crc16(np.packbits(payload).tobytes())
    expect = (crc >> np.arange(15, -1, -1)) & 1
    return bool(np.array_equal(tail, expect))


# ---------------------------------------------------------------------------
# LDPC construction
# ---------------------------------------------------------------------------


@dataclass
class CodeConfig:
    """Code parameters plus the precomputed structures used by the hot paths.

    ``H`` is kept as edge lists sorted two ways (by check row and by variable
    column) so BP updates are pure reduceat/gather operations; ``enc_matrix``
    maps info bits to the parity positions of a systematic codeword.
    """

    info_bits: int
    crc_bits: int
    coded_bits: int
    seed: int
    max_bp_iters: int
    # edge structure, row-major order
    edge_col: np.ndarray = field(repr=False)
    edge_row: np.ndarray = field(repr=False)
    row_starts: np.ndarray = field(repr=False)
    # permutation taking row-major edges to column-major order
    to_col_order: np.ndarray = field(repr=False)
    col_starts: np.ndarray = field(repr=False)
    # systematic encoding
    info_cols: np.ndarray = field(repr=False)
    pivot_cols: np.ndarray = field(repr=False)
    enc_matrix: np.ndarray = field(repr=False)  # [n_checks x k] uint8

    @property
    def k(self) -> int:
        return self.info_bits + self.crc_bits

    @property
    def n_checks(self) -> int:
        return self.coded_bits - self.k

    @property
    def rate(self) -> float:
        return self.k / self.coded_bits

    def parity_check_matrix(self) -> np.ndarray:
        H = np.zeros((self.n_checks, self.coded_bits), dtype=np.uint8)
        H[self.edge_row, self.edge_col] = 1
        return H

    def parity_rows(self) -> list[list[int]]:
        """Row-wise column indices, the dump format for external checks."""
        rows: list[list[int]] = [[] for _ in range(self.n_checks)]
        for r, c in zip(self.edge_row, self.edge_col):
            rows[int(r)].append(int(c))
        return rows


def _gf2_row_reduce(H: np.ndarray) -> tuple[int, list[int], np.ndarray]:
    """In-place-free RREF over GF(2); returns (rank, pivot columns, rref)."""
    H = H.copy()
    m, n = H.shape
    pivots: list[int] = []
    r = 0
    for c in range(n):
        rows = np.nonzero(H[r:, c])[0]
        if rows.size == 0:
            continue
        pr = r + rows[0]
        if pr != r:
            H[[r, pr]] = H[[pr, r]]
        mask = H[:, c] == 1
        mask[r] = False
        H[mask] ^= H[r]
        pivots.append(c)
        r += 1
        if r == m:
            break
    return r, pivots, H


def _assign_columns(rng: np.random.Generator, n: int, m: int, wc: int) -> np.ndarray:
    """Columns x wc matrix of check-row indices, near-regular row weights,
    no repeated row within a column."""
    n_edges = n * wc
    base, extra = divmod(n_edges, m)
    weights = np.full(m, base, dtype=int)
    weights[rng.permutation(m)[:extra]] += 1
    slots = np.repeat(np.arange(m), weights)
    rng.shuffle(slots)
    cols = slots.reshape(n, wc).copy()
    for c in range(n):
        guard = 0
        while len(set(cols[c])) < wc:
            j = int(rng.integers(0, n))
            a, b = int(rng.integers(0, wc)), int(rng.integers(0, wc))
            cols[c, a], cols[j, b] = cols[j, b], cols[c, a]
            guard += 1
            if guard > 10_000:
                raise RuntimeError("edge assignment failed to de-duplicate")
    return cols


def _break_four_cycles(rng: np.random.Generator, cols: np.ndarray, max_passes: int = 40) -> bool:
    """Swap edges between columns until no two columns share two rows."""
    n, wc = cols.shape
    for _ in range(max_passes):
        seen: dict[tuple[int, int], int] = {}
        offenders: list[int] = []
        for c in range(n):
            rs = sorted(cols[c])
            for i in range(wc):
                for j in range(i + 1, wc):
                    key = (rs[i], rs[j])
                    if key in seen and seen[key] != c:
                        offenders.append(c)
                    else:
                        seen[key] = c
        if not offenders:
            return True
        for c in set(offenders):
            for _ in range(200):
                j = int(rng.integers(0, n))
                a, b = int(rng.integers(0, wc)), int(rng.integers(0, wc))
                ra, rb = cols[c, a], cols[j, b]
                if rb in cols[c] or ra in cols[j]:
                    continue
                cols[c, a], cols[j, b] = rb, ra
                break
    return False


@lru_cache(maxsize=8)
def build_code_config(
    info_bits: int = DEFAULT_INFO_BITS,
    crc_bits: int = DEFAULT_CRC_BITS,
    coded_bits: int = DEFAULT_CODED_BITS,
    seed: int = DEFAULT_CODE_SEED,
    max_bp_iters: int = DEFAULT_MAX_BP_ITERS,
) -> CodeConfig:
    """Build (and memoize) the seeded code; retries construction seeds until
    the parity-check matrix has full row rank and no 4-cycles."""
    k = info_bits + crc_bits
    m = coded_bits - k
    for attempt in range(64):
        rng = np.random.default_rng(np.random.SeedSequence((seed, attempt)))
        cols = _assign_columns(rng, coded_bits, m, 3)
        if not _break_four_cycles(rng, cols):
            continue
        H = np.zeros((m, coded_bits), dtype=np.uint8)
        for c in range(coded_bits):
            H[cols[c], c] = 1
        rank, pivots, rref = _gf2_row_reduce(H)
        if rank < m:
            continue
        pivot_cols = np.array(pivots, dtype=np.int64)
        info_cols = np.setdiff1d(np.arange(coded_bits), pivot_cols)
        enc_matrix = rref[:, info_cols].astype(np.uint8)

        edge_row, edge_col = np.nonzero(H)
        order = np.argsort(edge_row, kind="stable")
        edge_row = edge_row[order].astype(np.int64)
        edge_col = edge_col[order].astype(np.int64)
        row_starts = np.searchsorted(edge_row, np.arange(m))
        to_col_order = np.argsort(edge_col, kind="stable").astype(np.int64)
        col_starts = np.searchsorted(edge_col[to_col_order], np.arange(coded_bits))
        return CodeConfig(
            info_bits=info_bits,
            crc_bits=crc_bits,
            coded_bits=coded_bits,
            seed=seed,
            max_bp_iters=max_bp_iters,
            edge_col=edge_col,
            edge_row=edge_row,
            row_starts=row_starts,
            to_col_order=to_col_order,
            col_starts=col_starts,
            info_cols=info_cols,
            pivot_cols=pivot_cols,
            enc_matrix=enc_matrix,
        )
    raise RuntimeError("could not construct a full-rank parity-check matrix")


# ---------------------------------------------------------------------------
# Encode / decode
# ---------------------------------------------------------------------------


def ldpc_encode(cfg: CodeConfig, bits: np.ndarray) -> np.ndarray:
    """Systematic encode: info bits land on ``info_cols``, parity solves the
    checks."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape != (cfg.k,):
        raise ValueError(f"expected {cfg.k} input bits")
    cw = np.zeros(cfg.coded_bits, dtype=np.uint8)
    cw[cfg.info_cols] = bits
    cw[cfg.pivot_cols] = (cfg.enc_matrix.astype(np.int32) @ bits.astype(np.int32)) % 2
    return cw


def _syndrome_ok(cfg: CodeConfig, bits: np.ndarray) -> np.ndarray:
    at_edges = bits[:, cfg.edge_col].astype(np.uint8)
    synd = np.bitwise_xor.reduceat(at_edges, cfg.row_starts, axis=1)
    return ~synd.any(axis=1)


def ldpc_decode_batch(
    cfg: CodeConfig, llrs: np.ndarray, max_iters: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Sum-product BP over a batch of LLR vectors (positive favors bit 0).

    Returns (info bits [B x k], converged flags [B]). Codewords whose
    syndrome clears drop out of the active batch; the rest run to the
    iteration cap and report non-convergence (caught downstream by CRC).
    Degenerate all-zero LLR inputs carry no information and are reported
    unconverged without iterating.
    """
    iters = cfg.max_bp_iters if max_iters is None else max_iters
    llrs = np.atleast_2d(np.asarray(llrs, dtype=np.float64))
    B, n = llrs.shape
    if n != cfg.coded_bits:
        raise ValueError("LLR length mismatch")

    out_bits = np.zeros((B, n), dtype=np.uint8)
    converged = np.zeros(B, dtype=bool)

    informative = llrs.any(axis=1)
    hard = (llrs < 0).astype(np.uint8)
    ok0 = _syndrome_ok(cfg, hard) & informative
    out_bits[ok0] = hard[ok0]
    converged[ok0] = True

    active = np.nonzero(informative & ~converged)[0]
    if active.size and iters > 0:
        lam = llrs[active]
        Lq = lam[:, cfg.edge_col]
        post = lam
        tiny = 1e-12
        for _ in range(iters):
            # check-node update: exclude-self tanh product per row
            t = np.tanh(0.5 * np.clip(Lq, -30.0, 30.0))
            t = np.where(np.abs(t) < tiny, tiny, t)
            prod = np.multiply.reduceat(t, cfg.row_starts, axis=1)
            Lr = 2.0 * np.arctanh(
                np.clip(prod[:, cfg.edge_row] / t, -1.0 + 1e-14, 1.0 - 1e-14)
            )
            # variable-node update via per-column sums
            col_sums = np.add.reduceat(Lr[:, cfg.to_col_order], cfg.col_starts, axis=1)
            post = lam + col_sums
            Lq = post[:, cfg.edge_col] - Lr
            bits = (post < 0).astype(np.uint8)
            ok = _syndrome_ok(cfg, bits)
            if ok.any():
                done = active[ok]
                out_bits[done] = bits[ok]
                converged[done] = True
                keep = ~ok
                if not keep.any():
                    active = active[:0]
                    break
                active = active[keep]
                lam = lam[keep]
                Lq = Lq[keep]
                post = post[keep]
        if active.size:
            # iteration cap hit: hard decision on the last posterior
            out_bits[active] = (post < 0).astype(np.uint8)

    return out_bits[:, cfg.info_cols], converged


def ldpc_decode(
    cfg: CodeConfig, llrs: np.ndarray, max_iters: int | None = None
) -> tuple[np.ndarray, bool]:
    """Single-codeword decode; see :func:`ldpc_decode_batch`."""
    bits, conv = ldpc_decode_batch(cfg, llrs[None, :], max_iters)
    return bits[0], bool(conv[0])


# ---------------------------------------------------------------------------
# Modulation
# ---------------------------------------------------------------------------


def modulate(bits: np.ndarray, scheme: str = BPSK) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if scheme == BPSK:
        return (1.0 - 2.0 * bits).astype(complex)
    if scheme == QPSK:
        if bits.size % 2:
            raise ValueError("QPSK needs an even bit count")
        i = 1.0 - 2.0 * bits[0::2]
        q = 1.0 - 2.0 * bits[1::2]
        return (i + 1j * q) / np.sqrt(2.0)
    raise ValueError(f"unknown modulation {scheme!r}")


def demap_llr(
    symbols: np.ndarray,
    gain: np.ndarray | complex,
    noise_var: np.ndarray | float,
    scheme: str = BPSK,
) -> np.ndarray:
    """Soft demapping of ``y = gain * s + n``; gain/noise_var broadcast
    per symbol."""
    z = np.conj(gain) * np.asarray(symbols)
    if scheme == BPSK:
        return 4.0 * np.real(z) / noise_var
    if scheme == QPSK:
        scale = 2.0 * np.sqrt(2.0) / np.asarray(noise_var, dtype=float)
        llr = np.empty(2 * z.size, dtype=float)
        llr[0::2] = scale * np.real(z)
        llr[1::2] = scale * np.imag(z)
        return llr
    raise ValueError(f"unknown modulation {scheme!r}")
