"""Deterministic uniform variates from salted SHA-256 hashes.

Every random quantity in this package is a pure function of a salt string
and a unit string: the first 8 bytes of SHA-256(UTF-8(salt + ":" + unit)),
read as a big-endian unsigned 64-bit integer, divided by 2**64.  The same
(salt, unit) pair therefore yields the same number on every platform and
in every process, which is what makes assignments reproducible and lets
analyses re-draw the exact counterfactual randomizations.

The scalar path goes through hashlib.  The batch path runs a lane-parallel
numba kernel: each message is one lane, a tile of lanes is processed
elementwise so the compression loop vectorizes, and message padding is
built on the fly from prefix/suffix byte tables.  Results are bit-identical
to the scalar path.  Without numba the batch path falls back to hashlib.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


_TWO64 = float(2**64)

# Round constants, FIPS 180-4.
_K = np.array([
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
    0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
    0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
    0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
    0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
    0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
    0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
    0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2], dtype=np.uint32)

_TILE = 1024


def hash_u64(salt: str, unit: str) -> int:
    """First 8 bytes of SHA-256(salt + ":" + unit) as a big-endian integer."""
    digest = hashlib.sha256(f"{salt}:{unit}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def hash_uniform(salt: str, unit: str) -> float:
    """Deterministic variate in [0, 1) for the given salt and unit."""
    return hash_u64(salt, unit) / _TWO64


@njit(cache=True)
def _sha256_pairs(pmat, plen, umat, ulen, pidx, uidx, width, out, K):  # pragma: no cover - compiled
    """Hash message prefix+suffix per lane; out gets the leading 8 digest bytes.

    pmat/umat are byte tables with one row per distinct prefix/suffix and
    plen/ulen their lengths; lane i hashes row pidx[i] followed by row
    uidx[i].  width is 64 * (max block count over all lanes).  Lanes run in
    lockstep over the max block count; a lane past its own final block
    replays its state unchanged.
    """
    B = pidx.shape[0]
    NB = width // 64
    scratch = np.empty((_TILE, width), dtype=np.uint8)
    nbl = np.empty(_TILE, dtype=np.int64)
    w = np.empty((64, _TILE), dtype=np.uint32)
    st = np.empty((8, _TILE), dtype=np.uint32)
    cur = np.empty((8, _TILE), dtype=np.uint32)
    iv = np.array([0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                   0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19],
                  dtype=np.uint32)
    for start in range(0, B, _TILE):
        m = min(_TILE, B - start)
        # one-pass padding per lane: message, 0x80, zeros, 64-bit bit length
        for l in range(m):
            for i in range(width):
                scratch[l, i] = 0
            p = pidx[start + l]
            u = uidx[start + l]
            L = 0
            for b in range(plen[p]):
                scratch[l, L] = pmat[p, b]
                L += 1
            for b in range(ulen[u]):
                scratch[l, L] = umat[u, b]
                L += 1
            scratch[l, L] = 0x80
            nb = (L + 9 + 63) // 64
            nbl[l] = nb
            bits = np.uint64(L * 8)
            end = nb * 64 - 8
            for k in range(8):
                scratch[l, end + k] = np.uint8((bits >> np.uint64(8 * (7 - k))) & np.uint64(0xFF))
        for s in range(8):
            for l in range(m):
                st[s, l] = iv[s]
                cur[s, l] = iv[s]
        for blk in range(NB):
            base = blk * 64
            for t in range(16):
                i = base + 4 * t
                for l in range(m):
                    w[t, l] = ((np.uint32(scratch[l, i]) << 24)
                               | (np.uint32(scratch[l, i + 1]) << 16)
                               | (np.uint32(scratch[l, i + 2]) << 8)
                               | np.uint32(scratch[l, i + 3]))
            for t in range(16, 64):
                for l in range(m):
                    x = w[t - 15, l]
                    s0 = ((x >> 7) | (x << 25)) ^ ((x >> 18) | (x << 14)) ^ (x >> 3)
                    y = w[t - 2, l]
                    s1 = ((y >> 17) | (y << 15)) ^ ((y >> 19) | (y << 13)) ^ (y >> 10)
                    w[t, l] = w[t - 16, l] + s0 + w[t - 7, l] + s1
            for t in range(64):
                kt = K[t]
                for l in range(m):
                    a = cur[0, l]; b2 = cur[1, l]; c = cur[2, l]; d = cur[3, l]
                    e = cur[4, l]; f = cur[5, l]; g = cur[6, l]; h = cur[7, l]
                    S1 = ((e >> 6) | (e << 26)) ^ ((e >> 11) | (e << 21)) ^ ((e >> 25) | (e << 7))
                    ch = (e & f) ^ ((~e) & g)
                    temp1 = h + S1 + ch + kt + w[t, l]
                    S0 = ((a >> 2) | (a << 30)) ^ ((a >> 13) | (a << 19)) ^ ((a >> 22) | (a << 10))
                    maj = (a & b2) ^ (a & c) ^ (b2 & c)
                    temp2 = S0 + maj
                    cur[7, l] = g; cur[6, l] = f; cur[5, l] = e; cur[4, l] = d + temp1
                    cur[3, l] = c; cur[2, l] = b2; cur[1, l] = a; cur[0, l] = temp1 + temp2
            for s in range(8):
                for l in range(m):
                    if nbl[l] > blk:
                        st[s, l] = st[s, l] + cur[s, l]
                    cur[s, l] = st[s, l]
        for l in range(m):
            out[start + l] = (np.uint64(st[0, l]) << np.uint64(32)) | np.uint64(st[1, l])


def _byte_table(items: list[bytes]):
    n = len(items)
    lens = np.array([len(b) for b in items], dtype=np.int64)
    table = np.zeros((n, max(1, int(lens.max()) if n else 1)), dtype=np.uint8)
    for i, b in enumerate(items):
        if b:
            table[i, :len(b)] = np.frombuffer(b, dtype=np.uint8)
    return table, lens


def _pairs_u64_kernel(prefixes: list[bytes], suffixes: list[bytes],
                      pidx: np.ndarray, uidx: np.ndarray) -> np.ndarray:
    pmat, plen = _byte_table(prefixes)
    umat, ulen = _byte_table(suffixes)
    maxlen = int(plen.max()) + int(ulen.max())
    width = ((maxlen + 9 + 63) // 64) * 64
    out = np.empty(pidx.shape[0], dtype=np.uint64)
    _sha256_pairs(pmat, plen, umat, ulen, pidx, uidx, width, out, _K)
    return out


def _pairs_u64_hashlib(prefixes: list[bytes], suffixes: list[bytes],
                       pidx: np.ndarray, uidx: np.ndarray) -> np.ndarray:
    out = np.empty(pidx.shape[0], dtype=np.uint64)
    bases = [hashlib.sha256(p) for p in prefixes]
    for i in range(pidx.shape[0]):
        h = bases[pidx[i]].copy()
        h.update(suffixes[uidx[i]])
        out[i] = int.from_bytes(h.digest()[:8], "big")
    return out


def uniforms_grid(salts: Sequence[str], units: Sequence[str]) -> np.ndarray:
    """Matrix of variates, rows indexed by salt and columns by unit.

    Equals ``hash_uniform(salt, unit)`` entrywise but runs through the
    batch engine; used for re-randomization draws where salts are per
    replication and units are per node.
    """
    P, U = len(salts), len(units)
    if P == 0 or U == 0:
        return np.zeros((P, U), dtype=np.float64)
    prefixes = [f"{s}:".encode("utf-8") for s in salts]
    suffixes = [u.encode("utf-8") for u in units]
    pidx = np.repeat(np.arange(P, dtype=np.int64), U)
    uidx = np.tile(np.arange(U, dtype=np.int64), P)
    if HAVE_NUMBA:
        u64 = _pairs_u64_kernel(prefixes, suffixes, pidx, uidx)
    else:
        u64 = _pairs_u64_hashlib(prefixes, suffixes, pidx, uidx)
    return (u64.astype(np.float64) / _TWO64).reshape(P, U)


def uniforms(salt: str, units: Sequence[str]) -> np.ndarray:
    """Vector of variates for one salt over many units."""
    return uniforms_grid([salt], units)[0]
