"""Counter-based random numbers keyed by (seed, step, index).

Philox4x64-10 (the generator behind ``numpy.random.Philox``) evaluated
directly on a counter, so any draw can be recomputed without replaying a
stream.  Counter layout: ``(index // 4, step, purpose, 0)``; key
``(seed, 0)``.  Each block yields four 64-bit words, i.e. four uniforms or
four Gaussians (two Box-Muller pairs).
"""

from __future__ import annotations

import math

import numpy as np
from llvmlite import ir
from numba import njit, types, uint64
from numba.extending import intrinsic

__all__ = [
    "PURPOSE_NOISE",
    "PURPOSE_INIT",
    "PURPOSE_REDUCED",
    "philox4x64",
    "fill_normals",
    "fill_uniforms",
    "derive_seed",
    "normals",
    "uniforms",
]

PURPOSE_NOISE = 0
PURPOSE_INIT = 1
PURPOSE_REDUCED = 2

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_S11 = np.uint64(11)
_TWO53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * math.pi


@intrinsic
def _mulhilo(typingctx, a, b):
    """Full 64 x 64 -> 128-bit product as (hi, lo), via an LLVM i128 multiply."""
    sig = types.UniTuple(types.uint64, 2)(types.uint64, types.uint64)

    def codegen(context, builder, signature, args):
        i128 = ir.IntType(128)
        prod = builder.mul(builder.zext(args[0], i128), builder.zext(args[1], i128))
        hi = builder.trunc(builder.lshr(prod, ir.Constant(i128, 64)), ir.IntType(64))
        lo = builder.trunc(prod, ir.IntType(64))
        return context.make_tuple(builder, signature.return_type, (hi, lo))

    return sig, codegen


@njit(cache=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """One Philox4x64-10 block; all arguments and results are uint64."""
    c0 = uint64(c0)
    c1 = uint64(c1)
    c2 = uint64(c2)
    c3 = uint64(c3)
    k0 = uint64(k0)
    k1 = uint64(k1)
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@njit(cache=True, inline="always")
def _unit_open(w):
    # (0, 1]
    return ((w >> _S11) + uint64(1)) * _TWO53


@njit(cache=True, inline="always")
def _unit(w):
    # [0, 1)
    return (w >> _S11) * _TWO53


@njit(cache=True)
def fill_normals(out, seed, step, purpose):
    """Standard Gaussians for indices 0..len(out)-1 at a given step."""
    n = out.shape[0]
    key = uint64(seed)
    nblocks = (n + 3) // 4
    for b in range(nblocks):
        w0, w1, w2, w3 = philox4x64(uint64(b), uint64(step), uint64(purpose), uint64(0), key, uint64(0))
        r0 = math.sqrt(-2.0 * math.log(_unit_open(w0)))
        a0 = _TWO_PI * _unit(w1)
        r1 = math.sqrt(-2.0 * math.log(_unit_open(w2)))
        a1 = _TWO_PI * _unit(w3)
        base = 4 * b
        if base < n:
            out[base] = r0 * math.cos(a0)
        if base + 1 < n:
            out[base + 1] = r0 * math.sin(a0)
        if base + 2 < n:
            out[base + 2] = r1 * math.cos(a1)
        if base + 3 < n:
            out[base + 3] = r1 * math.sin(a1)


@njit(cache=True)
def fill_uniforms(out, seed, step, purpose):
    """Uniforms on [0, 1) for indices 0..len(out)-1 at a given step."""
    n = out.shape[0]
    key = uint64(seed)
    for b in range((n + 3) // 4):
        ws = philox4x64(uint64(b), uint64(step), uint64(purpose), uint64(0), key, uint64(0))
        for m in range(4):
            if 4 * b + m < n:
                out[4 * b + m] = _unit(ws[m])


def normals(n: int, seed: int, step: int, purpose: int = PURPOSE_NOISE) -> np.ndarray:
    out = np.empty(n)
    fill_normals(out, np.uint64(seed), np.uint64(step), np.uint64(purpose))
    return out


def uniforms(n: int, seed: int, step: int, purpose: int = PURPOSE_INIT) -> np.ndarray:
    out = np.empty(n)
    fill_uniforms(out, np.uint64(seed), np.uint64(step), np.uint64(purpose))
    return out


def derive_seed(base_seed: int, index: int) -> int:
    """Independent 64-bit child seed for realization ``index``."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, np.uint64)[0])
