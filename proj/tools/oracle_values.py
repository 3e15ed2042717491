#!/usr/bin/env python3
# Copyright 2026 The CARMEN Emulator Authors
# SPDX-License-Identifier: Apache-2.0
"""Reference values for the unit tests, from mpmath at 50 digits.

Run it and compare against the constants in tests/*.cpp. Nothing here shares
code with the C++ side.
"""
import math
from fractions import Fraction

import mpmath as mp

mp.mp.dps = 50


def rne(x):
    """Round half to even on an exact rational."""
    x = Fraction(x)
    f = math.floor(x)
    d = x - f
    if d > Fraction(1, 2) or (d == Fraction(1, 2) and f % 2 == 1):
        return f + 1
    return f


def q(v, frac):
    return rne(Fraction(v) * 2**frac)


def show(name, v):
    print(f"{name:40s} {v}")


# fxp
show("quantize(0.462117, Q16.8) raw", q(Fraction("0.462117"), 8))
show("37 + 41", 37 + 41)
show("floor(13 / 4)", 13 // 4)
show("quantize(3.2, Q8.5) raw", q(Fraction("3.2"), 5))

# cordic / mac
show("0.8125 * 0.6875", Fraction(13, 16) * Fraction(11, 16))
show("0.3 / 0.75", mp.mpf("0.3") / mp.mpf("0.75"))
show("sinh(1)", mp.sinh(1))
show("cosh(1)", mp.cosh(1))
show("exp(-1)", mp.e ** -1)
theta = mp.fsum(mp.atanh(mp.mpf(2) ** -i) for i in range(1, 49)) + sum(
    mp.atanh(mp.mpf(2) ** -i) for i in (4, 13, 40))
show("theta_max (depth 48, repeats)", theta)
gain = mp.fprod(mp.sqrt(1 - mp.mpf(4) ** -i) for i in list(range(1, 17)) + [4, 13])
show("K_h (depth 16, repeats 4,13)", gain)

# approximate MAC bound for 0.8125 * 0.6875 at depth 11, Q16.12 output
show("|w| 2^-10 + 12 2^-(12+4)", mp.mpf(0.8125) * 2**-10 + 12 * mp.mpf(2) ** -16)

# afu
show("tanh(0.5)", mp.tanh(0.5))
show("tanh(4)", mp.tanh(4))
show("sigmoid(1)", 1 / (1 + mp.e ** -1))
show("softmax([1,0])[0]", mp.e / (mp.e + 1))
show("softmax([1,0])[1]", 1 / (mp.e + 1))
show("swish(1)", 1 / (1 + mp.e ** -1))
show("selu(-1)", mp.mpf("1.0507") * mp.mpf("1.6733") * (mp.e ** -1 - 1))
c = mp.sqrt(2 / mp.pi)
show("gelu(1) tanh form", 0.5 * (1 + mp.tanh(c * (1 + mp.mpf("0.044715")))))

# peripherals
w = [0, 0, 0, 4]
mu = Fraction(sum(w), len(w))
mad = sum(abs(x - mu) for x in w) / len(w)
show("aad([0,0,0,4]) mu", mu)
show("aad([0,0,0,4]) d", mad)
show("aad([0,0,0,4])", mu + mad)
w3 = [1, 2, 6]
mu3 = Fraction(sum(w3), 3)
show("avg([1,2,6])", mu3)
show("aad([1,2,6])", mu3 + sum(abs(x - mu3) for x in w3) / 3)
show("0.8125 * 0.5 + 0.125", Fraction(13, 16) * Fraction(1, 2) + Fraction(1, 8))

# model-io calibration
# rule, then lowered while max_abs still rounds past the top code
for m in ["3.2", "1", "0.99", "0.999"]:
    mm = Fraction(m)
    ib = math.ceil(math.log2(float(mm) + 1e-12))
    f = min(max(8 - 1 - ib, 0), 7)
    while f > 0 and round(mm * 2**f) > 127:
        f -= 1
    show(f"frac_bits(max_abs={m}, w=8)", f)

# engine
show("ceil(64/64)*196*8", -(-64 // 64) * 196 * 8)
show("ceil(65/64)", -(-65 // 64))
layers = [(196, 64), (64, 32), (32, 32), (32, 10)]
acc = sum(-(-o // 64) * i * 16 for i, o in layers)
apx = sum(-(-o // 64) * i * 11 for i, o in layers)
show("mnist196 mac cycles w16 accurate", acc)
show("mnist196 mac cycles w16 approximate", apx)
show("ratio", Fraction(apx, acc))
