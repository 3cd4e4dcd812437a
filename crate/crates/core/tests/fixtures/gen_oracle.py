"""Arbitrary-precision reference values for the distillation and InfoNCE losses.

Inputs are drawn in float64 and stored with full round-trip precision; the
losses are then evaluated from those exact binary values at 60 digits.

    python3 gen_oracle.py
"""

import json
from pathlib import Path

import mpmath as mp
import numpy as np

mp.mp.dps = 60
HERE = Path(__file__).resolve().parent
TAUS = [0.05, 0.1, 0.5, 1.0]


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def exact(rows):
    return [[mp.mpf(float(v)) for v in r] for r in rows]


def dot(a, b):
    return mp.fsum(x * y for x, y in zip(a, b))


def log_softmax(logits):
    m = max(logits)
    lse = m + mp.log(mp.fsum(mp.exp(v - m) for v in logits))
    return [v - lse for v in logits]


def kl_loss(student, teacher, tau):
    s, t = exact(student), exact(teacher)
    total = mp.mpf(0)
    for i in range(len(s)):
        ls = log_softmax([dot(s[i], s[j]) / tau for j in range(len(s))])
        lt = log_softmax([dot(t[i], t[j]) / tau for j in range(len(t))])
        total += mp.fsum(mp.exp(a) * (a - b) for a, b in zip(ls, lt))
    return total


def infonce_loss(query, positive, negatives, tau):
    q, p = exact([query])[0], exact([positive])[0]
    logits = [dot(q, p) / tau] + [dot(q, n) / tau for n in exact(negatives)]
    return -log_softmax(logits)[0]


def floats(m):
    return [[float(v) for v in r] for r in m]


def main():
    rng = np.random.default_rng(20240611)
    kl = []
    for case in range(100):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(2, 17))
        tau = TAUS[case % len(TAUS)]
        s, t = unit_rows(rng, n, d), unit_rows(rng, n, d)
        kl.append({"tau": tau, "student": floats(s), "teacher": floats(t),
                   "loss": mp.nstr(kl_loss(s, t, mp.mpf(tau)), 40)})
    nce = []
    for case in range(100):
        d = int(rng.integers(2, 17))
        tau = TAUS[case % len(TAUS)]
        rows = unit_rows(rng, 10, d)
        nce.append({"tau": tau, "query": floats(rows[:1])[0], "positive": floats(rows[1:2])[0],
                    "negatives": floats(rows[2:]),
                    "loss": mp.nstr(infonce_loss(rows[0], rows[1], rows[2:], mp.mpf(tau)), 40)})
    (HERE / "kl_oracle.json").write_text(json.dumps(kl, indent=1) + "\n")
    (HERE / "infonce_oracle.json").write_text(json.dumps(nce, indent=1) + "\n")


if __name__ == "__main__":
    main()
