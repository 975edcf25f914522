import numpy as np

from stochns.spectral import random_field


def field_from_seed(grid, seed, s=3, vector=False, cutoff=None):
    return random_field(grid, np.random.default_rng(seed), s, vector=vector, cutoff=cutoff)


def loglog_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


ACCEPTANCE_LINES = []


def verdict(number, title, ok, detail):
    """Record and print one acceptance line; returns ``ok`` for asserting."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
