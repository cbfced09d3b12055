"""Counter-based keyed random numbers.

Every random quantity in a simulation is a pure function of
(master seed, domain tag, entity key, counter).  There is no sequential
generator state, so any worker can draw the value for any entity without
coordination, and the result is independent of how the network is
partitioned over ranks.  The mixer is the splitmix64 finalizer applied
after folding each key word in; all samplers below are vectorized over
numpy arrays of keys.
"""

from __future__ import annotations

import numpy as np

# domain tags keeping the key spaces of unrelated draws disjoint
DOMAIN_CONN = 0x11
DOMAIN_TARGET = 0x12
DOMAIN_WEIGHT = 0x13
DOMAIN_DELAY = 0x14
DOMAIN_EXT = 0x21
DOMAIN_EXT_VAL = 0x22

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

_INV_2_53 = float(2.0 ** -53)


def _mix(h):
    h = (h ^ (h >> np.uint64(30))) * _M1
    h = (h ^ (h >> np.uint64(27))) * _M2
    return h ^ (h >> np.uint64(31))


def keyed_u64(seed, domain, k1, k2=0, ctr=0):
    """Uniform uint64 for key tuple (seed, domain, k1, k2, ctr).

    Arguments broadcast like numpy ufunc inputs; any of them may be arrays.
    """
    with np.errstate(over="ignore"):
        h = np.uint64(seed) * _GOLDEN + np.uint64(domain)
        h = _mix(h + np.asarray(k1, dtype=np.uint64) * _GOLDEN)
        h = _mix(h + np.asarray(k2, dtype=np.uint64) * _GOLDEN)
        h = _mix(h + np.asarray(ctr, dtype=np.uint64) * _GOLDEN)
    return h


def keyed_uniform(seed, domain, k1, k2=0, ctr=0):
    """Uniform float64 in [0, 1)."""
    return (keyed_u64(seed, domain, k1, k2, ctr) >> np.uint64(11)) * _INV_2_53


def keyed_normal(seed, domain, k1, k2=0, ctr=0):
    """Standard normal via the inverse CDF of a keyed uniform."""
    from scipy.special import ndtri

    u = keyed_uniform(seed, domain, k1, k2, ctr)
    # keep strictly inside (0,1); ndtri(0) would be -inf
    return ndtri(np.clip(u, 1e-16, 1.0 - 1e-16))


def keyed_randint(n, seed, domain, k1, k2=0, ctr=0):
    """Uniform integer in [0, n); `n` may be an array."""
    u = keyed_uniform(seed, domain, k1, k2, ctr)
    return np.minimum((u * n).astype(np.int64), np.asarray(n, dtype=np.int64) - 1)


def keyed_poisson(mean, seed, domain, k1, k2=0, max_iter=512):
    """Poisson counts by CDF inversion of a single keyed uniform per lane."""
    mean = np.asarray(mean, dtype=np.float64)
    u = keyed_uniform(seed, domain, k1, k2)
    pmf = np.exp(-mean)
    cdf = pmf.copy()
    k = np.zeros(np.broadcast(u, mean).shape, dtype=np.int64)
    active = u >= cdf
    i = 0
    while active.any():
        i += 1
        if i > max_iter:
            raise RuntimeError("poisson inversion did not terminate")
        pmf = pmf * mean / i
        cdf = cdf + pmf
        k = np.where(active, i, k)
        active = u >= cdf
    return k


def keyed_binomial(n, p, seed, domain, k1, k2=0):
    """Binomial counts by CDF inversion, walking outward from the mode.

    Starting at the mode keeps the walk short and avoids the underflow of
    pmf(0) = (1-p)^n for large n.  The two-sided accumulation order
    (mode, mode+1, mode-1, mode+2, ...) is a fixed reordering of the
    outcome space, so the counts are exactly Binomial(n, p) distributed.
    """
    from scipy.special import gammaln

    n = np.asarray(n, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    u = keyed_uniform(seed, domain, k1, k2)
    n, p, u = np.broadcast_arrays(n, p, u)
    n = n.astype(np.int64)

    out = np.zeros(n.shape, dtype=np.int64)
    trivial = (n <= 0) | (p <= 0.0)
    certain = p >= 1.0
    out[certain] = n[certain]
    active = ~(trivial | certain)
    if not active.any():
        return out

    na, pa, ua = n[active], p[active], u[active]
    mode = np.floor((na + 1) * pa).astype(np.int64)
    mode = np.minimum(mode, na)
    logpmf_mode = (
        gammaln(na + 1.0)
        - gammaln(mode + 1.0)
        - gammaln(na - mode + 1.0)
        + mode * np.log(pa)
        + (na - mode) * np.log1p(-pa)
    )
    pmf_mode = np.exp(logpmf_mode)
    odds = pa / (1.0 - pa)

    cdf = pmf_mode.copy()
    val = mode.copy()
    done = ua < cdf
    pmf_up = pmf_mode.copy()
    pmf_dn = pmf_mode.copy()
    k_up = mode.copy()
    k_dn = mode.copy()
    for _ in range(int(na.max()) + 2):
        if done.all():
            break
        # step up
        can_up = k_up < na
        ratio = np.where(can_up, (na - k_up) / (k_up + 1.0) * odds, 0.0)
        pmf_up = pmf_up * ratio
        k_up = np.where(can_up, k_up + 1, k_up)
        hit = ~done & can_up & (ua < cdf + pmf_up)
        val = np.where(hit, k_up, val)
        cdf = cdf + pmf_up
        done |= hit
        # step down
        can_dn = k_dn > 0
        ratio = np.where(can_dn, k_dn / ((na - k_dn + 1.0) * odds), 0.0)
        pmf_dn = pmf_dn * ratio
        k_dn = np.where(can_dn, k_dn - 1, k_dn)
        hit = ~done & can_dn & (ua < cdf + pmf_dn)
        val = np.where(hit, k_dn, val)
        cdf = cdf + pmf_dn
        done |= hit
    # float rounding can leave a residual tail; those lanes take the mode
    out[active] = val
    return out
