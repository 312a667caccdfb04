"""Mobile-broadband packet source: Poisson arrivals with log-normal sizes."""

import numpy as np

MBB_PACKETS_PER_S = 20.0
MBB_MEDIAN_PACKET_BITS = 10_000 * 8
MBB_SIZE_SIGMA = 1.0


def mbb_arrivals(rng, n_ues, tti_s=1e-3, rate=MBB_PACKETS_PER_S):
    """Per-UE packet counts and total arriving bits for one TTI."""
    counts = rng.poisson(rate * tti_s, size=n_ues)
    total = np.zeros(n_ues)
    hit = np.flatnonzero(counts)
    for i in hit:
        sizes = rng.lognormal(np.log(MBB_MEDIAN_PACKET_BITS), MBB_SIZE_SIGMA, size=counts[i])
        total[i] = np.ceil(sizes).sum()
    return counts, total
