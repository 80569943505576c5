"""Gates for many simultaneous 3-sigma comparisons.

With hundreds of entries a few 3-sigma exceedances are expected by chance
(0.27% each), so unit tests check the exceedance count against its binomial
upper quantile and the largest z against a Bonferroni bound.
"""
import numpy as np
from scipy.stats import binom, norm

P_EXCEED = 2 * norm.sf(3.0)


def family_ok(z, alpha: float = 1e-3) -> tuple[bool, str]:
    z = np.abs(np.ravel(z))
    k = int(np.sum(z > 3.0))
    k_max = int(binom.ppf(1 - alpha, z.size, P_EXCEED))
    z_max = float(norm.isf(alpha / (2 * z.size)))
    ok = k <= k_max and float(z.max()) <= z_max
    return ok, f"{k} of {z.size} entries above 3 (allowed {k_max}); max z {z.max():.3f} (allowed {z_max:.3f})"


def zscores(est, ref, se):
    se = np.asarray(se, float)
    return np.abs(np.asarray(est) - ref) / np.where(se > 0, se, np.inf)
