import numpy as np
from scipy.stats import chisquare

# filled by the acceptance tests, echoed by the terminal summary hook
CRITERION_LINES: list[str] = []


def pooled_chisquare_pvalue(counts, probs) -> float:
    """Chi-square goodness of fit; cells with expected count below 5 are pooled into one."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n = counts.sum()
    keep = probs * n >= 5
    obs, exp = counts[keep], probs[keep] * n
    rest = probs[~keep].sum() * n
    if rest > 0:
        obs = np.append(obs, counts[~keep].sum())
        exp = np.append(exp, rest)
    exp *= obs.sum() / exp.sum()
    return float(chisquare(obs, exp).pvalue)
