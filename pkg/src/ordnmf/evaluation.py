"""Ranking metrics, held-out likelihood, and posterior predictive checks."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .inference import predict_scores
from .model import log1mexp


@dataclass
class RankingMetricsReport:
    threshold: int
    list_length: int
    mean_ndcg: float
    n_users_evaluated: int


@dataclass
class PPCReport:
    """Observed vs simulated class frequencies, classes 0..V."""

    observed_freq: np.ndarray
    simulated_freq: np.ndarray
    simulated_nonzero_pct: float
    n_cells_sampled: int


def _test_lookup(test):
    """Per-user dicts item -> class for the test matrix."""
    lookup = []
    for u in range(test.n_users):
        lo, hi = test.indptr[u], test.indptr[u + 1]
        lookup.append(dict(zip(test.cols[lo:hi].tolist(),
                               test.vals[lo:hi].tolist())))
    return lookup


def ndcg_at_m(scores, train, test, threshold, list_length,
              exclude_train=True, score_zero_relevant_users=False):
    """Mean NDCG over users with at least one relevant held-out item.

    Items are ranked by score descending (ties broken by ascending item
    index); items non-zero in train are removed from the candidate list
    unless exclude_train is off.  Relevance is 1[test class >= threshold].
    The ideal DCG truncates at min(list_length, number of relevant items).
    Users with no relevant test item are skipped by default, or scored 0
    when score_zero_relevant_users is set.
    """
    if list_length < 1:
        raise ConfigError("list length must be >= 1")
    if not 1 <= threshold <= test.n_classes:
        raise ConfigError(f"relevance threshold must lie in 1..{test.n_classes}")
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (train.n_users, train.n_items):
        raise DataError("scores must cover every (user, item) pair")
    discounts = 1.0 / np.log2(np.arange(2, list_length + 2))
    ideal_cum = np.cumsum(discounts)
    total = 0.0
    n_eval = 0
    n_zero_rel = 0
    for u in range(train.n_users):
        lo, hi = test.indptr[u], test.indptr[u + 1]
        rel_items = test.cols[lo:hi][test.vals[lo:hi] >= threshold]
        if rel_items.size == 0:
            n_zero_rel += 1
            continue
        row = scores[u]
        if exclude_train:
            candidates = np.ones(train.n_items, dtype=bool)
            candidates[train.cols[train.indptr[u]:train.indptr[u + 1]]] = False
            idx = np.flatnonzero(candidates)
        else:
            idx = np.arange(train.n_items)
        order = idx[np.lexsort((idx, -row[idx]))][:list_length]
        rel_mask = np.isin(order, rel_items)
        dcg = float(discounts[:order.size][rel_mask[:order.size]].sum()) if order.size else 0.0
        idcg = ideal_cum[min(list_length, rel_items.size) - 1]
        total += dcg / idcg
        n_eval += 1
    if score_zero_relevant_users:
        n_eval += n_zero_rel
    mean = total / n_eval if n_eval else float("nan")
    return RankingMetricsReport(threshold=int(threshold),
                                list_length=int(list_length),
                                mean_ndcg=mean, n_users_evaluated=n_eval)


def evaluate_ranking(state, train, test, thresholds, list_length=100,
                     exclude_train=True, batch_size=1024):
    """NDCG reports at several relevance thresholds, sharing one score pass."""
    reports = {int(s): [0.0, 0] for s in thresholds}
    discounts = 1.0 / np.log2(np.arange(2, list_length + 2))
    ideal_cum = np.cumsum(discounts)
    for start in range(0, train.n_users, batch_size):
        users = np.arange(start, min(start + batch_size, train.n_users))
        scores = predict_scores(state, users)
        for j, u in enumerate(users):
            row = scores[j]
            if exclude_train:
                candidates = np.ones(train.n_items, dtype=bool)
                candidates[train.cols[train.indptr[u]:train.indptr[u + 1]]] = False
                idx = np.flatnonzero(candidates)
            else:
                idx = np.arange(train.n_items)
            order = idx[np.lexsort((idx, -row[idx]))][:list_length]
            lo, hi = test.indptr[u], test.indptr[u + 1]
            t_cols, t_vals = test.cols[lo:hi], test.vals[lo:hi]
            for s, acc in reports.items():
                rel_items = t_cols[t_vals >= s]
                if rel_items.size == 0:
                    continue
                rel_mask = np.isin(order, rel_items)
                dcg = float(discounts[:order.size][rel_mask].sum())
                idcg = ideal_cum[min(list_length, rel_items.size) - 1]
                acc[0] += dcg / idcg
                acc[1] += 1
    return [RankingMetricsReport(threshold=s, list_length=int(list_length),
                                 mean_ndcg=acc[0] / acc[1] if acc[1] else float("nan"),
                                 n_users_evaluated=acc[1])
            for s, acc in sorted(reports.items())]


def log_lik_nonzeros(test, state):
    """Sum over held-out entries of log p(y | y > 0, fitted factors).

    Uses the posterior-mean intensity and subtracts the log probability of
    being non-zero; never positive.
    """
    if test.nnz == 0:
        raise DataError("test matrix is empty")
    thr = state.thresholds
    lam = np.einsum("jk,jk->j",
                    state.W.mean[test.rows], state.H.mean[test.cols])
    if np.any(lam <= 0):
        raise NumericalError("zero predicted intensity in held-out likelihood")
    log_p = thr.log_pmf(test.vals, lam)
    log_nonzero = log1mexp(lam * thr.theta[0])
    return float((log_p - log_nonzero).sum())


def ppc_histogram(state, train, rng, n_cells=10_000_000):
    """Simulate classes from the fitted posterior and compare histograms.

    Draws one (W, H) sample from the variational posteriors, then samples
    classes at n_cells uniformly random (user, item) cells.  Observed
    frequencies come from the train matrix over all U x I cells (class 0 is
    the implicit remainder).
    """
    U, I, V = state.n_users, state.n_items, state.n_classes
    w_sample = rng.gamma(state.W.shape, 1.0 / state.W.rate)
    h_sample = rng.gamma(state.H.shape, 1.0 / state.H.rate)
    counts = np.zeros(V + 1, dtype=np.int64)
    chunk = 1_000_000
    remaining = int(n_cells)
    while remaining > 0:
        n = min(chunk, remaining)
        users = rng.integers(0, U, size=n)
        items = rng.integers(0, I, size=n)
        lam = np.einsum("jk,jk->j", w_sample[users], h_sample[items])
        classes = state.thresholds.sample_class(lam, rng)
        counts += np.bincount(classes, minlength=V + 1)
        remaining -= n
    simulated = counts / counts.sum()
    observed = np.zeros(V + 1)
    observed[1:] = train.class_counts
    observed[0] = float(train.n_users) * train.n_items - train.nnz
    observed /= observed.sum()
    return PPCReport(observed_freq=observed, simulated_freq=simulated,
                     simulated_nonzero_pct=100.0 * (1.0 - simulated[0]),
                     n_cells_sampled=int(n_cells))


def ranking_report_text(reports):
    lines = ["threshold\tlist_length\tndcg\tn_users"]
    for r in reports:
        lines.append(f"{r.threshold}\t{r.list_length}\t{r.mean_ndcg:.6f}\t"
                     f"{r.n_users_evaluated}")
    return "\n".join(lines) + "\n"


def ppc_report_text(report):
    lines = [f"# simulated non-zero: {report.simulated_nonzero_pct:.3f}%",
             "class\tobserved_freq\tsimulated_freq"]
    for v in range(report.observed_freq.size):
        lines.append(f"{v}\t{report.observed_freq[v]:.8f}\t"
                     f"{report.simulated_freq[v]:.8f}")
    return "\n".join(lines) + "\n"
