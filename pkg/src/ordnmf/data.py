"""Sparse ordinal matrices: ingestion, quantization, filtering, splitting.

The observed matrix stores only non-zero classes (class 0 is implicit).
Entries live in CSR order by user; a column-major permutation is built once
on demand for item-side sweeps.  Matrices are immutable after construction
and safe for shared read access.
"""

import struct

import numpy as np

from .errors import ConfigError, DataError, ParseError

_MAGIC = b"ORDM"
_FORMAT_VERSION = 1


class OrdinalMatrix:
    """Sparse U x I matrix of ordinal classes in {1..V}; zeros implicit.

    rows/cols/vals are parallel arrays in CSR order (sorted by user then
    item).  `indptr` delimits each user's slice; `col_order`/`col_indptr`
    give the column-major view.
    """

    def __init__(self, n_users, n_items, n_classes, rows, cols, vals):
        if n_classes < 1:
            raise DataError("need at least one non-zero class")
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.int64)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise DataError("rows/cols/vals must be parallel 1-d arrays")
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_users:
                raise DataError("user index out of range")
            if cols.min() < 0 or cols.max() >= n_items:
                raise DataError("item index out of range")
            if vals.min() < 1 or vals.max() > n_classes:
                raise DataError(f"classes must lie in 1..{n_classes}")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if np.any(dup):
                j = int(np.flatnonzero(dup)[0])
                raise DataError(
                    f"duplicate entry for (user={rows[j]}, item={cols[j]})")
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.n_classes = int(n_classes)
        self.rows, self.cols, self.vals = rows, cols, vals
        for a in (rows, cols, vals):
            a.setflags(write=False)
        self.indptr = np.concatenate(
            ([0], np.cumsum(np.bincount(rows, minlength=n_users))))
        self._col_order = None
        self._col_indptr = None

    @property
    def nnz(self):
        return self.rows.size

    @property
    def class_counts(self):
        """Number of stored entries per class 1..V (length V)."""
        return np.bincount(self.vals, minlength=self.n_classes + 1)[1:]

    @property
    def col_order(self):
        """Permutation of entries into column-major (item, user) order."""
        if self._col_order is None:
            self._col_order = np.lexsort((self.rows, self.cols))
            self._col_indptr = np.concatenate(
                ([0], np.cumsum(np.bincount(self.cols[self._col_order],
                                            minlength=self.n_items))))
        return self._col_order

    @property
    def col_indptr(self):
        self.col_order
        return self._col_indptr

    def user_nnz(self):
        return np.diff(self.indptr)

    def item_nnz(self):
        return np.bincount(self.cols, minlength=self.n_items)

    def to_dense(self):
        """Dense class matrix with explicit zeros (small instances only)."""
        out = np.zeros((self.n_users, self.n_items), dtype=np.int64)
        out[self.rows, self.cols] = self.vals
        return out

    def save(self, path):
        """Write the versioned little-endian binary format."""
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIIIQ", _FORMAT_VERSION, self.n_users,
                                 self.n_items, self.n_classes, self.nnz))
            self.rows.astype("<i8").tofile(fh)
            self.cols.astype("<i8").tofile(fh)
            self.vals.astype("<i8").tofile(fh)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _MAGIC:
                raise DataError(f"{path}: not an ordinal matrix file")
            version, n_users, n_items, n_classes, nnz = struct.unpack(
                "<IIIIQ", fh.read(24))
            if version != _FORMAT_VERSION:
                raise DataError(f"{path}: unsupported format version {version}")
            rows = np.fromfile(fh, dtype="<i8", count=nnz)
            cols = np.fromfile(fh, dtype="<i8", count=nnz)
            vals = np.fromfile(fh, dtype="<i8", count=nnz)
            if vals.size != nnz:
                raise DataError(f"{path}: truncated file")
        return cls(n_users, n_items, n_classes, rows, cols, vals)


class QuantizationScheme:
    """Strictly increasing positive integer boundaries q_1 < ... < q_V.

    A count c maps to the smallest v with c <= q_v; counts above q_V fall
    into the open top class V+1, so the scheme defines V+1 non-zero classes.
    """

    def __init__(self, boundaries):
        boundaries = np.asarray(boundaries, dtype=np.int64)
        if boundaries.ndim != 1 or boundaries.size == 0:
            raise ConfigError("boundaries must be a non-empty 1-d sequence")
        if boundaries[0] <= 0 or np.any(np.diff(boundaries) <= 0):
            raise ConfigError("boundaries must be positive and strictly increasing")
        self.boundaries = boundaries
        self.boundaries.setflags(write=False)

    @property
    def n_classes(self):
        # boundaries define len(boundaries) closed buckets plus the open top
        return self.boundaries.size + 1

    def class_of(self, counts):
        counts = np.asarray(counts, dtype=np.int64)
        if np.any(counts <= 0):
            raise DataError("counts must be >= 1")
        v = np.searchsorted(self.boundaries, counts, side="left") + 1
        return int(v) if v.ndim == 0 else v


class RawTriplets:
    """Raw positive count triplets plus original-id <-> index maps."""

    def __init__(self, n_users, n_items, rows, cols, counts, user_ids, item_ids):
        self.n_users = n_users
        self.n_items = n_items
        self.rows = rows
        self.cols = cols
        self.counts = counts
        self.user_ids = user_ids
        self.item_ids = item_ids


def load_triplets(path, delimiter=None, skip_header=False):
    """Read (user id, item id, value) rows into RawTriplets.

    Ids may be arbitrary strings; contiguous 0-based indices are assigned in
    first-appearance order.  Values must be positive integers.  Duplicate
    (user, item) pairs are rejected.
    """
    user_index, item_index = {}, {}
    rows, cols, counts = [], [], []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 and skip_header:
                continue
            line = line.strip()
            if not line:
                continue
            parts = line.split(delimiter)
            if len(parts) != 3:
                raise ParseError(f"expected 3 fields, got {len(parts)}", lineno)
            uid, iid, raw = (p.strip() for p in parts)
            try:
                value = int(float(raw))
            except ValueError:
                raise ParseError(f"non-numeric value {raw!r}", lineno) from None
            if value <= 0:
                raise DataError(f"line {lineno}: non-positive value {value}")
            u = user_index.setdefault(uid, len(user_index))
            i = item_index.setdefault(iid, len(item_index))
            if (u, i) in seen:
                raise DataError(
                    f"line {lineno}: duplicate entry for ({uid}, {iid})")
            seen.add((u, i))
            rows.append(u)
            cols.append(i)
            counts.append(value)
    return RawTriplets(
        len(user_index), len(item_index),
        np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64),
        np.asarray(counts, dtype=np.int64),
        list(user_index), list(item_index))


def quantize_counts(triplets, scheme):
    """Map raw counts to ordinal classes under the quantization scheme."""
    vals = scheme.class_of(triplets.counts)
    return OrdinalMatrix(triplets.n_users, triplets.n_items, scheme.n_classes,
                         triplets.rows, triplets.cols, vals)


def matrix_from_classes(triplets, n_classes):
    """Treat the raw values as already-ordinal classes in 1..n_classes."""
    return OrdinalMatrix(triplets.n_users, triplets.n_items, n_classes,
                         triplets.rows, triplets.cols, triplets.counts)


def write_index_map(path, ids):
    with open(path, "w") as fh:
        for idx, orig in enumerate(ids):
            fh.write(f"{orig}\t{idx}\n")


def read_index_map(path):
    ids = []
    with open(path) as fh:
        for line in fh:
            orig, idx = line.rstrip("\n").split("\t")
            assert int(idx) == len(ids)
            ids.append(orig)
    return ids


def filter_activity(matrix, min_user_nnz, min_item_nnz, fixed_point=True):
    """Drop users/items with too few non-zeros; compact the index spaces.

    With fixed_point=True, removals are iterated until every surviving user
    and item meets its minimum simultaneously; otherwise one pass runs
    (users then items on the original degrees).
    """
    if min_user_nnz < 0 or min_item_nnz < 0:
        raise ConfigError("activity thresholds must be >= 0")
    rows, cols, vals = matrix.rows, matrix.cols, matrix.vals
    keep_u = np.ones(matrix.n_users, dtype=bool)
    keep_i = np.ones(matrix.n_items, dtype=bool)
    mask = np.ones(rows.size, dtype=bool)
    while True:
        u_deg = np.bincount(rows[mask], minlength=matrix.n_users)
        drop_u = keep_u & (u_deg < min_user_nnz)
        keep_u &= ~drop_u
        mask &= keep_u[rows]
        i_deg = np.bincount(cols[mask], minlength=matrix.n_items)
        drop_i = keep_i & (i_deg < min_item_nnz)
        keep_i &= ~drop_i
        mask &= keep_i[cols]
        if not fixed_point or (not drop_u.any() and not drop_i.any()):
            break
    new_u = np.cumsum(keep_u) - 1
    new_i = np.cumsum(keep_i) - 1
    return OrdinalMatrix(int(keep_u.sum()), int(keep_i.sum()), matrix.n_classes,
                         new_u[rows[mask]], new_i[cols[mask]], vals[mask])


def train_test_split(matrix, test_fraction, seed):
    """Partition the non-zero entries uniformly at random.

    Both outputs keep the full (n_users, n_items, V) shape; held-out entries
    are simply absent from the train matrix.  Test size is
    floor(fraction * nnz), at least 1; requires nnz >= 2.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in (0, 1)")
    if matrix.nnz < 2:
        raise DataError("need at least 2 entries to split")
    n_test = max(1, int(np.floor(test_fraction * matrix.nnz)))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(matrix.nnz)
    test_idx = perm[:n_test]
    train_idx = perm[n_test:]

    def subset(idx):
        return OrdinalMatrix(matrix.n_users, matrix.n_items, matrix.n_classes,
                             matrix.rows[idx], matrix.cols[idx], matrix.vals[idx])

    return subset(train_idx), subset(test_idx)
