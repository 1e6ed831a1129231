"""MovieLens ingestion and deterministic train/test/server-seed partitioning."""

from __future__ import annotations

import datetime as _dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

AGE_ADULT = ">18"
AGE_MINOR = "<=18"

_FILES = {
    "ml100k": ("u.data", "u.user"),
    "ml1m": ("ratings.dat", "users.dat"),
}


class DatasetError(ValueError):
    """Base class for every ingestion or partitioning failure."""


class ParseError(DatasetError):
    def __init__(self, path, lineno, line, reason):
        self.path, self.lineno = str(path), lineno
        super().__init__(f"{path}:{lineno}: {reason}: {line!r}")


class ValidationError(DatasetError):
    pass


@dataclass
class RatingDataset:
    """Explicit ratings with contiguous 0-based ids plus binary user attributes.

    ``users``, ``items`` and ``values`` are parallel arrays sorted by (user, item).
    ``attributes`` maps an attribute name to a length-``n`` array of group labels.
    """

    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    n: int
    m: int
    attributes: dict[str, np.ndarray]
    user_ids: np.ndarray  # original id of each reindexed user
    item_ids: np.ndarray
    rating_range: tuple[float, float] = (1.0, 5.0)
    source: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.values)

    def group_counts(self, attribute):
        labels, counts = np.unique(self.attributes[attribute], return_counts=True)
        return dict(zip(labels.tolist(), counts.tolist()))


def _read_lines(path, sep, nfields, lo, hi):
    rows = []
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split(sep)
            if len(parts) < nfields:
                raise ParseError(path, lineno, line, f"expected {nfields} fields")
            try:
                u, i, r = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ParseError(path, lineno, line, "non-numeric field") from exc
            if not lo <= r <= hi:
                raise ValidationError(f"{path}:{lineno}: rating {r} outside [{lo}, {hi}]")
            rows.append((u, i, r))
    return rows


def _read_users(path, fmt):
    profiles = {}
    sep = "|" if fmt == "ml100k" else "::"
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split(sep)
            if len(parts) < 3:
                raise ParseError(path, lineno, line, "expected at least 3 fields")
            try:
                uid = int(parts[0])
                if fmt == "ml100k":
                    age, gender = int(parts[1]), parts[2]
                else:
                    gender, age = parts[1], int(parts[2])
            except ValueError as exc:
                raise ParseError(path, lineno, line, "non-numeric field") from exc
            if gender not in ("M", "F"):
                raise ParseError(path, lineno, line, f"unknown gender {gender!r}")
            # ml1m stores age bands (band 1 is "Under 18"); the ml100k cut at <=18
            # reproduces the published 889/54 group sizes
            minor = age <= 18 if fmt == "ml100k" else age == 1
            profiles[uid] = (gender, AGE_MINOR if minor else AGE_ADULT)
    return profiles


def load_movielens(path, format="ml100k"):
    """Load a MovieLens directory (``u.data``/``u.user`` or ``ratings.dat``/``users.dat``).

    Users and items are reindexed to contiguous ids in ascending order of their
    original ids. Gender becomes ``M``/``F``; age becomes ``>18``/``<=18``.
    """
    if format not in _FILES:
        raise DatasetError(f"unknown format {format!r}; expected one of {sorted(_FILES)}")
    path = Path(path)
    rating_file, user_file = (path / f for f in _FILES[format])
    for f in (rating_file, user_file):
        if not f.is_file():
            raise DatasetError(f"missing file: {f}")

    sep = "\t" if format == "ml100k" else "::"
    rows = _read_lines(rating_file, sep, 3, 1.0, 5.0)
    if not rows:
        raise ValidationError(f"{rating_file}: no ratings")
    profiles = _read_users(user_file, format)

    raw = np.array(rows, dtype=np.float64)
    raw_u, raw_i = raw[:, 0].astype(np.int64), raw[:, 1].astype(np.int64)
    user_ids, users = np.unique(raw_u, return_inverse=True)
    item_ids, items = np.unique(raw_i, return_inverse=True)

    pairs = users.astype(np.int64) * len(item_ids) + items
    if len(np.unique(pairs)) != len(pairs):
        raise ValidationError(f"{rating_file}: duplicate (user, item) pairs")

    missing = [int(u) for u in user_ids if int(u) not in profiles]
    if missing:
        raise ValidationError(f"{user_file}: no demographics for user {missing[0]}"
                              f" ({len(missing)} users missing)")

    order = np.lexsort((items, users))
    return RatingDataset(
        users=users[order].astype(np.int64),
        items=items[order].astype(np.int64),
        values=raw[order, 2].copy(),
        n=len(user_ids),
        m=len(item_ids),
        attributes={
            "gender": np.array([profiles[int(u)][0] for u in user_ids]),
            "age": np.array([profiles[int(u)][1] for u in user_ids]),
        },
        user_ids=user_ids,
        item_ids=item_ids,
        source={"path": str(path), "format": format},
    )


@dataclass
class Partition:
    """Per-rating split labels over a dataset.

    ``train_mask``/``test_mask`` select client ratings; ``seed_mask`` selects the
    ratings of withheld seed users, which never join the client population.
    """

    dataset: RatingDataset
    train_mask: np.ndarray
    test_mask: np.ndarray
    seed_mask: np.ndarray
    seed_users: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def client_users(self):
        ds = self.dataset
        active = np.zeros(ds.n, dtype=bool)
        active[ds.users[self.train_mask]] = True
        return np.flatnonzero(active)

    def _select(self, mask):
        ds = self.dataset
        return ds.users[mask], ds.items[mask], ds.values[mask]

    @property
    def train(self):
        return self._select(self.train_mask)

    @property
    def test(self):
        return self._select(self.test_mask)

    @property
    def server_seed(self):
        return self._select(self.seed_mask)

    def per_user(self, which="train"):
        """Return ``{user: (items, values)}`` for ``train``, ``test`` or ``seed``."""
        mask = {"train": self.train_mask, "test": self.test_mask, "seed": self.seed_mask}[which]
        u, i, r = self._select(mask)
        bounds = np.flatnonzero(np.diff(u)) + 1
        return {int(us[0]): (it, rv) for us, it, rv in
                zip(np.split(u, bounds), np.split(i, bounds), np.split(r, bounds)) if len(us)}

    def to_manifest(self, path=None):
        """Serialize the split as a JSON manifest keyed by original ids."""
        ds = self.dataset
        test_u, test_i, _ = self.test
        test_items = {}
        for u, i in zip(test_u.tolist(), test_i.tolist()):
            test_items.setdefault(str(int(ds.user_ids[u])), []).append(int(ds.item_ids[i]))
        manifest = {
            "header": {
                "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                "source": ds.source,
            },
            "params": self.params,
            "counts": {
                "users": ds.n,
                "items": ds.m,
                "ratings": len(ds),
                "clients": int(len(self.client_users)),
                "train": int(self.train_mask.sum()),
                "test": int(self.test_mask.sum()),
                "seed_users": int(len(self.seed_users)),
                "seed_ratings": int(self.seed_mask.sum()),
            },
            "seed_users": [int(ds.user_ids[u]) for u in self.seed_users],
            "test_items": test_items,
        }
        if path is not None:
            Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True))
        return manifest

    @classmethod
    def from_manifest(cls, dataset, manifest):
        if not isinstance(manifest, dict):
            manifest = json.loads(Path(manifest).read_text())
        ds = dataset
        uid = {int(u): k for k, u in enumerate(ds.user_ids)}
        iid = {int(i): k for k, i in enumerate(ds.item_ids)}
        try:
            seed_users = np.array(sorted(uid[u] for u in manifest["seed_users"]), dtype=np.int64)
            test_keys = {uid[int(u)] * ds.m + iid[i]
                         for u, items in manifest["test_items"].items() for i in items}
        except KeyError as exc:
            raise ValidationError(f"manifest references unknown id {exc}") from exc
        seed_mask = np.isin(ds.users, seed_users)
        test_mask = np.isin(ds.users * ds.m + ds.items, np.fromiter(test_keys, np.int64, len(test_keys)))
        if (test_mask & seed_mask).any():
            raise ValidationError("manifest assigns a seed user's rating to test")
        return cls(ds, ~(test_mask | seed_mask), test_mask, seed_mask, seed_users,
                   dict(manifest.get("params", {})))


def _choose_seed_users(counts, frac, rng):
    if frac <= 0:
        return np.empty(0, dtype=np.int64)
    target = frac * counts.sum()
    order = rng.permutation(len(counts))
    cum = np.concatenate([[0], np.cumsum(counts[order])])
    take = int(np.argmin(np.abs(cum - target)))
    return np.sort(order[:take])


def split(dataset, train_frac=0.8, seed_user_frac=0.0, rng_seed=0):
    """Per-user random train/test split with an optional withheld seed-user set.

    Seed users are drawn as the prefix of a random user order whose total
    rating count is closest to ``seed_user_frac`` of all ratings.
    """
    if not 0 < train_frac < 1:
        raise DatasetError(f"train_frac must be in (0, 1), got {train_frac}")
    if not 0 <= seed_user_frac < 1:
        raise DatasetError(f"seed_user_frac must be in [0, 1), got {seed_user_frac}")
    ds = dataset
    seed_rng, split_rng = (np.random.default_rng(s)
                           for s in np.random.SeedSequence(rng_seed).spawn(2))

    counts = np.bincount(ds.users, minlength=ds.n)
    seed_users = _choose_seed_users(counts, seed_user_frac, seed_rng)
    seed_mask = np.isin(ds.users, seed_users)

    test_mask = np.zeros(len(ds), dtype=bool)
    starts = np.concatenate([[0], np.cumsum(counts)])
    seed_set = set(seed_users.tolist())
    for u in range(ds.n):
        c = int(counts[u])
        if u in seed_set or c == 0:
            continue
        if c < 2:
            log.info("user %d has %d rating(s); kept entirely in train", u, c)
            continue
        n_train = min(c - 1, max(1, int(np.floor(train_frac * c + 0.5))))
        perm = split_rng.permutation(c)
        test_mask[starts[u] + perm[n_train:]] = True

    train_mask = ~(test_mask | seed_mask)
    params = {"train_frac": train_frac, "seed_user_frac": seed_user_frac, "rng_seed": rng_seed}
    return Partition(ds, train_mask, test_mask, seed_mask, seed_users, params)


def restrict_seed_items(partition, keep_frac, rng_seed=0):
    """Keep a random ``keep_frac`` share (at least one) of each seed user's ratings."""
    if not 0 < keep_frac <= 1:
        raise DatasetError(f"keep_frac must be in (0, 1], got {keep_frac}")
    if keep_frac == 1:
        return partition
    rng = np.random.default_rng(rng_seed)
    ds = partition.dataset
    seed_mask = np.zeros_like(partition.seed_mask)
    idx = np.flatnonzero(partition.seed_mask)
    for u in partition.seed_users:
        rows = idx[ds.users[idx] == u]
        keep = max(1, int(np.floor(keep_frac * len(rows) + 0.5)))
        seed_mask[rng.choice(rows, size=keep, replace=False)] = True
    params = dict(partition.params, seed_keep_frac=keep_frac, seed_keep_seed=rng_seed)
    return Partition(ds, partition.train_mask, partition.test_mask, seed_mask,
                     partition.seed_users, params)


def make_synthetic(n=60, m=40, k=3, density=0.3, minority_frac=0.3, group_noise=0.5,
                   rng_seed=0):
    """Small low-rank rating set with binary gender and age labels.

    Ratings are ``round(clip(3 + U V^T + noise))`` on a random mask holding at
    least two ratings per user. Users labelled ``F`` get ``group_noise`` extra
    noise standard deviation so the two genders are not treated alike.
    """
    rng = np.random.default_rng(rng_seed)
    U, V = rng.normal(0, 0.8, (n, k)), rng.normal(0, 0.8, (m, k))
    female = rng.random(n) < minority_frac
    minor = rng.random(n) < minority_frac
    female[0], female[1] = True, False  # both labels always present
    minor[0], minor[1] = False, True
    mask = rng.random((n, m)) < density
    for u in range(n):
        if mask[u].sum() < 2:
            mask[u, rng.choice(m, 2, replace=False)] = True
    users, items = np.nonzero(mask)
    sd = 0.3 + group_noise * female[users]
    raw = 3.0 + np.einsum("ij,ij->i", U[users], V[items]) + rng.normal(0, 1, len(users)) * sd
    return RatingDataset(
        users=users.astype(np.int64), items=items.astype(np.int64),
        values=np.clip(np.round(raw), 1, 5),
        n=n, m=m,
        attributes={"gender": np.where(female, "F", "M"),
                    "age": np.where(minor, AGE_MINOR, AGE_ADULT)},
        user_ids=np.arange(1, n + 1), item_ids=np.arange(1, m + 1),
        source={"path": "synthetic", "format": "synthetic", "rng_seed": rng_seed},
    )


def write_movielens(dataset, path, format="ml100k"):
    """Write ``dataset`` in the native MovieLens layout ``load_movielens`` reads."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ds = dataset
    rating_file, user_file = (path / f for f in _FILES[format])
    sep = "\t" if format == "ml100k" else "::"
    with open(rating_file, "w") as fh:
        for u, i, r in zip(ds.users, ds.items, ds.values):
            fh.write(f"{ds.user_ids[u]}{sep}{ds.item_ids[i]}{sep}{int(r)}{sep}0\n")
    with open(user_file, "w") as fh:
        for u in range(ds.n):
            minor = ds.attributes["age"][u] == AGE_MINOR
            g = ds.attributes["gender"][u]
            if format == "ml100k":
                fh.write(f"{ds.user_ids[u]}|{15 if minor else 30}|{g}|other|00000\n")
            else:
                fh.write(f"{ds.user_ids[u]}::{g}::{1 if minor else 25}::0::00000\n")
    return path
