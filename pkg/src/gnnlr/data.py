"""Interaction logs, per-user histories, leave-one-out splits and sampling."""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

RATING_RANGE = (0.0, 5.0)


class DataError(ValueError):
    pass


class Interaction(NamedTuple):
    user: str
    item: str
    rating: float
    timestamp: int


class Event(NamedTuple):
    item: int
    positive: bool
    timestamp: int
    rating: float = 1.0


@dataclass
class UserHistory:
    user_index: int
    events: list  # list[Event], ascending by timestamp, stable

    def positives(self) -> list:
        return [e.item for e in self.events if e.positive]


@dataclass
class IdMaps:
    users: list  # dense index -> opaque id
    items: list

    def user_index(self) -> dict:
        return {u: i for i, u in enumerate(self.users)}

    def item_index(self) -> dict:
        return {v: i for i, v in enumerate(self.items)}


@dataclass
class SplitDataset:
    train: list  # list[UserHistory], valid/test targets removed
    valid_target: dict
    test_target: dict
    n_items: int
    n_users: int
    interacted: list  # per user: set of every interacted item index
    positives: list  # per user: set of positively rated item indices (incl. targets)
    ids: IdMaps = None
    _pos_mask: np.ndarray = field(default=None, repr=False)

    @property
    def positive_mask(self) -> np.ndarray:
        """``n_users x n_items`` boolean matrix of positive interactions."""
        if self._pos_mask is None:
            mask = np.zeros((self.n_users, self.n_items), dtype=bool)
            for u, items in enumerate(self.positives):
                mask[u, list(items)] = True
            self._pos_mask = mask
        return self._pos_mask

    def train_positives(self, user: int) -> list:
        return self.train[user].positives()

    def eval_history(self, user: int, which: str, max_history: int) -> list:
        """Most recent known positives before the held-out target.

        The test history includes the validation item.
        """
        hist = self.train_positives(user)
        if which == "test" and user in self.valid_target:
            hist = hist + [self.valid_target[user]]
        elif which not in ("valid", "test"):
            raise ValueError(f"unknown split {which!r}")
        return hist[-max_history:] if max_history else []


# ------------------------------------------------------------------- parsing


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def parse_interactions(path, format: str = "tsv") -> list:
    """Read ``user, item, rating, timestamp`` rows in file order.

    A first line whose rating field is not numeric is taken as a header.
    """
    if format not in ("tsv", "csv"):
        raise DataError(f"unknown format {format!r}")
    delimiter = "\t" if format == "tsv" else ","
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, fields in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) < 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
            user, item, rating, ts = (f.strip() for f in fields[:4])
            if not rows and lineno == 1 and not _is_number(rating):
                continue
            try:
                r = float(rating)
                t = int(float(ts))
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric rating or timestamp") from None
            if t < 0:
                raise DataError(f"{path}:{lineno}: negative timestamp {t}")
            if not RATING_RANGE[0] <= r <= RATING_RANGE[1]:
                raise DataError(f"{path}:{lineno}: rating {r} outside {RATING_RANGE}")
            rows.append(Interaction(user, item, r, t))
    if not rows:
        raise DataError(f"{path}: no interactions parsed")
    return rows


def build_histories(interactions, rating_threshold: float = 3.0):
    """Assign dense ids in first-appearance order and time-sort each user.

    An event is positive when its rating is strictly above ``rating_threshold``.
    Returns ``(histories, IdMaps)``.
    """
    if not interactions:
        raise DataError("no interactions")
    users, items = {}, {}
    per_user = []
    for row in interactions:
        u = users.setdefault(row.user, len(users))
        v = items.setdefault(row.item, len(items))
        if u == len(per_user):
            per_user.append([])
        per_user[u].append(Event(v, row.rating > rating_threshold, row.timestamp, row.rating))
    histories = [
        UserHistory(u, sorted(evts, key=lambda e: e.timestamp))  # sorted() is stable
        for u, evts in enumerate(per_user)
    ]
    return histories, IdMaps(list(users), list(items))


def leave_one_out_split(histories, n_items: int, min_positives: int = 3,
                        ids: IdMaps = None) -> SplitDataset:
    """Hold out each user's last two positive events (valid, then test)."""
    if min_positives < 2:
        raise ValueError("min_positives must be at least 2")
    train, valid, test = [], {}, {}
    interacted, positives = [], []
    for h in histories:
        pos_at = [k for k, e in enumerate(h.events) if e.positive]
        events = list(h.events)
        if len(pos_at) >= min_positives:
            valid[h.user_index] = events[pos_at[-2]].item
            test[h.user_index] = events[pos_at[-1]].item
            held = {pos_at[-2], pos_at[-1]}
            events = [e for k, e in enumerate(events) if k not in held]
        train.append(UserHistory(h.user_index, events))
        interacted.append({e.item for e in h.events})
        positives.append({e.item for e in h.events if e.positive})
    return SplitDataset(train, valid, test, n_items, len(histories),
                        interacted, positives, ids)


# ------------------------------------------------------------------ sampling


def sample_train_negative(split: SplitDataset, user: int, rng: np.random.Generator) -> int:
    """Uniform draw from items the user never rated positively."""
    mask = split.positive_mask[user]
    if mask.all():
        raise DataError(f"user {user} has no negative candidates")
    while True:
        v = int(rng.integers(split.n_items))
        if not mask[v]:
            return v


def sample_train_negatives(split: SplitDataset, users, rng: np.random.Generator) -> np.ndarray:
    """Vectorised :func:`sample_train_negative` (rejection sampling)."""
    users = np.asarray(users, dtype=np.intp)
    mask = split.positive_mask
    if mask[users].all(axis=1).any():
        raise DataError("a user has no negative candidates")
    out = rng.integers(split.n_items, size=users.size)
    bad = mask[users, out]
    while bad.any():
        out[bad] = rng.integers(split.n_items, size=int(bad.sum()))
        bad = mask[users, out]
    return out


def sample_eval_negatives(split: SplitDataset, user: int, count: int,
                          rng: np.random.Generator, target: int = None) -> np.ndarray:
    """``count`` distinct items the user never rated positively."""
    excluded = split.positive_mask[user].copy()
    if target is not None:
        excluded[target] = True
    pool = np.flatnonzero(~excluded)
    if pool.size < count:
        raise DataError(
            f"user {user}: only {pool.size} negative candidates, {count} requested"
        )
    return rng.choice(pool, size=count, replace=False)


# ------------------------------------------------------------ split directory

_COLUMNS = ["user", "item", "rating", "timestamp", "positive"]


def write_split_dir(out_dir, histories, split: SplitDataset):
    """Write ``train.tsv``, ``valid.tsv``, ``test.tsv`` and ``vocab.tsv``.

    Rows carry opaque ids plus a 0/1 positive flag. ``train.tsv`` lists each
    user's events in time order, users in dense-index order. ``histories``
    are the unsplit histories the held-out targets come from.
    """
    ids = split.ids
    os.makedirs(out_dir, exist_ok=True)

    def fmt(u, e):
        return [ids.users[u], ids.items[e.item], repr(e.rating), str(e.timestamp),
                str(int(e.positive))]

    def target_rows(targets, rank):
        rows = []
        for u in sorted(targets):
            pos = [e for e in histories[u].events if e.positive]
            rows.append(fmt(u, pos[rank]))
        return rows

    _write_tsv(os.path.join(out_dir, "train.tsv"),
               [fmt(h.user_index, e) for h in split.train for e in h.events])
    _write_tsv(os.path.join(out_dir, "valid.tsv"), target_rows(split.valid_target, -2))
    _write_tsv(os.path.join(out_dir, "test.tsv"), target_rows(split.test_target, -1))
    with open(os.path.join(out_dir, "vocab.tsv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("kind\tid\tindex\n")
        for i, u in enumerate(ids.users):
            fh.write(f"user\t{u}\t{i}\n")
        for i, v in enumerate(ids.items):
            fh.write(f"item\t{v}\t{i}\n")


def _write_tsv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(_COLUMNS) + "\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")


def _read_tsv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader)
        return header, [r for r in reader if r]


def vocab_hash(data_dir) -> str:
    with open(os.path.join(data_dir, "vocab.tsv"), "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


def load_split(data_dir) -> SplitDataset:
    """Inverse of :func:`write_split_dir`."""
    _, vocab = _read_tsv(os.path.join(data_dir, "vocab.tsv"))
    users = [r[1] for r in vocab if r[0] == "user"]
    items = [r[1] for r in vocab if r[0] == "item"]
    ids = IdMaps(users, items)
    u_idx, i_idx = ids.user_index(), ids.item_index()
    n_users, n_items = len(users), len(items)

    def events_of(name):
        _, rows = _read_tsv(os.path.join(data_dir, name))
        for r in rows:
            yield u_idx[r[0]], Event(i_idx[r[1]], r[4] == "1", int(r[3]), float(r[2]))

    train_events = [[] for _ in range(n_users)]
    for u, e in events_of("train.tsv"):
        train_events[u].append(e)
    train = [UserHistory(u, evts) for u, evts in enumerate(train_events)]
    valid = {u: e.item for u, e in events_of("valid.tsv")}
    test = {u: e.item for u, e in events_of("test.tsv")}
    interacted = [{e.item for e in h.events} for h in train]
    positives = [{e.item for e in h.events if e.positive} for h in train]
    for targets in (valid, test):
        for u, v in targets.items():
            interacted[u].add(v)
            positives[u].add(v)
    return SplitDataset(train, valid, test, n_items, n_users, interacted, positives, ids)


def dataset_stats(interactions, split: SplitDataset) -> dict:
    n_inter = len(interactions)
    return {
        "users": split.n_users,
        "items": split.n_items,
        "interactions": n_inter,
        "density": n_inter / (split.n_users * split.n_items),
        "eval_users": len(split.test_target),
    }
