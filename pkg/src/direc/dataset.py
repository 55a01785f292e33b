"""Loading, validation, splitting and summary of user/group/item interactions.

Three relations are read from a dataset directory:

    user_group.txt   user_id group_id     (participation, X)
    user_item.txt    user_id item_id      (consumption, Y)
    group_item.txt   group_id item_id     (group consumption, Z)

Each file holds one edge per line.  A first line of the form ``# M K N``
declares the entity counts; any other line starting with ``#`` is a comment.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

USER_GROUP_FILE = "user_group.txt"
USER_ITEM_FILE = "user_item.txt"
GROUP_ITEM_FILE = "group_item.txt"
RELATION_FILES = (USER_GROUP_FILE, USER_ITEM_FILE, GROUP_ITEM_FILE)

SPLIT_LABELS = ("train", "valid", "test")
SPLIT_RATIOS = (0.7, 0.1, 0.2)

_HEADER_RE = re.compile(r"^#\s*(\d+)\s+(\d+)\s+(\d+)\s*$")


class DatasetError(ValueError):
    """Base class for malformed or inconsistent interaction data."""


class DatasetParseError(DatasetError):
    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class DatasetValidationError(DatasetError):
    pass


def _as_edges(edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DatasetValidationError(f"edge list must have shape (E, 2), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """The three binary relations with their entity counts.

    Edge arrays are ``int64`` with shape ``(E, 2)``; row ``e`` of
    ``user_group`` is the edge with index ``e`` used by the split manifest.
    """

    num_users: int
    num_groups: int
    num_items: int
    user_group: np.ndarray
    user_item: np.ndarray
    group_item: np.ndarray

    def __post_init__(self):
        for name in ("user_group", "user_item", "group_item"):
            arr = _as_edges(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    @property
    def counts(self) -> tuple[int, int, int]:
        return self.num_users, self.num_groups, self.num_items

    def validate(self) -> None:
        for n, label in ((self.num_users, "users"), (self.num_groups, "groups"), (self.num_items, "items")):
            if n < 0:
                raise DatasetValidationError(f"negative number of {label}: {n}")
        specs = (
            ("user_group", self.num_users, self.num_groups),
            ("user_item", self.num_users, self.num_items),
            ("group_item", self.num_groups, self.num_items),
        )
        for name, n_left, n_right in specs:
            edges = getattr(self, name)
            if len(edges) == 0:
                continue
            bad = (edges[:, 0] < 0) | (edges[:, 0] >= n_left) | (edges[:, 1] < 0) | (edges[:, 1] >= n_right)
            if bad.any():
                e = int(np.flatnonzero(bad)[0])
                raise DatasetValidationError(
                    f"{name} edge {e} = ({edges[e, 0]}, {edges[e, 1]}) out of range "
                    f"[0, {n_left}) x [0, {n_right})"
                )
            codes = edges[:, 0] * max(n_right, 1) + edges[:, 1]
            uniq, first, counts = np.unique(codes, return_index=True, return_counts=True)
            if len(uniq) != len(codes):
                dup = edges[first[np.flatnonzero(counts > 1)[0]]]
                raise DatasetValidationError(f"duplicate {name} edge ({dup[0]}, {dup[1]})")

    def same_edges(self, other: "InteractionDataset") -> bool:
        if self.counts != other.counts:
            return False
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("user_group", "user_item", "group_item")
        )

    def with_user_item(self, user_item) -> "InteractionDataset":
        return InteractionDataset(
            self.num_users, self.num_groups, self.num_items, self.user_group, user_item, self.group_item
        )

    def memberships_by_user(self) -> list[np.ndarray]:
        """Edge indices of ``user_group`` grouped by user, in file order."""
        order = np.argsort(self.user_group[:, 0], kind="stable")
        bounds = np.searchsorted(self.user_group[order, 0], np.arange(self.num_users + 1))
        return [order[bounds[u]:bounds[u + 1]] for u in range(self.num_users)]


def _read_relation(path: Path):
    """Return (edges, declared_counts or None) for one relation file."""
    edges = []
    header = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _HEADER_RE.match(line)
                if m and lineno == 1:
                    header = tuple(int(x) for x in m.groups())
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DatasetParseError(path, lineno, f"expected 2 integer ids, found {len(parts)} tokens")
            try:
                left, right = int(parts[0]), int(parts[1])
            except ValueError:
                raise DatasetParseError(path, lineno, f"non-integer token in {line!r}") from None
            if left < 0 or right < 0:
                raise DatasetParseError(path, lineno, f"negative id in {line!r}")
            edges.append((left, right))
    return _as_edges(edges), header


def load_dataset(directory) -> InteractionDataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    relations = {}
    header = None
    for fname in RELATION_FILES:
        path = directory / fname
        if not path.is_file():
            raise FileNotFoundError(f"missing required file: {path}")
        edges, declared = _read_relation(path)
        if declared is not None:
            if header is not None and declared != header:
                raise DatasetValidationError(
                    f"{path}: declared counts {declared} disagree with earlier header {header}"
                )
            header = declared
        relations[fname] = edges

    ug, ui, gi = (relations[f] for f in RELATION_FILES)
    if header is not None:
        m, k, n = header
    else:
        def extent(*cols):
            vals = [c.max() + 1 for c in cols if len(c)]
            return int(max(vals)) if vals else 0

        m = extent(ug[:, 0], ui[:, 0])
        k = extent(ug[:, 1], gi[:, 0])
        n = extent(ui[:, 1], gi[:, 1])
    return InteractionDataset(m, k, n, ug, ui, gi)


def save_dataset(ds: InteractionDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = f"# {ds.num_users} {ds.num_groups} {ds.num_items}\n"
    for fname, edges in zip(RELATION_FILES, (ds.user_group, ds.user_item, ds.group_item)):
        with open(directory / fname, "w", encoding="utf-8") as fh:
            fh.write(header)
            fh.writelines(f"{a} {b}\n" for a, b in edges.tolist())


def remap_raw_dataset(src_dir, dst_dir) -> dict[str, dict[str, int]]:
    """Rewrite relation files keyed by arbitrary string tokens as dense 0-based ids.

    Ids are assigned in order of first appearance, scanning user_group,
    user_item, then group_item.  Returns the three token->id maps, which are
    also written as ``{users,groups,items}_map.txt`` next to the new files.
    """
    src_dir, dst_dir = Path(src_dir), Path(dst_dir)
    maps = {"users": {}, "groups": {}, "items": {}}
    kinds = {
        USER_GROUP_FILE: ("users", "groups"),
        USER_ITEM_FILE: ("users", "items"),
        GROUP_ITEM_FILE: ("groups", "items"),
    }
    remapped = {}
    for fname in RELATION_FILES:
        path = src_dir / fname
        if not path.is_file():
            raise FileNotFoundError(f"missing required file: {path}")
        left_kind, right_kind = kinds[fname]
        rows, seen = [], set()
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise DatasetParseError(path, lineno, f"expected 2 tokens, found {len(parts)}")
                a = maps[left_kind].setdefault(parts[0], len(maps[left_kind]))
                b = maps[right_kind].setdefault(parts[1], len(maps[right_kind]))
                if (a, b) not in seen:
                    seen.add((a, b))
                    rows.append((a, b))
        remapped[fname] = rows
    ds = InteractionDataset(
        len(maps["users"]), len(maps["groups"]), len(maps["items"]),
        remapped[USER_GROUP_FILE], remapped[USER_ITEM_FILE], remapped[GROUP_ITEM_FILE],
    )
    save_dataset(ds, dst_dir)
    for kind, mapping in maps.items():
        with open(dst_dir / f"{kind}_map.txt", "w", encoding="utf-8") as fh:
            fh.writelines(f"{token} {idx}\n" for token, idx in mapping.items())
    return maps


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    """Partition of the user-group edge indices into train/valid/test."""

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    seed: int

    def __post_init__(self):
        for name in SPLIT_LABELS:
            arr = np.sort(np.asarray(getattr(self, name), dtype=np.int64))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_edges(self) -> int:
        return len(self.train) + len(self.valid) + len(self.test)

    def labels(self) -> np.ndarray:
        out = np.empty(self.num_edges, dtype=object)
        for name in SPLIT_LABELS:
            out[getattr(self, name)] = name
        return out

    def check_partition(self, num_edges: int) -> None:
        allidx = np.concatenate([self.train, self.valid, self.test])
        if len(allidx) != num_edges or not np.array_equal(np.sort(allidx), np.arange(num_edges)):
            raise DatasetValidationError("split does not partition the user-group edges")

    def __eq__(self, other):
        if not isinstance(other, SplitAssignment):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in SPLIT_LABELS)


def split_counts(n: int) -> tuple[int, int, int]:
    """Per-user (train, valid, test) sizes for a user with ``n`` memberships.

    Users with fewer than three memberships keep everything in train.  Otherwise
    each share is floored and the leftover edges are handed out in the order
    train, test, valid.  A user with at least three memberships always ends up
    with at least one test edge.
    """
    if n < 3:
        return n, 0, 0
    sizes = [math.floor(n * r + 1e-9) for r in SPLIT_RATIOS]
    rest = n - sum(sizes)
    for slot in (0, 2, 1)[:rest]:
        sizes[slot] += 1
    if sizes[2] == 0:
        sizes[0] -= 1
        sizes[2] = 1
    return sizes[0], sizes[1], sizes[2]


def split_dataset(ds: InteractionDataset, seed: int) -> SplitAssignment:
    rng = np.random.default_rng(seed)
    parts = {name: [] for name in SPLIT_LABELS}
    for edges in ds.memberships_by_user():
        if len(edges) == 0:
            continue
        shuffled = edges[rng.permutation(len(edges))]
        n_train, n_valid, _ = split_counts(len(edges))
        parts["train"].append(shuffled[:n_train])
        parts["valid"].append(shuffled[n_train:n_train + n_valid])
        parts["test"].append(shuffled[n_train + n_valid:])
    arrays = {
        name: np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
        for name, chunks in parts.items()
    }
    return SplitAssignment(arrays["train"], arrays["valid"], arrays["test"], seed)


def write_split(split: SplitAssignment, path) -> None:
    labels = split.labels()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# seed {split.seed}\n")
        fh.writelines(f"{i} {label}\n" for i, label in enumerate(labels))


def read_split(path, num_edges: int | None = None) -> SplitAssignment:
    seed = 0
    parts = {name: [] for name in SPLIT_LABELS}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = re.match(r"#\s*seed\s+(-?\d+)", line)
                if m:
                    seed = int(m.group(1))
                continue
            tokens = line.split()
            if len(tokens) != 2 or tokens[1] not in parts:
                raise DatasetParseError(path, lineno, f"expected 'edge_index train|valid|test', got {line!r}")
            try:
                parts[tokens[1]].append(int(tokens[0]))
            except ValueError:
                raise DatasetParseError(path, lineno, f"non-integer edge index {tokens[0]!r}") from None
    split = SplitAssignment(parts["train"], parts["valid"], parts["test"], seed)
    if num_edges is not None:
        split.check_partition(num_edges)
    return split


def dataset_stats(ds: InteractionDataset) -> dict:
    m, k, n = ds.counts
    return {
        "num_users": m,
        "num_groups": k,
        "num_items": n,
        "user_group_edges": len(ds.user_group),
        "user_item_edges": len(ds.user_item),
        "group_item_edges": len(ds.group_item),
        "avg_groups_per_user": len(ds.user_group) / m if m else 0.0,
        "avg_items_per_user": len(ds.user_item) / m if m else 0.0,
        "avg_items_per_group": len(ds.group_item) / k if k else 0.0,
    }


def make_synthetic_dataset(
    num_users: int = 120,
    num_groups: int = 60,
    num_items: int = 80,
    num_communities: int = 4,
    groups_per_user: float = 4.0,
    items_per_user: float = 6.0,
    items_per_group: float = 2.5,
    noise: float = 0.1,
    seed: int = 0,
) -> InteractionDataset:
    """Planted-community generator for smoke tests and demos.

    Users, groups and items each belong to one community; with probability
    ``1 - noise`` an interaction stays inside the left endpoint's community.
    """
    rng = np.random.default_rng(seed)
    uc = rng.integers(num_communities, size=num_users)
    gc = rng.integers(num_communities, size=num_groups)
    ic = rng.integers(num_communities, size=num_items)

    def draw(left_comm, right_comm, mean, n_right):
        edges = set()
        for left, c in enumerate(left_comm):
            count = max(1, rng.poisson(mean))
            same = np.flatnonzero(right_comm == c)
            for _ in range(count):
                pool = same if (len(same) and rng.random() > noise) else np.arange(n_right)
                edges.add((left, int(rng.choice(pool))))
        return sorted(edges)

    ug = draw(uc, gc, groups_per_user, num_groups)
    ui = draw(uc, ic, items_per_user, num_items)
    gi = draw(gc, ic, items_per_group, num_items)
    return InteractionDataset(num_users, num_groups, num_items, ug, ui, gi)
