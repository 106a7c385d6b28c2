"""Partition users into groups with disjoint, guard-separated spatial signatures.

Users in one group can share a pilot sequence because their beamspace
supports do not collide; the grouping is a greedy first-fit over users
ordered by ascending central bin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .basis import SsiSet


class GroupingError(RuntimeError):
    pass


@dataclass(frozen=True)
class GroupingConfig:
    guard: int = 4
    max_groups: int | None = None

    def __post_init__(self):
        if self.guard < 0:
            raise ValueError("guard must be >= 0")


@dataclass
class GroupPlan:
    """User-index partition; groups[g] lists the members of group g."""

    groups: list[list[int]] = field(default_factory=list)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]

    def group_of(self, user: int) -> int:
        for g, members in enumerate(self.groups):
            if user in members:
                return g
        raise KeyError(user)

    def to_manifest(self) -> dict:
        return {"groups": [list(g) for g in self.groups]}


def circular_distance(a: SsiSet, b: SsiSet) -> int:
    """Minimal gap in bins between two intervals on the M-circle.

    Zero iff the intervals touch or overlap.
    """
    if a.m != b.m:
        raise ValueError("SSI sets live on different circles")
    m = a.m
    if a.overlaps(b):
        return 0
    gap_ab = (b.lo - a.hi - 1) % m
    gap_ba = (a.lo - b.hi - 1) % m
    return int(min(gap_ab, gap_ba))


def _compatible(a: SsiSet, b: SsiSet, guard: int) -> bool:
    d = circular_distance(a, b)
    return d >= guard and not a.overlaps(b)


def group_users(ssis: list[SsiSet], cfg: GroupingConfig) -> GroupPlan:
    """Greedy first-fit grouping by ascending central bin.

    Each user joins the lowest-index group where its signature keeps both
    the disjointness and the guard distance to every member; a new group
    opens otherwise. Raises GroupingError naming the user when max_groups
    would be exceeded.
    """
    order = sorted(range(len(ssis)), key=lambda k: (ssis[k].center % ssis[k].m, k))
    groups: list[list[int]] = []
    for user in order:
        placed = False
        for members in groups:
            if all(_compatible(ssis[user], ssis[other], cfg.guard) for other in members):
                members.append(user)
                placed = True
                break
        if not placed:
            if cfg.max_groups is not None and len(groups) >= cfg.max_groups:
                raise GroupingError(
                    f"user {user} cannot be placed within max_groups={cfg.max_groups}"
                )
            groups.append([user])
    return GroupPlan(groups=[sorted(g) for g in groups])
