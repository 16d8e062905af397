"""Radial grid model and tree validation.

All electrical quantities are stored in per-unit on the model's MVA base.
Injections are consumption-positive: a load adds to the flow on every
branch between it and the slack bus.
"""

from collections import deque
from dataclasses import dataclass, field

from .errors import ModelError, RadialityError


@dataclass(frozen=True)
class Bus:
    bus_id: int
    p_load: float  # per-unit active base load (consumption > 0)
    q_load: float  # per-unit reactive base load
    v_min: float   # per-unit voltage magnitude bounds
    v_max: float


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float  # per-unit resistance
    x: float  # per-unit reactance


@dataclass(frozen=True)
class GridModel:
    buses: tuple
    branches: tuple
    slack_bus: int
    v0: float
    base_mva: float

    def __post_init__(self):
        ids = [b.bus_id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ModelError(f"duplicate bus ids: {dup}")
        known = set(ids)
        if self.slack_bus not in known:
            raise ModelError(f"slack bus {self.slack_bus} not in bus set")
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise ModelError(f"branch {br.from_bus}-{br.to_bus} references unknown bus")
            if br.r < 0 or br.x < 0:
                raise ModelError(f"branch {br.from_bus}-{br.to_bus} has negative impedance")
        slack = self.bus(self.slack_bus)
        if not (slack.v_min <= self.v0 <= slack.v_max):
            raise ModelError(
                f"slack voltage {self.v0} outside bounds [{slack.v_min}, {slack.v_max}]"
            )

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_branch(self):
        return len(self.branches)

    def index_of(self, bus_id):
        try:
            return self._index()[bus_id]
        except KeyError:
            raise ModelError(f"unknown bus id {bus_id}") from None

    def bus(self, bus_id):
        return self.buses[self.index_of(bus_id)]

    def _index(self):
        # cached id -> position map; object.__setattr__ because frozen
        cache = self.__dict__.get("_idx_cache")
        if cache is None:
            cache = {b.bus_id: k for k, b in enumerate(self.buses)}
            object.__setattr__(self, "_idx_cache", cache)
        return cache


@dataclass(frozen=True)
class TreeOrder:
    """Topological bus ordering rooted at the slack.

    ``order`` lists internal bus indices, slack first, parents before
    children. ``parent[i]`` / ``parent_branch[i]`` give the upstream bus
    index and branch index of bus i (-1 at the slack). ``children[i]``
    lists (child bus index, branch index) pairs.
    """

    order: tuple
    parent: tuple
    parent_branch: tuple
    children: tuple = field(repr=False)


def validate_radial(model: GridModel) -> TreeOrder:
    """Check the branch set is a spanning tree and orient it from the slack.

    Raises RadialityError naming a cycle or the disconnected buses.
    """
    n = model.n_bus
    adj = [[] for _ in range(n)]
    for bi, br in enumerate(model.branches):
        fi = model.index_of(br.from_bus)
        ti = model.index_of(br.to_bus)
        if fi == ti:
            raise RadialityError(f"branch {br.from_bus}-{br.to_bus} is a self-loop")
        adj[fi].append((ti, bi))
        adj[ti].append((fi, bi))

    root = model.index_of(model.slack_bus)
    parent = [-2] * n
    parent_branch = [-1] * n
    order = []
    parent[root] = -1
    queue = deque([root])
    while queue:
        u = queue.popleft()
        order.append(u)
        for v, bi in adj[u]:
            if bi == parent_branch[u]:
                continue
            if parent[v] != -2:
                cycle = _trace_cycle(parent, u, v)
                names = [model.buses[k].bus_id for k in cycle]
                raise RadialityError(f"cycle through buses {names}")
            parent[v] = u
            parent_branch[v] = bi
            queue.append(v)

    if len(order) != n:
        missing = sorted(model.buses[k].bus_id for k in range(n) if parent[k] == -2)
        raise RadialityError(f"buses disconnected from slack: {missing}")
    if model.n_branch != n - 1:  # unreachable after the sweeps; kept as a guard
        raise RadialityError(
            f"{model.n_branch} branches for {n} buses; a radial feeder needs exactly {n - 1}")

    children = [[] for _ in range(n)]
    for v in range(n):
        if parent[v] >= 0:
            children[parent[v]].append((v, parent_branch[v]))
    return TreeOrder(
        order=tuple(order),
        parent=tuple(parent),
        parent_branch=tuple(parent_branch),
        children=tuple(tuple(c) for c in children),
    )


def _trace_cycle(parent, u, v):
    # walk both endpoints of the chord (u, v) up to their lowest common ancestor
    seen = {}
    a = u
    while a != -1 and a != -2:
        seen[a] = True
        a = parent[a]
    path_v = [v]
    b = v
    while b not in seen:
        b = parent[b]
        path_v.append(b)
    lca = path_v[-1]
    path_u = [u]
    a = u
    while a != lca:
        a = parent[a]
        path_u.append(a)
    return path_u + path_v[-2::-1]
