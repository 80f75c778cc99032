"""Episode data model, deterministic environment generators and frame rendering.

Two environment families are provided:

* single-agent grid worlds (``four_rooms`` and ``door_key``),
  driven by a breadth-first scripted planner;
* a multi-entity collection arena where marines greedily walk to the nearest shard.

Every generator is a pure function of its arguments.  Episodes are immutable.
"""

from __future__ import annotations

import base64
import collections
import dataclasses
import json
import os
import tempfile
import zlib
from typing import Optional, Union

import numpy as np

from .errors import GenerationError, InvariantError, ParseError

Cell = tuple[int, int]

DIRECTIONS = ("right", "down", "left", "up")
DIR_VECTORS = {"right": (1, 0), "down": (0, 1), "left": (-1, 0), "up": (0, -1)}
_TURN_LEFT = {"right": "up", "up": "left", "left": "down", "down": "right"}
_TURN_RIGHT = {v: k for k, v in _TURN_LEFT.items()}

GRID_ACTIONS = ("left", "right", "forward", "pickup", "drop", "open", "close")
PLANNER_ACTIONS = ("forward", "left", "right", "pickup", "open")
LAYOUTS = ("four_rooms", "door_key")
DOOR_STATUSES = ("open", "closed", "locked")
ENTITY_KINDS = ("marine", "shard", "beacon")

DEFAULT_STEP_CAP = 200
MAX_LAYOUT_ATTEMPTS = 16
GROUP_RADIUS = 4

# Rendered intensity bands.
WALL_LEVEL = 0.5
GOAL_LEVEL = 0.3
KEY_LEVEL = 0.7
DOOR_LEVEL = 0.6
PLAYER_LEVEL = 1.0
PLAYER_THRESHOLD = 0.95

FORMAT_VERSION = 1


@dataclasses.dataclass(frozen=True)
class Door:
    pos: Cell
    status: str  # open | closed | locked


@dataclasses.dataclass(frozen=True)
class GridState:
    width: int
    height: int
    walls: frozenset
    player_pos: Cell
    player_dir: str
    goal: Cell
    key: Optional[Cell] = None
    carrying: bool = False
    door: Optional[Door] = None

    def __post_init__(self):
        def inside(c):
            return 0 <= c[0] < self.width and 0 <= c[1] < self.height

        if self.player_dir not in DIR_VECTORS:
            raise InvariantError(f"unknown direction {self.player_dir!r}")
        for name, cell in (("player_pos", self.player_pos), ("goal", self.goal)):
            if not inside(cell):
                raise InvariantError(f"{name} {cell} outside {self.width}x{self.height} grid")
            if cell in self.walls:
                raise InvariantError(f"{name} {cell} is on a wall")
        if self.carrying and self.key is not None:
            raise InvariantError("a carried key has no cell")
        if self.key is not None and not inside(self.key):
            raise InvariantError(f"key {self.key} outside grid")
        if self.door is not None and self.door.status not in DOOR_STATUSES:
            raise InvariantError(f"unknown door status {self.door.status!r}")

    @property
    def has_key(self):
        return self.carrying or self.key is not None

    def front_cell(self):
        dx, dy = DIR_VECTORS[self.player_dir]
        return (self.player_pos[0] + dx, self.player_pos[1] + dy)


@dataclasses.dataclass(frozen=True)
class Entity:
    id: int
    kind: str
    pos: Cell


@dataclasses.dataclass(frozen=True)
class Group:
    group_id: int
    members: tuple  # entity ids, in arena order
    anchor: Cell


@dataclasses.dataclass(frozen=True)
class EntityState:
    entities: tuple  # of Entity
    groups: tuple = ()  # of Group

    def __post_init__(self):
        ids = [e.id for e in self.entities]
        if len(set(ids)) != len(ids):
            raise InvariantError("entity ids must be unique")
        for e in self.entities:
            if e.kind not in ENTITY_KINDS:
                raise InvariantError(f"unknown entity kind {e.kind!r}")
        pos = {e.id: e.pos for e in self.entities}
        for g in self.groups:
            if len(g.members) < 2:
                raise InvariantError(f"group {g.group_id} has fewer than 2 members")
            for a in g.members:
                for b in g.members:
                    if _chebyshev(pos[a], pos[b]) > GROUP_RADIUS:
                        raise InvariantError(f"group {g.group_id} members {a}, {b} too far apart")

    def by_id(self):
        return {e.id: e for e in self.entities}


class Raster:
    """A greyscale image; ``intensities`` is indexed ``[row, column]``."""

    __slots__ = ("intensities",)

    def __init__(self, intensities):
        arr = np.array(intensities, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvariantError(f"raster must be a non-empty 2-d grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise InvariantError("raster intensities must be finite and within [0, 1]")
        arr.setflags(write=False)
        self.intensities = arr

    @property
    def width(self):
        return self.intensities.shape[1]

    @property
    def height(self):
        return self.intensities.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return np.array_equal(self.intensities, other.intensities)

    def __repr__(self):
        return f"Raster({self.width}x{self.height})"


@dataclasses.dataclass(frozen=True)
class Step:
    step_no: int
    state: Union[GridState, EntityState]
    action: Optional[str]


@dataclasses.dataclass(frozen=True)
class Episode:
    env_kind: str  # grid | multi_entity
    seed: int
    steps: tuple
    frames: Optional[tuple] = None
    meta: dict = dataclasses.field(default_factory=dict, compare=True)

    def __post_init__(self):
        if self.env_kind not in ("grid", "multi_entity"):
            raise InvariantError(f"unknown env_kind {self.env_kind!r}")
        for i, step in enumerate(self.steps):
            if step.step_no != i:
                raise InvariantError(
                    f"step numbers must increase by 1 from 0; position {i} has step_no {step.step_no}"
                )
        if self.frames is not None and len(self.frames) != len(self.steps):
            raise InvariantError(f"{len(self.frames)} frames for {len(self.steps)} steps")

    def __len__(self):
        return len(self.steps)

    @property
    def ref(self):
        kind = self.meta.get("layout", self.env_kind)
        return f"{kind}-{self.seed}"


# --------------------------------------------------------------------------
# grid worlds


def _chebyshev(a, b):
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def _blocked(state, cell):
    x, y = cell
    if not (0 <= x < state.width and 0 <= y < state.height):
        return True
    if cell in state.walls:
        return True
    if state.door is not None and state.door.pos == cell and state.door.status != "open":
        return True
    return state.key is not None and state.key == cell


def step_grid(state, action):
    """Apply one action; actions that cannot take effect leave the state unchanged."""
    if action not in GRID_ACTIONS:
        raise ValueError(f"unknown grid action {action!r}")
    if action == "left":
        return dataclasses.replace(state, player_dir=_TURN_LEFT[state.player_dir])
    if action == "right":
        return dataclasses.replace(state, player_dir=_TURN_RIGHT[state.player_dir])
    front = state.front_cell()
    if action == "forward":
        if _blocked(state, front):
            return state
        return dataclasses.replace(state, player_pos=front)
    if action == "pickup":
        if not state.carrying and state.key == front:
            return dataclasses.replace(state, key=None, carrying=True)
        return state
    if action == "drop":
        if state.carrying and not _blocked(state, front) and front != state.goal:
            return dataclasses.replace(state, key=front, carrying=False)
        return state
    door = state.door
    if door is None or door.pos != front:
        return state
    if action == "open":
        if door.status == "closed" or (door.status == "locked" and state.carrying):
            return dataclasses.replace(state, door=Door(door.pos, "open"))
        return state
    # close
    if door.status == "open" and state.player_pos != door.pos:
        return dataclasses.replace(state, door=Door(door.pos, "closed"))
    return state


def plan_path(state, max_depth=DEFAULT_STEP_CAP * 4):
    """Shortest action sequence from ``state`` to the goal, or ``None``."""

    def key(s):
        return (s.player_pos, s.player_dir, s.key, s.carrying, s.door)

    start = key(state)
    parents = {start: None}
    frontier = collections.deque([(state, 0)])
    while frontier:
        s, depth = frontier.popleft()
        if s.player_pos == s.goal:
            path = []
            k = key(s)
            while parents[k] is not None:
                k, action = parents[k]
                path.append(action)
            return path[::-1]
        if depth >= max_depth:
            continue
        for action in PLANNER_ACTIONS:
            nxt = step_grid(s, action)
            k = key(nxt)
            if k not in parents:
                parents[k] = (key(s), action)
                frontier.append((nxt, depth + 1))
    return None


def _free_cells(width, height, walls, taken=()):
    return [
        (x, y)
        for y in range(height)
        for x in range(width)
        if (x, y) not in walls and (x, y) not in taken
    ]


def _pick(rng, cells):
    return cells[int(rng.integers(len(cells)))]


def _border(size):
    walls = set()
    for i in range(size):
        walls.update({(i, 0), (i, size - 1), (0, i), (size - 1, i)})
    return walls


def _layout_four_rooms(size, rng):
    walls = _border(size)
    mid = size // 2
    for i in range(1, size - 1):
        walls.add((mid, i))
        walls.add((i, mid))
    gaps = [
        (mid, int(rng.integers(1, mid))),
        (mid, int(rng.integers(mid + 1, size - 1))),
        (int(rng.integers(1, mid)), mid),
        (int(rng.integers(mid + 1, size - 1)), mid),
    ]
    walls.difference_update(gaps)
    free = _free_cells(size, size, walls)
    player = _pick(rng, free)
    goal = _pick(rng, [c for c in free if c != player])
    direction = DIRECTIONS[int(rng.integers(4))]
    return GridState(size, size, frozenset(walls), player, direction, goal)


def _layout_door_key(size, rng):
    walls = _border(size)
    split = int(rng.integers(2, size - 2))
    for y in range(1, size - 1):
        walls.add((split, y))
    door_pos = (split, int(rng.integers(1, size - 1)))
    walls.discard(door_pos)
    left = [c for c in _free_cells(size, size, walls) if c[0] < split]
    key = _pick(rng, left)
    player = _pick(rng, [c for c in left if c != key])
    direction = DIRECTIONS[int(rng.integers(4))]
    goal = (size - 2, size - 2)
    return GridState(
        size, size, frozenset(walls), player, direction, goal, key=key, door=Door(door_pos, "locked")
    )


def generate_grid_episode(layout, size, seed, *, step_cap=DEFAULT_STEP_CAP, cell_px=None):
    """Generate a scripted grid-world episode.

    The scripted agent follows a breadth-first shortest plan to the goal.  The
    episode stops at the goal or after ``step_cap`` actions.  When ``cell_px``
    is given, a rendered frame accompanies every step.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if size < 5:
        raise ValueError(f"grid size must be >= 5, got {size}")
    builder = _layout_four_rooms if layout == "four_rooms" else _layout_door_key
    for attempt in range(MAX_LAYOUT_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        state = builder(size, rng)
        plan = plan_path(state)
        if plan is not None:
            break
    else:
        raise GenerationError(
            f"no solvable {layout} layout after {MAX_LAYOUT_ATTEMPTS} attempts (seed {seed})"
        )
    steps = [Step(0, state, None)]
    for action in plan[:step_cap]:
        state = step_grid(state, action)
        steps.append(Step(len(steps), state, action))
    frames = None
    if cell_px is not None:
        frames = tuple(render_frame(s.state, cell_px) for s in steps)
    meta = {"layout": layout, "size": size, "step_cap": step_cap}
    return Episode("grid", seed, tuple(steps), frames, meta)


def triangle_mask(cell_px, direction="right", angle=None):
    """Boolean pixel mask of the player glyph within one cell.

    The base spans 60% of the cell and the apex sits at 90% toward the facing
    edge.  Cardinal headings are rasterised with integer arithmetic so the
    glyph is exactly symmetric; ``angle`` (degrees, counter-clockwise on
    screen, 0 = right) rasterises an arbitrary rotation instead.
    """
    if cell_px < 8:
        raise ValueError(f"cell_px must be >= 8 to resolve the player glyph, got {cell_px}")
    c = cell_px
    if angle is None:
        # Everything in units of 1/20 pixel: pixel centres at 20*i + 10.
        base_x, tip_x = 2 * c, 18 * c
        y_lo, y_mid, y_hi = 4 * c, 10 * c, 16 * c
        px = 20 * np.arange(c)[None, :] + 10
        py = 20 * np.arange(c)[:, None] + 10
        # Inside the base line and the two slanted edges.
        upper = (tip_x - base_x) * (py - y_lo) - (y_mid - y_lo) * (px - base_x)
        lower = (tip_x - base_x) * (y_hi - py) - (y_hi - y_mid) * (px - base_x)
        mask = (px >= base_x) & (upper >= 0) & (lower >= 0)
        turns = {"right": 0, "up": 1, "left": 2, "down": 3}[direction]
        if direction == "left":
            return np.fliplr(mask)
        return np.rot90(mask, turns)
    theta = np.deg2rad(angle)
    centre = c / 2.0
    local = np.array([[0.1 * c, 0.2 * c], [0.1 * c, 0.8 * c], [0.9 * c, 0.5 * c]]) - centre
    rot = np.array([[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]])
    verts = local @ rot.T + centre
    px = np.arange(c)[None, :] + 0.5
    py = np.arange(c)[:, None] + 0.5
    signs = []
    for i in range(3):
        (x0, y0), (x1, y1) = verts[i], verts[(i + 1) % 3]
        signs.append((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0))
    pos = (signs[0] >= 0) & (signs[1] >= 0) & (signs[2] >= 0)
    neg = (signs[0] <= 0) & (signs[1] <= 0) & (signs[2] <= 0)
    return pos | neg


def door_patch(cell_px, status):
    """Expected pixels of a door cell: filled when shut, a thin frame when open."""
    patch = np.zeros((cell_px, cell_px))
    if status == "open":
        t = max(1, cell_px // 8)
        patch[:t, :] = patch[-t:, :] = DOOR_LEVEL
        patch[:, :t] = patch[:, -t:] = DOOR_LEVEL
    else:
        patch[:, :] = DOOR_LEVEL
    return patch


def render_frame(state, cell_px, player_angle=None):
    """Rasterise a grid state; ``player_angle`` overrides the glyph heading (degrees)."""
    if cell_px < 8:
        raise ValueError(f"cell_px must be >= 8 to resolve the player glyph, got {cell_px}")
    c = cell_px
    img = np.zeros((state.height * c, state.width * c))

    def cell(pos):
        x, y = pos
        return img[y * c : (y + 1) * c, x * c : (x + 1) * c]

    for w in state.walls:
        cell(w)[:, :] = WALL_LEVEL
    cell(state.goal)[:, :] = GOAL_LEVEL
    if state.key is not None:
        q = c // 4
        cell(state.key)[q : c - q, q : c - q] = KEY_LEVEL
    if state.door is not None:
        cell(state.door.pos)[:, :] = door_patch(c, state.door.status)
    if player_angle is None:
        mask = triangle_mask(c, state.player_dir)
    else:
        mask = triangle_mask(c, angle=player_angle)
    cell(state.player_pos)[mask] = PLAYER_LEVEL
    return Raster(img)


def cell_patch(frame, pos, cell_px):
    x, y = pos
    return frame.intensities[y * cell_px : (y + 1) * cell_px, x * cell_px : (x + 1) * cell_px]


def player_blob(frame, state):
    """Isolate the player glyph: pixels of the player's cell in the player band."""
    cell_px = frame.width // state.width
    patch = cell_patch(frame, state.player_pos, cell_px)
    return Raster(np.where(patch >= PLAYER_THRESHOLD, patch, 0.0))


# --------------------------------------------------------------------------
# multi-entity arena


def _new_id(rng, used):
    while True:
        eid = int(rng.integers(10**9, 10**10))
        if eid not in used:
            used.add(eid)
            return eid


def _random_cell(rng, arena, occupied):
    while True:
        cell = (int(rng.integers(arena)), int(rng.integers(arena)))
        if cell not in occupied:
            return cell


def partition_groups(marines, radius=GROUP_RADIUS):
    """Greedy deterministic partition of marines into sets pairwise within ``radius``.

    ``marines`` is a sequence of ``(id, pos)`` in arena order.  Sets with
    fewer than two members are discarded.
    """
    assigned = set()
    sets = []
    for i, (mid, pos) in enumerate(marines):
        if mid in assigned:
            continue
        members = [(mid, pos)]
        for oid, opos in marines[i + 1 :]:
            if oid in assigned:
                continue
            if all(_chebyshev(opos, p) <= radius for _, p in members):
                members.append((oid, opos))
        if len(members) >= 2:
            assigned.update(m for m, _ in members)
            sets.append(members)
    return sets


def best_match(members, candidate_sets):
    """Index of the candidate set sharing the most members (first wins ties), or None."""
    members = set(members)
    best, best_overlap = None, 0
    for idx, cand in enumerate(candidate_sets):
        overlap = len(members & set(cand))
        if overlap > best_overlap:
            best, best_overlap = idx, overlap
    return best


def group_anchor(positions):
    xs = [p[0] for p in positions]
    ys = [p[1] for p in positions]
    return (int(np.floor(np.mean(xs) + 0.5)), int(np.floor(np.mean(ys) + 0.5)))


def match_groups(prev_groups, new_sets, next_id):
    """Carry group identities across a step.

    Each previous group claims the new set it overlaps most.  A new set with
    no claimant forms a fresh group id; with several claimants it keeps the id
    of the largest-overlap (then lowest id) claimant and the others merge
    into it.  Returns ``(groups, next_id)``.
    """
    member_sets = [[m for m, _ in s] for s in new_sets]
    claims = collections.defaultdict(list)
    for g in sorted(prev_groups, key=lambda g: g.group_id):
        idx = best_match(g.members, member_sets)
        if idx is not None:
            claims[idx].append(g)
    groups = []
    for idx, s in enumerate(new_sets):
        members = tuple(member_sets[idx])
        claimants = claims.get(idx)
        if claimants:
            primary = max(
                claimants, key=lambda g: (len(set(g.members) & set(members)), -g.group_id)
            )
            gid = primary.group_id
        else:
            gid = next_id
            next_id += 1
        groups.append(Group(gid, members, group_anchor([p for _, p in s])))
    return tuple(groups), next_id


def generate_multientity_episode(
    n_marines,
    n_shards,
    arena,
    seed,
    *,
    length=60,
    n_beacons=0,
    replace_shards=True,
    beacon_move_prob=0.25,
):
    """Generate a marine/shard collection episode.

    Marines take one king move per step toward their nearest uncollected
    shard.  A shard entered by a marine is collected and, when
    ``replace_shards`` holds, a fresh shard appears at a seeded cell.
    Beacons, if any, wander randomly.
    """
    if n_marines < 1:
        raise ValueError(f"n_marines must be >= 1, got {n_marines}")
    if n_shards < 0 or n_beacons < 0:
        raise ValueError("n_shards and n_beacons must be >= 0")
    if arena < 2:
        raise ValueError(f"arena extent must be >= 2, got {arena}")
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if n_marines + n_shards + n_beacons > arena * arena:
        raise ValueError("arena too small for the requested entities")
    rng = np.random.default_rng(seed)
    used = set()
    occupied = set()
    marines, shards, beacons = [], [], []
    for _ in range(n_marines):
        pos = _random_cell(rng, arena, occupied)
        occupied.add(pos)
        marines.append([_new_id(rng, used), pos])
    for _ in range(n_shards):
        pos = _random_cell(rng, arena, occupied)
        occupied.add(pos)
        shards.append([_new_id(rng, used), pos])
    for _ in range(n_beacons):
        pos = _random_cell(rng, arena, occupied)
        occupied.add(pos)
        beacons.append([_new_id(rng, used), pos])

    next_gid = 1
    groups = ()

    def snapshot():
        entities = (
            [Entity(i, "marine", p) for i, p in marines]
            + [Entity(i, "shard", p) for i, p in shards]
            + [Entity(i, "beacon", p) for i, p in beacons]
        )
        return EntityState(tuple(entities), groups)

    groups, next_gid = match_groups((), partition_groups([tuple(m) for m in marines]), next_gid)
    steps = [Step(0, snapshot(), None)]
    for t in range(1, length):
        for m in marines:
            if not shards:
                continue
            mx, my = m[1]
            target = min(shards, key=lambda s: (mx - s[1][0]) ** 2 + (my - s[1][1]) ** 2)
            tx, ty = target[1]
            m[1] = (mx + int(np.sign(tx - mx)), my + int(np.sign(ty - my)))
        for shard in list(shards):
            if any(m[1] == shard[1] for m in marines):
                shards.remove(shard)
                if replace_shards:
                    taken = {tuple(m[1]) for m in marines} | {tuple(s[1]) for s in shards}
                    shards.append([_new_id(rng, used), _random_cell(rng, arena, taken)])
        for b in beacons:
            if rng.random() < beacon_move_prob:
                dx, dy = int(rng.integers(-1, 2)), int(rng.integers(-1, 2))
                bx, by = b[1]
                b[1] = (min(max(bx + dx, 0), arena - 1), min(max(by + dy, 0), arena - 1))
        groups, next_gid = match_groups(
            groups, partition_groups([tuple(m) for m in marines]), next_gid
        )
        steps.append(Step(t, snapshot(), "advance"))
    meta = {
        "n_marines": n_marines,
        "n_shards": n_shards,
        "arena": arena,
        "length": length,
        "n_beacons": n_beacons,
        "replace_shards": replace_shards,
    }
    return Episode("multi_entity", seed, tuple(steps), None, meta)


# --------------------------------------------------------------------------
# serialisation
#
# An episode file is UTF-8 text.  Line 1 is the magic "#episode v1".  Line 2
# is a JSON header {"env_kind", "seed", "n_steps", "has_frames", "meta"}.
# Then one JSON object per step, {"step_no", "action", "state"}, and, when
# has_frames, one JSON object per frame {"frame", "width", "height", "data"}
# where data is base64 of zlib-compressed little-endian float64 row-major
# intensities.


def _cell(v):
    return None if v is None else [int(v[0]), int(v[1])]


def _encode_state(state):
    if isinstance(state, GridState):
        return {
            "width": state.width,
            "height": state.height,
            "walls": sorted(_cell(w) for w in state.walls),
            "player_pos": _cell(state.player_pos),
            "player_dir": state.player_dir,
            "goal": _cell(state.goal),
            "key": _cell(state.key),
            "carrying": state.carrying,
            "door": None
            if state.door is None
            else {"pos": _cell(state.door.pos), "status": state.door.status},
        }
    return {
        "entities": [[e.id, e.kind, _cell(e.pos)] for e in state.entities],
        "groups": [[g.group_id, list(g.members), _cell(g.anchor)] for g in state.groups],
    }


def _tup(v):
    return None if v is None else (int(v[0]), int(v[1]))


def _decode_state(env_kind, obj):
    if env_kind == "grid":
        door = obj["door"]
        return GridState(
            width=int(obj["width"]),
            height=int(obj["height"]),
            walls=frozenset(_tup(w) for w in obj["walls"]),
            player_pos=_tup(obj["player_pos"]),
            player_dir=obj["player_dir"],
            goal=_tup(obj["goal"]),
            key=_tup(obj["key"]),
            carrying=bool(obj["carrying"]),
            door=None if door is None else Door(_tup(door["pos"]), door["status"]),
        )
    return EntityState(
        tuple(Entity(int(i), k, _tup(p)) for i, k, p in obj["entities"]),
        tuple(Group(int(g), tuple(int(m) for m in ms), _tup(a)) for g, ms, a in obj["groups"]),
    )


def _encode_frame(idx, raster):
    raw = np.ascontiguousarray(raster.intensities, dtype="<f8").tobytes()
    return {
        "frame": idx,
        "width": raster.width,
        "height": raster.height,
        "data": base64.b64encode(zlib.compress(raw, 9)).decode("ascii"),
    }


def _decode_frame(obj):
    raw = zlib.decompress(base64.b64decode(obj["data"]))
    arr = np.frombuffer(raw, dtype="<f8").reshape(int(obj["height"]), int(obj["width"]))
    return Raster(arr)


def dumps_episode(episode):
    lines = [f"#episode v{FORMAT_VERSION}"]
    header = {
        "env_kind": episode.env_kind,
        "seed": episode.seed,
        "n_steps": len(episode.steps),
        "has_frames": episode.frames is not None,
        "meta": episode.meta,
    }
    lines.append(json.dumps(header, sort_keys=True))
    for step in episode.steps:
        obj = {"step_no": step.step_no, "action": step.action, "state": _encode_state(step.state)}
        lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))
    if episode.frames is not None:
        for i, frame in enumerate(episode.frames):
            lines.append(json.dumps(_encode_frame(i, frame), sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def loads_episode(text):
    """Parse an episode document; raises ParseError or InvariantError."""
    data = text.encode("utf-8")
    lines = data.split(b"\n")
    offsets = [0]
    for line in lines[:-1]:
        offsets.append(offsets[-1] + len(line) + 1)
    if not text.endswith("\n"):
        raise ParseError("truncated episode file: missing final newline", len(data), None)
    lines, offsets = lines[:-1], offsets[:-1]
    if not lines or lines[0].decode("utf-8") != f"#episode v{FORMAT_VERSION}":
        raise ParseError("not an episode file (bad magic line)", 0, "magic")

    def decode(i, what):
        if i >= len(lines):
            raise ParseError(f"truncated episode file: missing {what}", len(data), what)
        try:
            return json.loads(lines[i])
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed {what}: {exc.msg}", offsets[i] + exc.pos, what) from None

    header = decode(1, "header")
    for field in ("env_kind", "seed", "n_steps", "has_frames", "meta"):
        if field not in header:
            raise ParseError("missing header field", offsets[1], field)
    env_kind = header["env_kind"]
    n_steps = int(header["n_steps"])
    steps = []
    line_no = 2
    for k in range(n_steps):
        obj = decode(line_no, f"steps[{k}]")
        try:
            state = _decode_state(env_kind, obj["state"])
            steps.append(Step(int(obj["step_no"]), state, obj["action"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvariantError):
                raise
            raise ParseError(f"bad step record: {exc!r}", offsets[line_no], f"steps[{k}]") from None
        line_no += 1
    frames = None
    if header["has_frames"]:
        frames = []
        for k in range(n_steps):
            obj = decode(line_no, f"frames[{k}]")
            try:
                frames.append(_decode_frame(obj))
            except (KeyError, TypeError, ValueError, zlib.error) as exc:
                if isinstance(exc, InvariantError):
                    raise
                raise ParseError(f"bad frame record: {exc!r}", offsets[line_no], f"frames[{k}]") from None
            line_no += 1
        frames = tuple(frames)
    if line_no != len(lines):
        raise ParseError("trailing content after episode", offsets[line_no], None)
    return Episode(env_kind, int(header["seed"]), tuple(steps), frames, header["meta"])


def atomic_write(path, payload):
    """Write text or bytes to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    mode = "wb" if isinstance(payload, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_episode(episode, path):
    atomic_write(path, dumps_episode(episode))


def load_episode(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("episode file is not UTF-8", exc.start, None) from None
    return loads_episode(text)
