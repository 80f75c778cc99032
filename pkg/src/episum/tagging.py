"""Template-driven natural-language tags for episodes.

Every tag text is an instantiation of exactly one template in ``TEMPLATES``;
:func:`parse_tag` recovers the template and slot values from any emitted text.
"""

from __future__ import annotations

import collections
import dataclasses
import enum
import math
import os
import re

import numpy as np

from . import moments
from .episodes import PLAYER_THRESHOLD, best_match, cell_patch, door_patch, player_blob
from .errors import ParseError


class TemplateId(enum.IntEnum):
    PLAYER_AT = 1
    GOAL_AT = 2
    KEY_AT = 3
    DOOR_AT = 4
    PLAYER_FACING = 5
    DOOR_STATE = 6
    KEY_CARRIED = 7
    PLAYER_TURNS = 8
    PLAYER_FORWARD = 9
    PLAYER_KEY = 10
    PLAYER_DOOR = 11
    PLAYER_GOAL = 12
    NON_CARDINAL = 13
    DOOR_UNKNOWN = 14
    UNIT_MOVES = 20
    APPEARS = 21
    SHARD_COLLECTED = 22
    MARINE_COLLECTS = 23
    MARINE_RELATIVE = 24
    ENTITY_GROUP = 25
    ENTITIES_GROUP = 26
    GROUP_DISSOLVED = 27
    GROUP_MERGES = 28
    GROUP_MOVES = 29


_XY = r"\((-?\d+), (-?\d+)\)"
_ID = r"(\d+)"

# template id -> (kind, regex)
TEMPLATES = {
    TemplateId.PLAYER_AT: ("state", rf"The player is at {_XY}\."),
    TemplateId.GOAL_AT: ("state", rf"The goal is at {_XY}\."),
    TemplateId.KEY_AT: ("state", rf"The key is at {_XY}\."),
    TemplateId.DOOR_AT: ("state", rf"The door is at {_XY}\."),
    TemplateId.PLAYER_FACING: ("state", r"The player is facing (left|right|up|down)\."),
    TemplateId.DOOR_STATE: ("state", r"The door is (open|closed)\."),
    TemplateId.KEY_CARRIED: ("state", r"The key has been picked up\."),
    TemplateId.PLAYER_TURNS: ("event", r"The player turns (left|right)\."),
    TemplateId.PLAYER_FORWARD: ("event", r"The player moves forward\."),
    TemplateId.PLAYER_KEY: ("event", r"The player (picks up|drops) the key\."),
    TemplateId.PLAYER_DOOR: ("event", r"The player (opens|closes) the door\."),
    TemplateId.PLAYER_GOAL: ("event", r"The player reached the goal\."),
    TemplateId.NON_CARDINAL: ("anomaly", r"The player is facing a non-cardinal direction\."),
    TemplateId.DOOR_UNKNOWN: ("anomaly", r"The state of the door is unknown\."),
    TemplateId.UNIT_MOVES: ("event", rf"(Marine|Beacon) {_ID} moves from {_XY} to {_XY}\."),
    TemplateId.APPEARS: ("event", rf"(Beacon|Shard) appears at {_XY}\."),
    TemplateId.SHARD_COLLECTED: ("event", rf"Shard {_ID} is collected\."),
    TemplateId.MARINE_COLLECTS: ("event", rf"Marine {_ID} collects shard {_ID}\."),
    TemplateId.MARINE_RELATIVE: (
        "event",
        rf"Marine {_ID} moves (closer to|farther from) (group|shard|beacon) {_ID}\.",
    ),
    TemplateId.ENTITY_GROUP: ("event", rf"Entity {_ID} (leaves|joins) group {_ID}\."),
    TemplateId.ENTITIES_GROUP: (
        "event",
        rf"Entities (\d+(?:, \d+)+) (leave|join|form) group {_ID}\.",
    ),
    TemplateId.GROUP_DISSOLVED: ("event", rf"Group {_ID} is dissolved\."),
    TemplateId.GROUP_MERGES: ("event", rf"Group {_ID} merges with group {_ID}\."),
    TemplateId.GROUP_MOVES: ("event", rf"Group {_ID} moves from {_XY} to {_XY}\."),
}
_COMPILED = {tid: re.compile(rx) for tid, (_, rx) in TEMPLATES.items()}
_TIMESTAMP = re.compile(r"^(\d+) -- (\d+) ")


def parse_tag(text):
    """Return ``(template_id, slots)`` for a tag text, timestamp prefix allowed."""
    body = _TIMESTAMP.sub("", text, count=1)
    hits = [(tid, m.groups()) for tid, rx in _COMPILED.items() if (m := rx.fullmatch(body))]
    if len(hits) != 1:
        raise ValueError(f"text matches {len(hits)} templates: {text!r}")
    return hits[0]


@dataclasses.dataclass(frozen=True)
class Tag:
    text: str
    step_start: int
    step_end: int
    kind: str
    template_id: TemplateId

    def __post_init__(self):
        if self.step_start > self.step_end:
            raise ValueError(f"step_start {self.step_start} > step_end {self.step_end}")

    @property
    def sort_key(self):
        return (self.step_start, int(self.template_id), self.text)


def make_tag(text, step_start, step_end=None):
    tid, _ = parse_tag(text)
    return Tag(text, step_start, step_start if step_end is None else step_end, TEMPLATES[tid][0], tid)


@dataclasses.dataclass(frozen=True)
class TagCorpus:
    episode_ref: str
    tags: tuple

    def __post_init__(self):
        object.__setattr__(self, "tags", tuple(sorted(self.tags, key=lambda t: t.sort_key)))

    def __len__(self):
        return len(self.tags)

    def __iter__(self):
        return iter(self.tags)

    def __getitem__(self, i):
        return self.tags[i]

    @property
    def texts(self):
        return [t.text for t in self.tags]


def _xy(c):
    return f"({c[0]}, {c[1]})"


# --------------------------------------------------------------------------
# grid episodes


def grid_state_tags(state, step, facing=None):
    facing = state.player_dir if facing is None else facing
    texts = [
        f"The player is at {_xy(state.player_pos)}.",
        f"The goal is at {_xy(state.goal)}.",
    ]
    if facing != moments.NON_CARDINAL:
        texts.append(f"The player is facing {facing}.")
    if state.key is not None:
        texts.append(f"The key is at {_xy(state.key)}.")
    elif state.carrying:
        texts.append("The key has been picked up.")
    if state.door is not None:
        texts.append(f"The door is at {_xy(state.door.pos)}.")
        texts.append(f"The door is {'open' if state.door.status == 'open' else 'closed'}.")
    return [make_tag(t, step) for t in texts]


def grid_event_tags(prev, curr, action, step):
    if prev is None or action is None:
        return []
    texts = []
    if action in ("left", "right") and prev.player_dir != curr.player_dir:
        texts.append(f"The player turns {action}.")
    elif action == "forward" and prev.player_pos != curr.player_pos:
        texts.append("The player moves forward.")
        if curr.player_pos == curr.goal:
            texts.append("The player reached the goal.")
    elif action == "pickup" and curr.carrying and not prev.carrying:
        texts.append("The player picks up the key.")
    elif action == "drop" and prev.carrying and not curr.carrying:
        texts.append("The player drops the key.")
    elif action == "open" and prev.door != curr.door and curr.door.status == "open":
        texts.append("The player opens the door.")
    elif action == "close" and prev.door != curr.door and curr.door.status != "open":
        texts.append("The player closes the door.")
    return [make_tag(t, step) for t in texts]


def tag_grid_step(prev, curr, action, step=0, facing=None):
    """State tags for ``curr`` plus event tags for the transition into it."""
    return grid_state_tags(curr, step, facing) + grid_event_tags(prev, curr, action, step)


def frame_facing(frame, state):
    return moments.infer_direction(player_blob(frame, state))


def door_signature(frame, state):
    """``"open"``, ``"closed"`` or ``None`` when the door cell matches neither rendering."""
    if state.door is None:
        return None
    cell_px = frame.width // state.width
    patch = cell_patch(frame, state.door.pos, cell_px)
    visible = patch < PLAYER_THRESHOLD
    for status in ("open", "closed"):
        expected = door_patch(cell_px, status)
        if np.allclose(patch[visible], expected[visible], atol=1e-6):
            return status
    return None


def tag_grid_anomalies(frame, curr, step=0):
    """Anomaly tags for a rendered frame aligned with ``curr``."""
    tags = []
    if frame_facing(frame, curr) == moments.NON_CARDINAL:
        tags.append(make_tag("The player is facing a non-cardinal direction.", step))
    if curr.door is not None and door_signature(frame, curr) is None:
        tags.append(make_tag("The state of the door is unknown.", step))
    return tags


def tag_grid_episode(episode):
    """Tag every step of a grid episode.

    With frames present, the player's heading is read from the rendered
    glyph rather than from the recorded state, and anomaly tags are added.
    """
    tags = []
    prev = None
    for i, step in enumerate(episode.steps):
        facing = None
        if episode.frames is not None:
            frame = episode.frames[i]
            facing = frame_facing(frame, step.state)
            tags.extend(tag_grid_anomalies(frame, step.state, step.step_no))
        tags.extend(tag_grid_step(prev, step.state, step.action, step.step_no, facing))
        prev = step.state
    return TagCorpus(episode.ref, tuple(tags))


# --------------------------------------------------------------------------
# multi-entity episodes


def _dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


class _Runs:
    """Coalesce per-step observations into maximal intervals with equal keys."""

    def __init__(self):
        self.open = {}
        self.closed = []

    def extend(self, subject, step, value, payload=None):
        cur = self.open.get(subject)
        if cur is not None and cur["value"] == value and cur["end"] == step - 1:
            cur["end"] = step
            cur["last"] = payload
            return
        self.close(subject)
        self.open[subject] = {"value": value, "start": step - 1, "end": step, "first": payload, "last": payload}

    def close(self, subject):
        cur = self.open.pop(subject, None)
        if cur is not None:
            self.closed.append((subject, cur))

    def close_all(self):
        for subject in sorted(self.open, key=repr):
            self.close(subject)
        return self.closed


def group_events(prev_groups, curr_groups):
    """Classify group changes between two consecutive steps into tag texts."""
    texts = []
    prev_by_id = {g.group_id: g for g in prev_groups}
    curr_ids = {g.group_id for g in curr_groups}
    curr_members = [g.members for g in curr_groups]
    merged_into = collections.defaultdict(list)
    for g in sorted(prev_groups, key=lambda g: g.group_id):
        if g.group_id in curr_ids:
            continue
        idx = best_match(g.members, curr_members)
        if idx is None:
            texts.append(f"Group {g.group_id} is dissolved.")
        else:
            merged_into[curr_groups[idx].group_id].append(g)
    for g in curr_groups:
        if g.group_id not in prev_by_id:
            ids = ", ".join(str(m) for m in g.members)
            texts.append(f"Entities {ids} form group {g.group_id}.")
            continue
        before = prev_by_id[g.group_id]
        absorbed = set()
        for other in merged_into.get(g.group_id, []):
            gone = [m for m in other.members if m not in g.members]
            texts.extend(_membership(gone, "leave", other.group_id))
            texts.append(f"Group {g.group_id} merges with group {other.group_id}.")
            absorbed.update(other.members)
        left = [m for m in before.members if m not in g.members]
        joined = [m for m in g.members if m not in before.members and m not in absorbed]
        texts.extend(_membership(left, "leave", g.group_id))
        texts.extend(_membership(joined, "join", g.group_id))
    return texts


def _membership(ids, verb, gid):
    if not ids:
        return []
    if len(ids) == 1:
        singular = {"leave": "leaves", "join": "joins"}[verb]
        return [f"Entity {ids[0]} {singular} group {gid}."]
    return [f"Entities {', '.join(str(i) for i in ids)} {verb} group {gid}."]


def tag_multientity_episode(episode, with_timestamps=False):
    """Tag a marine/shard episode; interval tags carry ``[start, end]`` steps."""
    if episode.env_kind != "multi_entity":
        raise ValueError(f"expected a multi_entity episode, got {episode.env_kind!r}")
    raw = []  # (text, start, end)
    moves = _Runs()
    relations = _Runs()
    group_moves = _Runs()
    prev = None
    for step in episode.steps:
        t = step.step_no
        state = step.state
        ents = state.by_id()
        if prev is None:
            for e in state.entities:
                if e.kind in ("shard", "beacon"):
                    raw.append((f"{e.kind.capitalize()} appears at {_xy(e.pos)}.", t, t))
            for text in group_events((), state.groups):
                raw.append((text, t, t))
            prev = state
            continue
        before = prev.by_id()
        marines = [e for e in state.entities if e.kind == "marine"]
        collected_by = {}
        for e in prev.entities:
            if e.kind == "shard" and e.id not in ents:
                who = [m.id for m in marines if m.pos == e.pos]
                if who:
                    collected_by[who[0]] = e.id
                    raw.append((f"Shard {e.id} is collected.", t, t))
                    raw.append((f"Marine {who[0]} collects shard {e.id}.", t, t))
        for e in state.entities:
            if e.id not in before and e.kind in ("shard", "beacon"):
                raw.append((f"{e.kind.capitalize()} appears at {_xy(e.pos)}.", t, t))
        for e in state.entities:
            if e.kind not in ("marine", "beacon") or e.id not in before:
                continue
            if e.pos != before[e.id].pos:
                moves.extend(e.id, t, e.kind, (before[e.id].pos, e.pos))
            else:
                moves.close(e.id)
            if e.id in collected_by:
                moves.close(e.id)
        prev_groups = {g.group_id: g for g in prev.groups}
        for m in marines:
            if m.id not in before:
                continue
            old = before[m.id].pos
            targets = []
            for e in state.entities:
                if e.kind in ("shard", "beacon") and e.id in before:
                    targets.append((e.kind, e.id, before[e.id].pos, e.pos))
            for g in state.groups:
                if g.group_id in prev_groups and m.id not in g.members:
                    targets.append(("group", g.group_id, prev_groups[g.group_id].anchor, g.anchor))
            seen = set()
            for kind, tid, then, now in targets:
                key = (m.id, kind, tid)
                seen.add(key)
                delta = _dist(m.pos, now) - _dist(old, then)
                if delta < 0:
                    relations.extend(key, t, "closer to")
                elif delta > 0:
                    relations.extend(key, t, "farther from")
                else:
                    relations.close(key)
            for key in [k for k in relations.open if k[0] == m.id and k not in seen]:
                relations.close(key)
        for g in state.groups:
            old = prev_groups.get(g.group_id)
            if old is not None and old.anchor != g.anchor:
                group_moves.extend(g.group_id, t, "moves", (old.anchor, g.anchor))
            else:
                group_moves.close(g.group_id)
        for gid in [k for k in group_moves.open if k not in {g.group_id for g in state.groups}]:
            group_moves.close(gid)
        for text in group_events(prev.groups, state.groups):
            raw.append((text, t, t))
        prev = state
    for eid, run in moves.close_all():
        kind = run["value"].capitalize()
        src, dst = run["first"][0], run["last"][1]
        raw.append((f"{kind} {eid} moves from {_xy(src)} to {_xy(dst)}.", run["start"], run["end"]))
    for (mid, kind, tid), run in relations.close_all():
        raw.append((f"Marine {mid} moves {run['value']} {kind} {tid}.", run["start"], run["end"]))
    for gid, run in group_moves.close_all():
        src, dst = run["first"][0], run["last"][1]
        raw.append((f"Group {gid} moves from {_xy(src)} to {_xy(dst)}.", run["start"], run["end"]))
    tags = []
    for text, start, end in raw:
        tag = make_tag(text, start, end)
        if with_timestamps:
            tag = dataclasses.replace(tag, text=f"{start} -- {end} {text}")
        tags.append(tag)
    return TagCorpus(episode.ref, tuple(tags))


def tag_episode(episode, with_timestamps=False):
    if episode.env_kind == "grid":
        return tag_grid_episode(episode)
    return tag_multientity_episode(episode, with_timestamps)


# --------------------------------------------------------------------------
# corpus files: "step_start<TAB>step_end<TAB>text" per line; lines starting
# with "#" are comments ("# episode=<ref>" names the episode).


def dumps_corpus(corpus):
    lines = [f"# episode={corpus.episode_ref}"]
    lines += [f"{t.step_start}\t{t.step_end}\t{t.text}" for t in corpus.tags]
    return "\n".join(lines) + "\n"


def loads_corpus(text):
    ref = ""
    tags = []
    offset = 0
    for line in text.splitlines(keepends=True):
        body = line.rstrip("\n")
        if body.startswith("# episode="):
            ref = body[len("# episode=") :]
        elif body and not body.startswith("#"):
            parts = body.split("\t")
            if len(parts) != 3:
                raise ParseError("corpus line needs 3 tab-separated fields", offset, "line")
            try:
                tags.append(make_tag(parts[2], int(parts[0]), int(parts[1])))
            except ValueError as exc:
                raise ParseError(str(exc), offset, "text") from None
        offset += len(line.encode("utf-8"))
    return TagCorpus(ref, tuple(tags))


def save_corpus(corpus, path):
    from .episodes import atomic_write

    atomic_write(path, dumps_corpus(corpus))


def load_corpus(path):
    with open(os.fspath(path), encoding="utf-8") as fh:
        return loads_corpus(fh.read())
