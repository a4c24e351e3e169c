"""Seeded task instances with oracle-checked gold answers, and prompt rendering."""

from __future__ import annotations

import enum
import json
import random
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any, Sequence

from tracewatch.backends.base import ConfigurationError
from tracewatch.geometry import Compass, DiagRelation, Direction, Pos, RelPos
from tracewatch.verifiers.game24 import render, solve24
from tracewatch.verifiers.maze import MazeGrid, QuestionKind, maze_oracle, parse_maze, render_maze
from tracewatch.verifiers.spatial import RelationStore, entailed_direction, entities_in_direction

LABELS = "ABCD"


class GenerationError(RuntimeError):
    pass


class TaskKind(str, enum.Enum):
    MAZE = "MAZE"
    SPATIALMAP = "SPATIALMAP"
    GAME24 = "GAME24"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            return cls.__members__.get(value.upper())
        return None


@dataclass
class TaskInstance:
    id: str
    kind: TaskKind
    payload: dict[str, Any]
    question_kind: str
    question: str
    options: list[tuple[str, str]] = field(default_factory=list)
    gold: Any = None
    seed: int = 0

    @property
    def option_map(self) -> dict[str, str]:
        return dict(self.options)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["options"] = [list(o) for o in self.options]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TaskInstance:
        return cls(
            id=d["id"],
            kind=TaskKind(d["kind"]),
            payload=d["payload"],
            question_kind=d["question_kind"],
            question=d["question"],
            options=[tuple(o) for o in d.get("options", [])],
            gold=d.get("gold"),
            seed=int(d.get("seed", 0)),
        )


def save_instances(instances: Sequence[TaskInstance], path: str | Path) -> None:
    Path(path).write_text(json.dumps([i.to_dict() for i in instances], indent=1) + "\n", encoding="utf-8")


def load_instances(path: str | Path) -> list[TaskInstance]:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"instance file not found: {p}")
    return [TaskInstance.from_dict(d) for d in json.loads(p.read_text(encoding="utf-8"))]


def _label_options(rng: random.Random, gold_text: str, distractors: Sequence[str]) -> tuple[list[tuple[str, str]], str]:
    texts = [gold_text, *distractors]
    rng.shuffle(texts)
    options = list(zip(LABELS, texts))
    gold = next(label for label, t in options if t == gold_text)
    return options, gold


def count_distractors(rng: random.Random, gold: int) -> list[str]:
    pool = sorted({max(0, gold + d) for d in (-3, -2, -1, 1, 2, 3)} - {gold})
    return [str(v) for v in rng.sample(pool, 3)]


# ---------------------------------------------------------------------------
# mazes

def _carve_path(rng: random.Random, height: int, width: int, length: int) -> list[Pos] | None:
    """Random self-avoiding walk whose cells never touch except consecutively."""
    interior = [(r, c) for r in range(1, height - 1) for c in range(1, width - 1)]
    path = [rng.choice(interior)]
    on_path = {path[0]}
    while len(path) < length:
        cur = path[-1]
        options = []
        for d in Direction:
            nxt = (cur[0] + d.delta[0], cur[1] + d.delta[1])
            if not (1 <= nxt[0] < height - 1 and 1 <= nxt[1] < width - 1) or nxt in on_path:
                continue
            touching = [
                (nxt[0] + e.delta[0], nxt[1] + e.delta[1])
                for e in Direction
                if (nxt[0] + e.delta[0], nxt[1] + e.delta[1]) in on_path
            ]
            if touching == [cur]:
                options.append(nxt)
        if not options:
            return None
        nxt = rng.choice(options)
        path.append(nxt)
        on_path.add(nxt)
    return path


def gen_maze_grid(seed: int, height: int = 9, width: int = 9, *, retries: int = 200) -> MazeGrid:
    if height < 5 or width < 5 or height % 2 == 0 or width % 2 == 0:
        raise ValueError("maze dimensions must be odd and at least 5x5")
    rng = random.Random(seed)
    cells = (height - 2) * (width - 2)
    for _ in range(retries):
        length = rng.randint(max(3, cells // 6), max(4, cells // 2))
        path = _carve_path(rng, height, width, length)
        if path is None:
            continue
        walls = frozenset((r, c) for r in range(height) for c in range(width)) - set(path)
        return MazeGrid(height, width, walls, path[0], path[-1], tuple(path))
    raise GenerationError(f"no path carved after {retries} attempts (seed {seed})")


_MAZE_QUESTIONS = {
    QuestionKind.RIGHT_TURNS: "How many right turns does the marked path from S to E make?",
    QuestionKind.TOTAL_TURNS: "How many turns (left or right) does the marked path from S to E make?",
    QuestionKind.RELATIVE_POSITION: "Where is the exit E relative to the start S?",
}


def gen_maze_instance(
    seed: int, height: int = 9, width: int = 9, question_kind: QuestionKind | str = QuestionKind.RIGHT_TURNS
) -> TaskInstance:
    kind = QuestionKind(question_kind)
    grid = gen_maze_grid(seed, height, width)
    rng = random.Random(f"maze-options-{seed}")
    gold_value = maze_oracle(grid, kind)
    if kind is QuestionKind.RELATIVE_POSITION:
        wrong = [r.value for r in RelPos if r is not gold_value]
        options, gold = _label_options(rng, gold_value.value, rng.sample(wrong, 3))
    else:
        options, gold = _label_options(rng, str(gold_value), count_distractors(rng, gold_value))
    return TaskInstance(
        id=f"maze-{kind.value}-{seed}",
        kind=TaskKind.MAZE,
        payload={"ascii": render_maze(grid), "height": height, "width": width},
        question_kind=kind.value,
        question=_MAZE_QUESTIONS[kind],
        options=options,
        gold=gold,
        seed=seed,
    )


def maze_grid_of(instance: TaskInstance) -> MazeGrid:
    return parse_maze(instance.payload["ascii"])


# ---------------------------------------------------------------------------
# spatial maps

PLACE_NAMES: tuple[str, ...] = (
    "Amber Anvil Forge",
    "Badger Bakehouse",
    "Cobalt Canoe Rentals",
    "Dandelion Dairy",
    "Ember Emporium",
    "Fennel Fishmonger",
    "Gecko Games",
    "Heron Hat Shop",
    "Iris Ironworks",
    "Jackal Jewelers",
    "Kiwi Kitchenware",
    "Lantern Library",
    "Meerkat Music Hall",
    "Nutmeg Noodle Bar",
    "Otter Opticians",
    "Pelican Pottery",
    "Quartz Quarry Store",
    "Raven Rug Gallery",
    "Saffron Soap Works",
    "Tortoise Tailors",
    "Umber Umbrella Co",
    "Vulture Vintage",
    "Walrus Woodshop",
    "Yak Yarn Barn",
)


class SpatialQuestion(str, enum.Enum):
    Q0 = "Q0"  # direction between two objects
    Q1 = "Q1"  # which object lies in a direction
    Q2 = "Q2"  # how many objects lie in a direction


def _direction_from_coords(a: Pos, b: Pos) -> Compass:
    """Diagonal of a relative to b; rows grow southwards, columns eastwards."""
    north = a[0] < b[0]
    west = a[1] < b[1]
    return {(True, True): Compass.NW, (True, False): Compass.NE, (False, True): Compass.SW, (False, False): Compass.SE}[
        (north, west)
    ]


def _spatial_layout(rng: random.Random, n: int) -> tuple[list[str], dict[str, Pos], list[DiagRelation]]:
    names = rng.sample(PLACE_NAMES, n)
    rows, cols = rng.sample(range(n * 3), n), rng.sample(range(n * 3), n)
    coords = {name: (rows[i], cols[i]) for i, name in enumerate(names)}
    relations: list[DiagRelation] = []
    # spanning tree in introduction order, then a few extra edges
    for i in range(1, n):
        j = rng.randrange(i)
        a, b = names[i], names[j]
        relations.append(DiagRelation(a, _direction_from_coords(coords[a], coords[b]), b))
    extra = rng.randint(1, max(1, n // 2))
    pairs = [(a, b) for i, a in enumerate(names) for b in names[:i]]
    rng.shuffle(pairs)
    for a, b in pairs[:extra]:
        rel = DiagRelation(a, _direction_from_coords(coords[a], coords[b]), b)
        if rel not in relations and DiagRelation(b, rel.dir.opposite(), a) not in relations:
            relations.append(rel)
    return names, coords, relations


def describe_map(names: Sequence[str], relations: Sequence[DiagRelation]) -> str:
    parts = [f"{names[0]} is in the map."]
    parts.extend(f"{r.render()}." for r in relations)
    return " ".join(parts)


def gen_spatial_instance(seed: int, n_objects: int = 5, question_kind: SpatialQuestion | str = SpatialQuestion.Q0,
                         *, retries: int = 500) -> TaskInstance:
    if not 4 <= n_objects <= 8:
        raise ValueError("n_objects must lie in [4, 8]")
    qk = SpatialQuestion(question_kind)
    if qk is SpatialQuestion.Q1 and n_objects < 5:
        # one correct object plus three entailed distractors needs four others
        raise ValueError("Q1 questions need at least 5 objects")
    rng = random.Random(f"spatial-{seed}-{qk.value}")
    for _ in range(retries):
        names, coords, relations = _spatial_layout(rng, n_objects)
        store = RelationStore.from_relations(relations, names)
        built = _spatial_question(rng, qk, names, store)
        if built is None:
            continue
        question, gold_text, distractors, extra = built
        options, gold = _label_options(rng, gold_text, distractors)
        return TaskInstance(
            id=f"spatial-{qk.value}-{seed}",
            kind=TaskKind.SPATIALMAP,
            payload={
                "entities": names,
                "relations": [[r.subject, r.dir.name, r.object] for r in relations],
                "coords": {k: list(v) for k, v in coords.items()},
                "description": describe_map(names, relations),
                **extra,
            },
            question_kind=qk.value,
            question=question,
            options=options,
            gold=gold,
            seed=seed,
        )
    raise GenerationError(f"no spatial layout fits {qk.value} after {retries} attempts (seed {seed})")


def _spatial_question(rng: random.Random, qk: SpatialQuestion, names: list[str], store: RelationStore):
    diagonals = [Compass.NW, Compass.NE, Compass.SW, Compass.SE]
    if qk is SpatialQuestion.Q0:
        pairs = [(x, y) for x in names for y in names if x != y and entailed_direction(store, x, y) is not None]
        if not pairs:
            return None
        x, y = rng.choice(pairs)
        d = entailed_direction(store, x, y)
        wrong = [c.value for c in diagonals if c is not d]
        return (f"In which direction is {x} relative to {y}?", d.value, wrong, {"query": [x, y]})
    anchor = rng.choice(names)
    direction = rng.choice(diagonals)
    inside = sorted(entities_in_direction(store, anchor, direction))
    others = [e for e in names if e != anchor]
    if qk is SpatialQuestion.Q1:
        outside = [e for e in others if entailed_direction(store, e, anchor) not in (None, direction)]
        if not inside or len(outside) < 3:
            return None
        return (
            f"Which object is in the {direction.value} of {anchor}?",
            rng.choice(inside),
            rng.sample(outside, 3),
            {"query": [anchor, direction.name]},
        )
    # Q2: only when every other object's direction is entailed, so the count is exact
    if any(entailed_direction(store, e, anchor) is None for e in others):
        return None
    count = len(inside)
    return (
        f"How many objects are in the {direction.value} of {anchor}?",
        str(count),
        count_distractors(rng, count),
        {"query": [anchor, direction.name]},
    )


def spatial_relations_of(instance: TaskInstance) -> list[DiagRelation]:
    return [DiagRelation(s, Compass[d], o) for s, d, o in instance.payload["relations"]]


def spatial_store_of(instance: TaskInstance) -> RelationStore:
    return RelationStore.from_relations(spatial_relations_of(instance), instance.payload["entities"])


# ---------------------------------------------------------------------------
# Game of 24

def gen_game24_instance(seed: int, solvable: bool = True, *, retries: int = 10_000) -> TaskInstance:
    rng = random.Random(f"game24-{seed}")
    for _ in range(retries):
        nums = sorted(rng.randint(1, 13) for _ in range(4))
        witness = solve24(nums)
        if (witness is not None) == solvable:
            return TaskInstance(
                id=f"game24-{seed}",
                kind=TaskKind.GAME24,
                payload={"numbers": nums},
                question_kind="make24",
                question=f"Use {', '.join(map(str, nums))} with +, -, *, / to make 24.",
                gold={"solvable": solvable, "witness": render(witness) if witness is not None else None},
                seed=seed,
            )
    raise GenerationError(f"no {'solvable' if solvable else 'unsolvable'} tuple found (seed {seed})")


def generate(kind: TaskKind | str, n: int, seed: int, **kw) -> list[TaskInstance]:
    """``n`` instances of ``kind`` cycling through its question kinds."""
    kind = TaskKind(kind)
    out = []
    for i in range(n):
        s = seed + i
        if kind is TaskKind.MAZE:
            qks = list(QuestionKind)
            out.append(gen_maze_instance(s, kw.get("height", 9), kw.get("width", 9), qks[i % len(qks)]))
        elif kind is TaskKind.SPATIALMAP:
            n_obj = kw.get("n_objects", 5)
            qks = [q for q in SpatialQuestion if n_obj >= 5 or q is not SpatialQuestion.Q1]
            out.append(gen_spatial_instance(s, n_obj, qks[i % len(qks)]))
        else:
            out.append(gen_game24_instance(s, kw.get("solvable", True)))
    return out


# ---------------------------------------------------------------------------
# prompts

STRUCTURED_METHODS = frozenset({"stepverify", "tot", "tot_value", "tot_verifier", "generate_test"})
PLAIN_METHODS = frozenset({"cot", "kstable", "eat", "deer", "bestofk", "majority"})
_TEMPLATE_FILES = {
    (TaskKind.MAZE, "structured"): "maze_structured.txt",
    (TaskKind.MAZE, "plain"): "maze_plain.txt",
    (TaskKind.SPATIALMAP, "structured"): "spatial_structured.txt",
    (TaskKind.SPATIALMAP, "plain"): "spatial_plain.txt",
    (TaskKind.GAME24, "structured"): "game24_structured.txt",
    (TaskKind.GAME24, "plain"): "game24_plain.txt",
}


def template_style(method: str) -> str:
    if method in STRUCTURED_METHODS:
        return "structured"
    if method in PLAIN_METHODS:
        return "plain"
    raise ConfigurationError(f"no prompt template is registered for method {method!r}")


def load_template(kind: TaskKind, style: str) -> Template:
    name = _TEMPLATE_FILES.get((kind, style))
    if name is None:
        raise ConfigurationError(f"no template for {kind.value}/{style}")
    try:
        text = resources.files("tracewatch").joinpath("templates", name).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigurationError(f"template asset {name} is missing") from exc
    return Template(text)


def render_metaprompt(instance: TaskInstance, method: str) -> str:
    template = load_template(instance.kind, template_style(method))
    options = "\n".join(f"{label}. {text}" for label, text in instance.options)
    fields = {"question": instance.question, "options": options}
    if instance.kind is TaskKind.MAZE:
        fields["maze"] = instance.payload["ascii"]
    elif instance.kind is TaskKind.SPATIALMAP:
        fields["description"] = instance.payload["description"]
    else:
        fields["numbers"] = " ".join(map(str, instance.payload["numbers"]))
    return template.substitute(fields)
