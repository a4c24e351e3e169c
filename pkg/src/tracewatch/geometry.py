"""Direction vocabularies shared by extractors and verifiers.

Grid coordinates are (row, col) with row 0 at the top: UP decreases the
row, RIGHT increases the column. Map directions use the same screen
convention, so "north" is a smaller row.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

Pos = tuple[int, int]


class Direction(str, enum.Enum):
    UP = "UP"
    DOWN = "DOWN"
    LEFT = "LEFT"
    RIGHT = "RIGHT"

    @property
    def delta(self) -> Pos:
        return _DELTAS[self]

    def cw(self) -> Direction:
        """Quarter turn clockwise on screen (DOWN -> LEFT -> UP -> RIGHT)."""
        return _CW[self]

    def ccw(self) -> Direction:
        return _CCW[self]

    def opposite(self) -> Direction:
        return _CW[_CW[self]]

    @classmethod
    def parse(cls, word: str) -> Direction | None:
        try:
            return cls(word.strip().upper())
        except ValueError:
            return None

    @classmethod
    def between(cls, a: Pos, b: Pos) -> Direction | None:
        """Direction of the unit move a -> b, or None if not 4-adjacent."""
        return _BY_DELTA.get((b[0] - a[0], b[1] - a[1]))


_DELTAS = {
    Direction.UP: (-1, 0),
    Direction.DOWN: (1, 0),
    Direction.LEFT: (0, -1),
    Direction.RIGHT: (0, 1),
}
_BY_DELTA = {v: k for k, v in _DELTAS.items()}
_CW = {
    Direction.DOWN: Direction.LEFT,
    Direction.LEFT: Direction.UP,
    Direction.UP: Direction.RIGHT,
    Direction.RIGHT: Direction.DOWN,
}
_CCW = {v: k for k, v in _CW.items()}


class TurnType(str, enum.Enum):
    RIGHT_TURN = "RIGHT_TURN"
    LEFT_TURN = "LEFT_TURN"
    STRAIGHT = "STRAIGHT"
    REVERSAL = "REVERSAL"

    @classmethod
    def parse(cls, word: str) -> TurnType | None:
        key = word.strip().upper().replace(" ", "_").replace("-", "_")
        key = {"RIGHT": "RIGHT_TURN", "LEFT": "LEFT_TURN", "U_TURN": "REVERSAL"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            return None


class RelPos(str, enum.Enum):
    DIRECTLY_LEFT = "directly to the left"
    DIRECTLY_RIGHT = "directly to the right"
    DIRECTLY_ABOVE = "directly above"
    DIRECTLY_BELOW = "directly below"
    TOP_LEFT = "top left"
    TOP_RIGHT = "top right"
    BOTTOM_LEFT = "bottom left"
    BOTTOM_RIGHT = "bottom right"

    @classmethod
    def parse(cls, phrase: str) -> RelPos | None:
        norm = " ".join(phrase.lower().replace("_", " ").split())
        norm = {"directly left": "directly to the left", "directly right": "directly to the right"}.get(norm, norm)
        for member in cls:
            if member.value == norm or member.name.lower().replace("_", " ") == norm:
                return member
        return None


class Compass(str, enum.Enum):
    NW = "Northwest"
    NE = "Northeast"
    SW = "Southwest"
    SE = "Southeast"
    N = "North"
    S = "South"
    E = "East"
    W = "West"

    @property
    def is_diagonal(self) -> bool:
        return self in (Compass.NW, Compass.NE, Compass.SW, Compass.SE)

    def opposite(self) -> Compass:
        return _OPPOSITE[self]

    @classmethod
    def parse(cls, word: str) -> Compass | None:
        key = word.strip().replace("-", "").replace(" ", "").lower()
        for member in cls:
            if key in (member.value.lower(), member.name.lower()):
                return member
        return None


_OPPOSITE = {
    Compass.NW: Compass.SE,
    Compass.SE: Compass.NW,
    Compass.NE: Compass.SW,
    Compass.SW: Compass.NE,
    Compass.N: Compass.S,
    Compass.S: Compass.N,
    Compass.E: Compass.W,
    Compass.W: Compass.E,
}


@dataclass(frozen=True)
class DiagRelation:
    """``subject`` lies in direction ``dir`` of ``object``."""

    subject: str
    dir: Compass
    object: str

    def render(self) -> str:
        return f"{self.subject} is to the {self.dir.value} of {self.object}"

    def __str__(self) -> str:
        return self.render()
