"""The closed seven-category taxonomy of UI controls.

Categories are mutually exclusive and fixed; anything outside the seven keys
is a validation error, never a new category. The phrase lexicon used by the
deterministic extractor is seeded from each category's example column, with
singular/split surface variants spelled out explicitly so matching stays
reviewable and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Category:
    key: str
    display_name: str
    examples: tuple[str, ...]


CATEGORIES: tuple[Category, ...] = (
    Category(
        key="InputControl",
        display_name="Input Controls",
        examples=("input boxes", "search bars", "keyboard triggers"),
    ),
    Category(
        key="FunctionalButton",
        display_name="Functional Button Controls",
        examples=(
            "send button",
            "voice button",
            "plus button",
            "back button",
            "confirm/cancel buttons",
        ),
    ),
    Category(
        key="OverlayPanel",
        display_name="Overlay Panel Controls",
        examples=("floating cards", "toasts", "pop-up windows"),
    ),
    Category(
        key="NavigationFramework",
        display_name="Navigation Bar and Page Framework Controls",
        examples=("page background", "top navigation bar area"),
    ),
    Category(
        key="ContentDisplay",
        display_name="Content Display Controls",
        examples=("avatars", "labels", "message bubbles", "in-page structural components"),
    ),
    Category(
        key="ListSelection",
        display_name="List Selection Controls",
        examples=("dropdown menus", "single-/multi-select lists", "tabs"),
    ),
    Category(
        key="AdditionalLogicCondition",
        display_name="Additional Logic Control Conditions",
        examples=(
            "user state validation",
            "first-time interaction checks",
            "card-triggered states",
            "cross-device trigger conditions",
        ),
    ),
)

CATEGORY_KEYS: tuple[str, ...] = tuple(c.key for c in CATEGORIES)

_BY_KEY = {c.key: c for c in CATEGORIES}
_BY_DISPLAY = {c.display_name: c for c in CATEGORIES}


class Taxonomy:
    """Fixed ordered list of the seven categories."""

    def __init__(self, categories: tuple[Category, ...] = CATEGORIES):
        if len(categories) != 7 or len({c.key for c in categories}) != 7:
            raise ValueError("taxonomy requires exactly 7 uniquely keyed categories")
        self.categories = categories

    def keys(self) -> tuple[str, ...]:
        return tuple(c.key for c in self.categories)

    def is_valid_key(self, key: str) -> bool:
        return key in _BY_KEY

    def by_key(self, key: str) -> Category:
        return _BY_KEY[key]

    def normalize(self, label: str) -> str | None:
        """Map a key or display name to the category key, else None."""
        if label in _BY_KEY:
            return label
        cat = _BY_DISPLAY.get(label)
        return cat.key if cat else None


DEFAULT_TAXONOMY = Taxonomy()


# Phrase lexicon for the deterministic extractor. Each entry is
# (phrase, category key); phrases are matched case-insensitively on word
# boundaries, longest match first. Variants beyond the literal example
# column: singular forms, split slashed alternatives, and the "first-time"
# condition marker.
LEXICON: tuple[tuple[str, str], ...] = (
    # Input Controls
    ("input boxes", "InputControl"),
    ("input box", "InputControl"),
    ("search bars", "InputControl"),
    ("search bar", "InputControl"),
    ("keyboard triggers", "InputControl"),
    ("keyboard trigger", "InputControl"),
    # Functional Button Controls
    ("send button", "FunctionalButton"),
    ("voice button", "FunctionalButton"),
    ("plus button", "FunctionalButton"),
    ("back button", "FunctionalButton"),
    ("confirm/cancel buttons", "FunctionalButton"),
    ("confirm button", "FunctionalButton"),
    ("cancel button", "FunctionalButton"),
    # Overlay Panel Controls
    ("floating cards", "OverlayPanel"),
    ("floating card", "OverlayPanel"),
    ("toasts", "OverlayPanel"),
    ("toast", "OverlayPanel"),
    ("pop-up windows", "OverlayPanel"),
    ("pop-up window", "OverlayPanel"),
    ("popup windows", "OverlayPanel"),
    ("popup window", "OverlayPanel"),
    ("pop-up", "OverlayPanel"),
    ("popup", "OverlayPanel"),
    # Navigation Bar and Page Framework Controls
    ("page background", "NavigationFramework"),
    ("top navigation bar area", "NavigationFramework"),
    ("top navigation bar", "NavigationFramework"),
    ("navigation bar", "NavigationFramework"),
    # Content Display Controls
    ("avatars", "ContentDisplay"),
    ("avatar", "ContentDisplay"),
    ("labels", "ContentDisplay"),
    ("label", "ContentDisplay"),
    ("message bubbles", "ContentDisplay"),
    ("message bubble", "ContentDisplay"),
    # List Selection Controls
    ("dropdown menus", "ListSelection"),
    ("dropdown menu", "ListSelection"),
    ("single-select lists", "ListSelection"),
    ("single-select list", "ListSelection"),
    ("multi-select lists", "ListSelection"),
    ("multi-select list", "ListSelection"),
    ("tabs", "ListSelection"),
    ("tab", "ListSelection"),
    # Additional Logic Control Conditions
    ("user state validation", "AdditionalLogicCondition"),
    ("first-time interaction checks", "AdditionalLogicCondition"),
    ("first-time interaction check", "AdditionalLogicCondition"),
    ("first-time", "AdditionalLogicCondition"),
    ("card-triggered states", "AdditionalLogicCondition"),
    ("card-triggered state", "AdditionalLogicCondition"),
    ("cross-device trigger conditions", "AdditionalLogicCondition"),
    ("cross-device trigger condition", "AdditionalLogicCondition"),
)
