"""Hierarchical attribute vocabulary for text-driven image editing.

Attributes are short natural-language phrases ("grey hair") grouped into
categories ("hair color"). Binary categories hold a presence/absence pair
("with earrings" / "without earrings"); each member of the pair carries the
other as its negation. A face vocabulary is bundled with the package; user
vocabularies load from JSON files of the same shape:

    {"version": "...", "categories": [
        {"name": "hair color", "attributes": ["black hair", ...]},
        {"name": "earrings", "binary": true,
         "attributes": ["with earrings", "without earrings"]}]}

Hierarchies are immutable after load and safe to share across workers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator

MAX_ATTRIBUTE_WORDS = 8

#: Identifiers accepted by :func:`load_hierarchy` for in-package vocabularies.
BUNDLED_HIERARCHIES = {
    "celeba_face_v1": "face_attributes_v1.json",
}


class HierarchyError(ValueError):
    """A hierarchy file or object violates the vocabulary schema."""


class UnknownAttributeError(HierarchyError):
    """A command text is not present in the hierarchy.

    Carries a hint to resolve the command's category with the category
    finder (or a manual override) before retrying.
    """


def slugify(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name.strip().lower())


@dataclass(frozen=True)
class Attribute:
    """One editable visual attribute, addressed by its text."""

    text: str
    category_id: str
    negation_text: str | None = None

    @property
    def is_binary(self) -> bool:
        return self.negation_text is not None

    def __post_init__(self) -> None:
        _validate_attribute_text(self.text)
        if self.negation_text is not None:
            _validate_attribute_text(self.negation_text)
            if self.negation_text == self.text:
                raise HierarchyError(
                    f"attribute {self.text!r}: negation must differ from the text"
                )


def _validate_attribute_text(text: str) -> None:
    if not text or text != text.strip():
        raise HierarchyError(f"attribute text {text!r} is empty or has stray whitespace")
    if text != text.lower():
        raise HierarchyError(f"attribute text {text!r} must be lowercase")
    if len(text.split()) > MAX_ATTRIBUTE_WORDS:
        raise HierarchyError(
            f"attribute text {text!r} exceeds {MAX_ATTRIBUTE_WORDS} words"
        )


@dataclass(frozen=True)
class Category:
    """A named group of mutually alternative attributes."""

    id: str
    name: str
    attributes: tuple[Attribute, ...]
    binary: bool = False

    def __post_init__(self) -> None:
        if len(self.attributes) < 2:
            raise HierarchyError(
                f"category {self.name!r} needs at least 2 attributes, "
                f"got {len(self.attributes)}"
            )
        if self.binary and len(self.attributes) != 2:
            raise HierarchyError(
                f"binary category {self.name!r} must hold exactly the "
                f"presence/absence pair, got {len(self.attributes)} attributes"
            )
        texts = [a.text for a in self.attributes]
        if len(set(texts)) != len(texts):
            raise HierarchyError(f"category {self.name!r} repeats an attribute text")
        for a in self.attributes:
            if a.category_id != self.id:
                raise HierarchyError(
                    f"attribute {a.text!r} carries category id {a.category_id!r}, "
                    f"expected {self.id!r}"
                )

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(a.text for a in self.attributes)


@dataclass(frozen=True)
class AttributeHierarchy:
    """The full category -> attributes structure.

    Immutable; every attribute text appears in exactly one category.
    """

    categories: tuple[Category, ...]
    version: str
    source: str = "user"  # bundled | mined | user
    _by_text: dict[str, tuple[Category, Attribute]] = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if not self.categories:
            raise HierarchyError("hierarchy has no categories")
        if self.source not in ("bundled", "mined", "user"):
            raise HierarchyError(f"unknown hierarchy source {self.source!r}")
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise HierarchyError("category names are not unique")
        index: dict[str, tuple[Category, Attribute]] = {}
        for cat in self.categories:
            for attr in cat.attributes:
                if attr.text in index:
                    other = index[attr.text][0]
                    raise HierarchyError(
                        f"attribute {attr.text!r} appears in both "
                        f"{other.name!r} and {cat.name!r}"
                    )
                index[attr.text] = (cat, attr)
        object.__setattr__(self, "_by_text", index)

    def __contains__(self, text: str) -> bool:
        return text in self._by_text

    def attribute(self, text: str) -> Attribute:
        try:
            return self._by_text[text][1]
        except KeyError:
            raise UnknownAttributeError(
                f"attribute {text!r} is not in the hierarchy; resolve its "
                f"category with the category finder or a manual override"
            ) from None

    def category_of(self, text: str) -> Category:
        try:
            return self._by_text[text][0]
        except KeyError:
            raise UnknownAttributeError(
                f"attribute {text!r} is not in the hierarchy; resolve its "
                f"category with the category finder or a manual override"
            ) from None

    def category_by_id(self, category_id: str) -> Category | None:
        for cat in self.categories:
            if cat.id == category_id:
                return cat
        return None

    def all_attributes(self) -> Iterator[Attribute]:
        for cat in self.categories:
            yield from cat.attributes

    def all_texts(self) -> tuple[str, ...]:
        return tuple(a.text for a in self.all_attributes())

    @property
    def fingerprint(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def to_json_dict(self) -> dict:
        cats = []
        for cat in self.categories:
            entry: dict = {"name": cat.name, "attributes": list(cat.texts)}
            if cat.binary:
                entry["binary"] = True
            cats.append(entry)
        return {"version": self.version, "categories": cats}


def _category_from_json(entry: dict) -> Category:
    if not isinstance(entry, dict) or "name" not in entry:
        raise HierarchyError(f"category entry {entry!r} lacks a name")
    name = entry["name"]
    binary = bool(entry.get("binary", False))
    texts = entry.get("attributes", [])
    if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
        raise HierarchyError(f"category {name!r}: attributes must be a list of strings")
    cat_id = slugify(name)
    if binary:
        if len(texts) != 2:
            raise HierarchyError(
                f"binary category {name!r} must list exactly 2 attributes"
            )
        attrs = (
            Attribute(texts[0], cat_id, negation_text=texts[1]),
            Attribute(texts[1], cat_id, negation_text=texts[0]),
        )
    else:
        attrs = tuple(Attribute(t, cat_id) for t in texts)
    return Category(id=cat_id, name=name, attributes=attrs, binary=binary)


def hierarchy_from_json_dict(data: dict, source: str = "user") -> AttributeHierarchy:
    if not isinstance(data, dict):
        raise HierarchyError("hierarchy document must be a JSON object")
    version = data.get("version")
    if not version or not isinstance(version, str):
        raise HierarchyError("hierarchy document needs a string 'version'")
    raw_cats = data.get("categories")
    if not isinstance(raw_cats, list) or not raw_cats:
        raise HierarchyError("hierarchy document needs a non-empty 'categories' list")
    categories = tuple(_category_from_json(entry) for entry in raw_cats)
    return AttributeHierarchy(categories=categories, version=version, source=source)


def load_hierarchy(source: str | Path) -> AttributeHierarchy:
    """Load and validate a hierarchy from a bundled id or a JSON file path."""
    if isinstance(source, str) and source in BUNDLED_HIERARCHIES:
        ref = resources.files("detangle.data") / BUNDLED_HIERARCHIES[source]
        data = json.loads(ref.read_text(encoding="utf-8"))
        return hierarchy_from_json_dict(data, source="bundled")
    path = Path(source)
    if not path.exists():
        raise HierarchyError(
            f"hierarchy source {source!r} is neither a bundled id "
            f"({', '.join(sorted(BUNDLED_HIERARCHIES))}) nor an existing file"
        )
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise HierarchyError(f"hierarchy file {path} is not valid JSON: {exc}") from exc
    return hierarchy_from_json_dict(data, source="user")


def save_hierarchy(hierarchy: AttributeHierarchy, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(hierarchy.to_json_dict(), indent=2) + "\n", encoding="utf-8"
    )


def labels_for_command(
    hierarchy: AttributeHierarchy, command: Attribute | str
) -> tuple[str, ...]:
    """Zero-shot classification labels for a command.

    Binary commands yield exactly the presence/absence pair; anything else
    yields every attribute text of the command's category. The command's own
    text is always among the labels.
    """
    if isinstance(command, str):
        command = hierarchy.attribute(command)
    if command.is_binary:
        return (command.text, command.negation_text)
    category = hierarchy.category_by_id(command.category_id)
    if category is None:
        raise UnknownAttributeError(
            f"category {command.category_id!r} of command {command.text!r} is not "
            f"in the hierarchy; resolve it with the category finder first"
        )
    labels = list(category.texts)
    if command.text not in labels:
        labels.insert(0, command.text)
    return tuple(labels)


def resolve_command(hierarchy: AttributeHierarchy, command: Attribute | str) -> Attribute:
    """Normalize a command given as text into its hierarchy Attribute."""
    if isinstance(command, Attribute):
        return command
    return hierarchy.attribute(command)
