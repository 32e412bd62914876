"""Design canonicalizer: Figma-compatible documents to a canonical design IR.

The IR separates tree structure from a global token space. Each node keeps
its semantic role, geometry and text; every reusable style value (color,
typography, radius, inter-sibling spacing) is abstracted into a token id of
the form ``<kind>/<two-digit ordinal>``, assigned in first-encounter order
during a depth-first pre-order traversal and deduplicated by (kind, value).

Two input schemas are accepted:

* a documented subset of the Figma REST "GET file" response: a ``document``
  tree (or bare node) with ``id``, ``name``, ``type``, ``absoluteBoundingBox``,
  ``fills``, ``characters``, ``style`` (font), ``cornerRadius``,
  ``componentId``, ``children`` and an optional ``metadata`` map;
* the IR's own serialized form, so canonicalization is idempotent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

IOU_INSERT_THRESHOLD = 0.5


class DesignError(Exception):
    pass


class MalformedDocument(DesignError):
    pass


class UnknownNode(DesignError):
    pass


class InvalidScale(DesignError):
    pass


class Role(str, Enum):
    FRAME = "Frame"
    GROUP = "Group"
    TEXT = "Text"
    IMAGE = "Image"
    VECTOR = "Vector"
    COMPONENT_INSTANCE = "ComponentInstance"


# Figma node types to IR roles; node kinds outside the table fall back to
# Vector with a warning.
_KIND_TO_ROLE = {
    "FRAME": Role.FRAME,
    "COMPONENT": Role.FRAME,
    "COMPONENT_SET": Role.FRAME,
    "SECTION": Role.FRAME,
    "GROUP": Role.GROUP,
    "TEXT": Role.TEXT,
    "IMAGE": Role.IMAGE,
    "INSTANCE": Role.COMPONENT_INSTANCE,
    "VECTOR": Role.VECTOR,
    "RECTANGLE": Role.VECTOR,
    "ELLIPSE": Role.VECTOR,
    "LINE": Role.VECTOR,
    "STAR": Role.VECTOR,
    "REGULAR_POLYGON": Role.VECTOR,
    "BOOLEAN_OPERATION": Role.VECTOR,
}

_ROLE_TO_KIND = {
    Role.FRAME: "FRAME",
    Role.GROUP: "GROUP",
    Role.TEXT: "TEXT",
    Role.IMAGE: "IMAGE",
    Role.VECTOR: "VECTOR",
    Role.COMPONENT_INSTANCE: "INSTANCE",
}

# Detection labels to inserted-node roles; unknown labels become Vector.
DETECTION_ROLE_TABLE = {
    "text": Role.TEXT,
    "label": Role.TEXT,
    "image": Role.IMAGE,
    "icon": Role.IMAGE,
    "avatar": Role.IMAGE,
    "photo": Role.IMAGE,
}


@dataclass(frozen=True)
class Geometry:
    x: float
    y: float
    width: float
    height: float

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "width": self.width, "height": self.height}


@dataclass
class RawNode:
    """One node of the parsed source document, schema-neutral."""

    id: str
    name: str
    node_kind: str
    bounding_box: Geometry
    fills: list[dict] = field(default_factory=list)
    text_content: str | None = None
    font: dict | None = None
    corner_radius: float | None = None
    component_ref: str | None = None
    children: list["RawNode"] = field(default_factory=list)
    metadata: dict[str, str] | None = None


@dataclass
class RawDesignTree:
    root: RawNode
    source_id: str
    base_warnings: list[str] = field(default_factory=list)
    suppress_derived_warnings: bool = False


@dataclass
class DesignNode:
    id: str
    role: Role
    name: str
    geometry: Geometry
    style_refs: list[str] = field(default_factory=list)
    text: str | None = None
    children: list["DesignNode"] = field(default_factory=list)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "id": self.id,
            "role": self.role.value,
            "name": self.name,
            "geometry": self.geometry.to_dict(),
            "style_refs": list(self.style_refs),
            "children": [c.to_dict() for c in self.children],
        }
        if self.text is not None:
            d["text"] = self.text
        return d


@dataclass(frozen=True)
class TokenValue:
    kind: str  # color | spacing | typography | radius
    value: str  # canonical text


@dataclass
class TokenSpace:
    tokens: dict[str, TokenValue] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {tid: {"kind": t.kind, "value": t.value} for tid, t in self.tokens.items()}


@dataclass
class DesignIR:
    root: DesignNode
    token_space: TokenSpace
    source_id: str
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "warnings": list(self.warnings),
            "token_space": self.token_space.to_dict(),
            "root": self.root.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def iter_nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass(frozen=True)
class DetectedElement:
    label: str
    bounding_box: Geometry
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class ComponentEntry:
    name: str
    kind: str  # named_component | primitive_role
    count: int

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "count": self.count}


@dataclass
class ComponentSet:
    entries: list[ComponentEntry] = field(default_factory=list)

    def names(self) -> set[str]:
        return {e.name for e in self.entries}

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}

    @staticmethod
    def from_dict(d: dict) -> "ComponentSet":
        return ComponentSet(
            entries=[ComponentEntry(e["name"], e["kind"], int(e["count"])) for e in d["entries"]]
        )


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def parse_design_document(data: Any) -> RawDesignTree:
    """Normalize either accepted schema into a RawDesignTree.

    Raises MalformedDocument for unparseable input or duplicate node ids.
    """
    if isinstance(data, (str, bytes)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedDocument("design document must be a JSON object")

    if "token_space" in data and "root" in data:
        tree = _parse_ir_form(data)
    elif "document" in data:
        root, warnings = _parse_figma_node(data["document"], [], counter=[0])
        tree = RawDesignTree(
            root=root,
            source_id=str(data.get("name") or root.id),
            base_warnings=warnings,
        )
    elif "id" in data or "type" in data or "children" in data:
        root, warnings = _parse_figma_node(data, [], counter=[0])
        tree = RawDesignTree(root=root, source_id=root.id, base_warnings=warnings)
    else:
        raise MalformedDocument("document has neither a Figma node tree nor an IR form")

    _check_unique_ids(tree.root)
    return tree


def _check_unique_ids(root: RawNode) -> None:
    seen: set[str] = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in seen:
            raise MalformedDocument(f"duplicate node id {node.id!r}")
        seen.add(node.id)
        stack.extend(node.children)


def _parse_figma_node(obj: Any, warnings: list[str], counter: list[int]) -> tuple[RawNode, list[str]]:
    if not isinstance(obj, dict):
        raise MalformedDocument(f"node record must be an object, got {type(obj).__name__}")
    counter[0] += 1
    node_id = obj.get("id")
    if not node_id:
        node_id = f"node-{counter[0]}"
        warnings.append(f"node {node_id}: id absent, synthesized")
    node_id = str(node_id)

    kind = obj.get("type")
    if not kind:
        kind = "VECTOR"
        warnings.append(f"node {node_id}: type absent, treated as VECTOR")
    kind = str(kind)

    box = obj.get("absoluteBoundingBox") or obj.get("bounding_box")
    if isinstance(box, dict):
        try:
            geometry = Geometry(
                float(box.get("x", 0.0)),
                float(box.get("y", 0.0)),
                float(box["width"]),
                float(box["height"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"node {node_id}: bad bounding box: {exc}") from exc
        if geometry.width < 0 or geometry.height < 0:
            raise MalformedDocument(f"node {node_id}: negative bounding box dimensions")
    else:
        geometry = Geometry(0.0, 0.0, 0.0, 0.0)
        warnings.append(f"node {node_id}: bounding box absent, defaulted to zero")

    fills = obj.get("fills")
    if not isinstance(fills, list):
        fills = []

    font = None
    style = obj.get("style") or obj.get("font")
    if isinstance(style, dict) and ("fontFamily" in style or "family" in style):
        font = {
            "family": str(style.get("fontFamily") or style.get("family") or ""),
            "size": float(style.get("fontSize") or style.get("size") or 0.0),
            "weight": int(style.get("fontWeight") or style.get("weight") or 400),
        }

    corner = obj.get("cornerRadius", obj.get("corner_radius"))
    corner_radius = float(corner) if isinstance(corner, (int, float)) else None

    metadata = obj.get("metadata")
    if not isinstance(metadata, dict):
        metadata = None
    else:
        metadata = {str(k): str(v) for k, v in metadata.items()}

    text = obj.get("characters", obj.get("text_content"))
    text = str(text) if text is not None else None

    children = []
    for child in obj.get("children") or []:
        child_node, _ = _parse_figma_node(child, warnings, counter)
        children.append(child_node)

    node = RawNode(
        id=node_id,
        name=str(obj.get("name") or ""),
        node_kind=kind,
        bounding_box=geometry,
        fills=fills,
        text_content=text,
        font=font,
        corner_radius=corner_radius,
        component_ref=str(obj["componentId"]) if obj.get("componentId") else None,
        children=children,
        metadata=metadata,
    )
    return node, warnings


def _parse_ir_form(data: dict) -> RawDesignTree:
    """Re-ingest the IR's own serialized form.

    Token references are resolved back into concrete style properties so the
    canonicalization pass regenerates an identical token space; the
    document's recorded warnings are carried over verbatim.
    """
    tokens = {}
    for tid, rec in (data.get("token_space") or {}).items():
        tokens[tid] = TokenValue(rec["kind"], rec["value"])

    def build(obj: dict) -> RawNode:
        try:
            role = Role(obj["role"])
        except (KeyError, ValueError) as exc:
            raise MalformedDocument(f"bad IR node role: {exc}") from exc
        geom = obj.get("geometry") or {}
        geometry = Geometry(
            float(geom.get("x", 0.0)),
            float(geom.get("y", 0.0)),
            float(geom.get("width", 0.0)),
            float(geom.get("height", 0.0)),
        )
        if geometry.width < 0 or geometry.height < 0:
            raise MalformedDocument(f"node {obj.get('id')}: negative dimensions")
        fills: list[dict] = []
        font = None
        corner_radius = None
        for ref in obj.get("style_refs") or []:
            token = tokens.get(ref)
            if token is None:
                raise MalformedDocument(f"style ref {ref!r} missing from token space")
            if token.kind == "color":
                fills.append(_fill_from_hex(token.value))
            elif token.kind == "typography":
                family, size, weight = token.value.rsplit("/", 2)
                font = {"family": family, "size": float(size), "weight": int(weight)}
            elif token.kind == "radius":
                corner_radius = float(token.value)
            # spacing tokens are re-derived from geometry
        text = obj.get("text")
        if role is Role.TEXT and text is None:
            text = ""
        return RawNode(
            id=str(obj["id"]),
            name=str(obj.get("name") or ""),
            node_kind=_ROLE_TO_KIND[role],
            bounding_box=geometry,
            fills=fills,
            text_content=str(text) if text is not None else None,
            font=font,
            corner_radius=corner_radius,
            component_ref=None,
            children=[build(c) for c in obj.get("children") or []],
        )

    return RawDesignTree(
        root=build(data["root"]),
        source_id=str(data.get("source_id") or data["root"].get("id", "")),
        base_warnings=[str(w) for w in data.get("warnings") or []],
        suppress_derived_warnings=True,
    )


def _fill_from_hex(value: str) -> dict:
    r, g, b, a = (int(value[i : i + 2], 16) for i in (0, 2, 4, 6))
    return {
        "type": "SOLID",
        "color": {"r": r / 255.0, "g": g / 255.0, "b": b / 255.0, "a": a / 255.0},
        "opacity": 1.0,
    }


# ---------------------------------------------------------------------------
# canonicalization
# ---------------------------------------------------------------------------


class _TokenAllocator:
    def __init__(self):
        self.tokens: dict[str, TokenValue] = {}
        self._by_value: dict[tuple[str, str], str] = {}
        self._counts: dict[str, int] = {}

    def allocate(self, kind: str, value: str) -> str:
        key = (kind, value)
        existing = self._by_value.get(key)
        if existing is not None:
            return existing
        ordinal = self._counts.get(kind, 0) + 1
        self._counts[kind] = ordinal
        tid = f"{kind}/{ordinal:02d}"
        self.tokens[tid] = TokenValue(kind, value)
        self._by_value[key] = tid
        return tid


def canonical_color(fill: dict) -> str | None:
    """Lowercase 8-digit hex RGBA for a visible SOLID fill, else None.

    Alpha combines the color's own alpha with the paint opacity, matching
    how design tools report effective color.
    """
    if fill.get("type", "SOLID") != "SOLID":
        return None
    if fill.get("visible") is False:
        return None
    color = fill.get("color")
    if not isinstance(color, dict):
        return None
    try:
        r = _to_255(float(color.get("r", 0.0)))
        g = _to_255(float(color.get("g", 0.0)))
        b = _to_255(float(color.get("b", 0.0)))
        a = _to_255(float(color.get("a", 1.0)) * float(fill.get("opacity", 1.0)))
    except (TypeError, ValueError):
        return None
    return f"{r:02x}{g:02x}{b:02x}{a:02x}"


def _to_255(v: float) -> int:
    v = min(1.0, max(0.0, v))
    return int(round(v * 255))


def _format_size(size: float) -> str:
    return f"{size:g}"


def canonicalize(doc: RawDesignTree | dict | str | bytes, node_selector: str | None = None) -> DesignIR:
    """Transform a design document into its canonical IR.

    ``node_selector`` narrows the IR root to the named node; a missing
    selector target raises UnknownNode. Optional metadata never blocks
    construction; its absence is recorded as a warning.
    """
    if not isinstance(doc, RawDesignTree):
        doc = parse_design_document(doc)

    root = doc.root
    if node_selector is not None:
        root = _find_node(doc.root, node_selector)
        if root is None:
            raise UnknownNode(f"node {node_selector!r} not present in document")

    warnings = list(doc.base_warnings)
    allocator = _TokenAllocator()
    derived: list[str] = []
    ir_root = _canonicalize_node(root, allocator, derived)

    if not doc.suppress_derived_warnings:
        if not _any_metadata(root):
            warnings.append("optional metadata absent")
        warnings.extend(derived)

    return DesignIR(
        root=ir_root,
        token_space=TokenSpace(tokens=allocator.tokens),
        source_id=doc.source_id,
        warnings=warnings,
    )


def _find_node(root: RawNode, node_id: str) -> RawNode | None:
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id == node_id:
            return node
        stack.extend(reversed(node.children))
    return None


def _any_metadata(root: RawNode) -> bool:
    stack = [root]
    while stack:
        node = stack.pop()
        if node.metadata is not None:
            return True
        stack.extend(node.children)
    return False


def _canonicalize_node(raw: RawNode, allocator: _TokenAllocator, warnings: list[str]) -> DesignNode:
    role = _KIND_TO_ROLE.get(raw.node_kind)
    if role is None:
        warnings.append(f"node {raw.id}: unknown kind {raw.node_kind!r}, treated as Vector")
        role = Role.VECTOR
    if role is not Role.TEXT and role is not Role.COMPONENT_INSTANCE:
        if _has_image_fill(raw.fills):
            role = Role.IMAGE

    style_refs: list[str] = []
    for fill in raw.fills:
        value = canonical_color(fill)
        if value is not None:
            ref = allocator.allocate("color", value)
            if ref not in style_refs:
                style_refs.append(ref)
    if raw.font is not None:
        value = f"{raw.font['family']}/{_format_size(raw.font['size'])}/{raw.font['weight']}"
        style_refs.append(allocator.allocate("typography", value))
    if raw.corner_radius is not None and raw.corner_radius > 0:
        style_refs.append(allocator.allocate("radius", str(int(round(raw.corner_radius)))))

    # Spacing tokens: positive gaps between consecutive children along the
    # axis where their projections overlap, attributed to this parent.
    for gap in _sibling_gaps(raw.children):
        ref = allocator.allocate("spacing", str(gap))
        if ref not in style_refs:
            style_refs.append(ref)

    text: str | None = None
    if role is Role.TEXT:
        if raw.text_content is None:
            warnings.append(f"node {raw.id}: text content absent, defaulted to empty")
            text = ""
        else:
            text = raw.text_content

    name = raw.name
    if role is Role.COMPONENT_INSTANCE and not name and raw.component_ref:
        name = raw.component_ref

    return DesignNode(
        id=raw.id,
        role=role,
        name=name,
        geometry=raw.bounding_box,
        style_refs=style_refs,
        text=text,
        children=[_canonicalize_node(c, allocator, warnings) for c in raw.children],
    )


def _has_image_fill(fills: list[dict]) -> bool:
    return any(isinstance(f, dict) and f.get("type") == "IMAGE" for f in fills)


def _sibling_gaps(children: list[RawNode]) -> list[int]:
    gaps = []
    for prev, nxt in zip(children, children[1:]):
        a, b = prev.bounding_box, nxt.bounding_box
        x_overlap = min(a.x + a.width, b.x + b.width) > max(a.x, b.x)
        y_overlap = min(a.y + a.height, b.y + b.height) > max(a.y, b.y)
        if x_overlap and not y_overlap:
            gap = b.y - (a.y + a.height)
        elif y_overlap and not x_overlap:
            gap = b.x - (a.x + a.width)
        else:
            continue
        rounded = int(round(gap))
        if rounded > 0:
            gaps.append(rounded)
    return gaps


# ---------------------------------------------------------------------------
# detection-augmented refinement
# ---------------------------------------------------------------------------


def iou(a: Geometry, b: Geometry) -> float:
    ix = max(0.0, min(a.x + a.width, b.x + b.width) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.height, b.y + b.height) - max(a.y, b.y))
    inter = ix * iy
    union = a.width * a.height + b.width * b.height - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def refine_with_detections(ir: DesignIR, detections: list[DetectedElement], scale: float) -> DesignIR:
    """Flatten single-child Groups and insert novel detected elements.

    A detection is novel when its scaled box has IoU < 0.5 against every
    existing leaf; it is inserted under the deepest Frame that fully contains
    it (falling back to the root). The result is re-canonicalized so the
    token space reflects the refined tree.
    """
    if scale <= 0:
        raise InvalidScale(f"scale must be positive, got {scale}")

    root = _copy_node(ir.root)
    root = _collapse_single_child_groups(root)

    existing_ids = {n.id for n in _walk(root)}
    for index, det in enumerate(detections, start=1):
        box = Geometry(
            det.bounding_box.x * scale,
            det.bounding_box.y * scale,
            det.bounding_box.width * scale,
            det.bounding_box.height * scale,
        )
        leaves = [n for n in _walk(root) if not n.children]
        if any(iou(box, leaf.geometry) >= IOU_INSERT_THRESHOLD for leaf in leaves):
            continue
        parent = _deepest_containing_frame(root, box) or root
        node_id = f"det-{index:03d}"
        while node_id in existing_ids:
            node_id += "x"
        existing_ids.add(node_id)
        role = DETECTION_ROLE_TABLE.get(det.label.lower(), Role.VECTOR)
        parent.children.append(
            DesignNode(
                id=node_id,
                role=role,
                name=det.label,
                geometry=box,
                text="" if role is Role.TEXT else None,
            )
        )

    refined = DesignIR(
        root=root,
        token_space=ir.token_space,
        source_id=ir.source_id,
        warnings=list(ir.warnings),
    )
    # Round-trip through the canonicalizer so token dedup, ordinal order and
    # idempotence hold for the refined tree as well.
    return canonicalize(json.loads(refined.to_json()))


def _copy_node(node: DesignNode) -> DesignNode:
    return DesignNode(
        id=node.id,
        role=node.role,
        name=node.name,
        geometry=node.geometry,
        style_refs=list(node.style_refs),
        text=node.text,
        children=[_copy_node(c) for c in node.children],
    )


def _walk(node: DesignNode):
    yield node
    for child in node.children:
        yield from _walk(child)


def _collapse_single_child_groups(node: DesignNode) -> DesignNode:
    node.children = [_collapse_single_child_groups(c) for c in node.children]
    if node.role is Role.GROUP and len(node.children) == 1:
        return node.children[0]
    return node


def _contains(outer: Geometry, inner: Geometry) -> bool:
    return (
        outer.x <= inner.x
        and outer.y <= inner.y
        and outer.x + outer.width >= inner.x + inner.width
        and outer.y + outer.height >= inner.y + inner.height
    )


def _deepest_containing_frame(root: DesignNode, box: Geometry) -> DesignNode | None:
    best: DesignNode | None = None
    best_depth = -1

    def visit(node: DesignNode, depth: int):
        nonlocal best, best_depth
        if node.role is Role.FRAME and _contains(node.geometry, box) and depth > best_depth:
            best, best_depth = node, depth
        for child in node.children:
            visit(child, depth + 1)

    visit(root, 0)
    return best


# ---------------------------------------------------------------------------
# component summary
# ---------------------------------------------------------------------------

_PRIMITIVE_ROLES = (Role.TEXT, Role.IMAGE, Role.VECTOR)


def summarize_components(ir: DesignIR) -> ComponentSet:
    """Tally component instances by name plus occurring primitive roles."""
    named: dict[str, int] = {}
    primitives: dict[str, int] = {}
    for node in _walk(ir.root):
        if node.role is Role.COMPONENT_INSTANCE:
            named[node.name] = named.get(node.name, 0) + 1
        elif node.role in _PRIMITIVE_ROLES:
            primitives[node.role.value] = primitives.get(node.role.value, 0) + 1
    entries = [ComponentEntry(name, "named_component", count) for name, count in named.items()]
    entries += [ComponentEntry(name, "primitive_role", count) for name, count in primitives.items()]
    entries.sort(key=lambda e: e.name)
    return ComponentSet(entries=entries)
