"""From-to semantic change map assembly and the parcel majority constraint.

A changed pixel becomes the change category of its (T1 class, T2 class)
pair; pairs outside the declared transition domain fall back to "no change"
and are tallied rather than silently relabeled. Unchanged pixels keep only
the two short-cycle crops (vegetable, nursery) as explicit categories, all
other unchanged pixels are "no change". The parcel constraint then forces
one category per parcel by cell-count majority.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .changenet import T1_CLASSES, T2_CLASSES
from .grid import BinaryMask, GridError, Raster, require_aligned
from .vectorize import PolygonSet, rasterize

CHANGE_CATEGORIES = (
    "no_change",
    "vegetable_to_vegetable",
    "nursery_to_nursery",
    "early_rice_to_middle_rice",
    "early_rice_to_late_rice",
    "rapeseed_to_middle_rice",
    "rapeseed_to_late_rice",
)

NUM_CHANGE_CATEGORIES = len(CHANGE_CATEGORIES)

# RGB used by the preview PNGs, one row per change category.
CHANGE_PALETTE = (
    (235, 235, 235),  # no change
    (64, 180, 75),    # vegetable -> vegetable
    (20, 100, 45),    # nursery -> nursery
    (255, 200, 40),   # early rice -> middle rice
    (230, 120, 30),   # early rice -> late rice
    (150, 80, 200),   # rapeseed -> middle rice
    (50, 120, 230),   # rapeseed -> late rice
)


def preview_rgb(scmap: "SemanticChangeMap") -> np.ndarray:
    """(H, W, 3) uint8 preview of a change map using the category palette."""
    lut = np.asarray(CHANGE_PALETTE, dtype=np.uint8)
    return lut[scmap.cells.astype(np.int64)]


class SemanticChangeMap(Raster):
    """Categorical raster over the seven from-to change categories."""

    def __post_init__(self):
        super().__post_init__()
        if self.cells.dtype != np.uint16:
            raise GridError("semantic change map must be categorical (u16)")
        if self.cells.max(initial=0) >= NUM_CHANGE_CATEGORIES:
            raise GridError(f"change category ids must be < {NUM_CHANGE_CATEGORIES}")

    @staticmethod
    def from_raster_checked(r: Raster) -> "SemanticChangeMap":
        return SemanticChangeMap(r.cells, r.origin_x, r.origin_y, r.pixel_size)


@dataclass(frozen=True)
class TransitionTable:
    """Total mapping (t1 class, t2 class, changed) -> change category.

    ``changed`` maps the four crop rotations plus the two same-crop rows;
    ``unchanged`` keeps vegetable and nursery. Everything else is category 0,
    and changed pairs outside the declared domain are reported as invalid.
    """

    changed: dict[tuple[int, int], int]
    unchanged: dict[tuple[int, int], int]

    def lookup(self, c1: int, c2: int, is_changed: bool) -> tuple[int, bool]:
        """(category, was_valid)."""
        table = self.changed if is_changed else self.unchanged
        if (c1, c2) in table:
            return table[(c1, c2)], True
        return 0, not is_changed  # unmatched unchanged pairs are legal "no change"


def default_transition_table() -> TransitionTable:
    t1 = {name: i for i, name in enumerate(T1_CLASSES)}
    t2 = {name: i for i, name in enumerate(T2_CLASSES)}
    changed = {
        (t1["vegetable"], t2["vegetable"]): 1,
        (t1["nursery"], t2["nursery"]): 2,
        (t1["early_rice"], t2["middle_rice"]): 3,
        (t1["early_rice"], t2["late_rice"]): 4,
        (t1["rapeseed"], t2["middle_rice"]): 5,
        (t1["rapeseed"], t2["late_rice"]): 6,
    }
    unchanged = {
        (t1["vegetable"], t2["vegetable"]): 1,
        (t1["nursery"], t2["nursery"]): 2,
    }
    return TransitionTable(changed=changed, unchanged=unchanged)


@dataclass
class AssembleResult:
    scmap: SemanticChangeMap
    invalid_pairs: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def invalid_total(self) -> int:
        return sum(self.invalid_pairs.values())


def assemble(
    seg_t1: Raster,
    seg_t2: Raster,
    change: BinaryMask,
    table: TransitionTable | None = None,
) -> AssembleResult:
    """Per-pixel from-to assembly of the semantic change map."""
    table = table or default_transition_table()
    require_aligned(seg_t1, seg_t2, change)
    c1 = seg_t1.cells.astype(np.int64)
    c2 = seg_t2.cells.astype(np.int64)
    changed = change.cells != 0

    out = np.zeros(c1.shape, dtype=np.uint16)
    invalid = np.zeros(c1.shape, dtype=bool)

    n1 = int(c1.max(initial=0)) + 1
    n2 = int(c2.max(initial=0)) + 1
    lut_changed = np.zeros((n1, n2), dtype=np.uint16)
    lut_changed_valid = np.zeros((n1, n2), dtype=bool)
    for (a, b), cat in table.changed.items():
        if a < n1 and b < n2:
            lut_changed[a, b] = cat
            lut_changed_valid[a, b] = True
    lut_unchanged = np.zeros((n1, n2), dtype=np.uint16)
    for (a, b), cat in table.unchanged.items():
        if a < n1 and b < n2:
            lut_unchanged[a, b] = cat

    out[changed] = lut_changed[c1[changed], c2[changed]]
    invalid[changed] = ~lut_changed_valid[c1[changed], c2[changed]]
    out[~changed] = lut_unchanged[c1[~changed], c2[~changed]]

    pair_counts: dict[tuple[int, int], int] = {}
    if invalid.any():
        pairs = np.stack([c1[invalid], c2[invalid]], axis=1)
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        pair_counts = {(int(a), int(b)): int(n) for (a, b), n in zip(uniq, counts)}

    scmap = SemanticChangeMap(
        out, seg_t1.origin_x, seg_t1.origin_y, seg_t1.pixel_size
    )
    return AssembleResult(scmap, pair_counts)


def parcel_majorities(scmap: SemanticChangeMap, parcel_labels: Raster) -> np.ndarray:
    """Majority category per parcel id (index 0 unused); ties take the lowest id."""
    ids = parcel_labels.cells.astype(np.int64)
    cats = scmap.cells.astype(np.int64)
    n_parcels = int(ids.max(initial=0))
    votes = np.zeros((n_parcels + 1, NUM_CHANGE_CATEGORIES), dtype=np.int64)
    np.add.at(votes, (ids.ravel(), cats.ravel()), 1)
    return votes.argmax(axis=1).astype(np.uint16)  # argmax picks the lowest id on ties


def parcel_constrain(scmap: SemanticChangeMap, parcels: PolygonSet) -> SemanticChangeMap:
    """Force each parcel single-valued by the category area (cell count) maximum.

    Cells outside every parcel keep their pixel-level category.
    """
    labels = rasterize(parcels, scmap)
    majority = parcel_majorities(scmap, labels)
    ids = labels.cells.astype(np.int64)
    out = np.where(ids > 0, majority[ids], scmap.cells).astype(np.uint16)
    return SemanticChangeMap(out, scmap.origin_x, scmap.origin_y, scmap.pixel_size)


def category_report(scmap: SemanticChangeMap, parcels: PolygonSet | None = None) -> dict:
    """Area percentage per category, plus parcel counts when parcels are given."""
    counts = np.bincount(scmap.cells.ravel().astype(np.int64), minlength=NUM_CHANGE_CATEGORIES)
    total = float(counts.sum())
    cell_area = scmap.pixel_size**2
    report: dict = {"categories": {}}
    parcel_cats: np.ndarray | None = None
    if parcels is not None and len(parcels):
        labels = rasterize(parcels, scmap)
        majority = parcel_majorities(scmap, labels)
        present = np.unique(labels.cells)
        parcel_cats = majority[present[present > 0].astype(np.int64)]
    for i, name in enumerate(CHANGE_CATEGORIES):
        entry = {
            "area": float(counts[i]) * cell_area,
            "area_pct": 100.0 * counts[i] / total,
        }
        if parcel_cats is not None:
            entry["parcels"] = int((parcel_cats == i).sum())
        report["categories"][name] = entry
    return report
