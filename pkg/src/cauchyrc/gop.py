"""Hierarchical GOP layouts.

Two structures are provided: a low-delay GOP of four frames coded in display
order, and a random-access GOP of sixteen frames coded as a five-level
binary hierarchy.  POC offsets are relative to the GOP start; offset 0 is
the last frame of the previous GOP (or the initial intra frame).  Reference
offsets are ordered nearest-first, and the first entry is the one the
simulator predicts from.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class GopFrameSlot:
    poc_offset: int
    level: int
    ref_offsets: tuple[int, ...]


@dataclass(frozen=True)
class GopStructure:
    name: str
    size: int
    config: str  # influence-factor/clip configuration: "LDB" or "RA"
    coding_order: tuple[GopFrameSlot, ...]

    def __post_init__(self) -> None:
        if len(self.coding_order) != self.size:
            raise ValueError("coding order must cover the whole GOP")
        coded = {0}  # offset 0 is always available from the previous GOP
        for slot in self.coding_order:
            for r in slot.ref_offsets:
                if r > 0 and r not in coded:
                    raise ValueError(
                        f"offset {slot.poc_offset} references {r} before it is coded")
            coded.add(slot.poc_offset)

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(sorted({s.level for s in self.coding_order}))

    def anchor_offset(self) -> int:
        """POC offset of the unique level-1 frame."""
        offs = [s.poc_offset for s in self.coding_order if s.level == 1]
        if len(offs) != 1:
            raise ValueError("structure must contain exactly one level-1 frame")
        return offs[0]


# Low delay: coded in display order, every frame predicted from the previous
# one.  The GOP-final frame is the level-1 frame (largest influence factor).
LD4 = GopStructure(
    name="LD4",
    size=4,
    config="LDB",
    coding_order=(
        GopFrameSlot(1, 3, (0,)),
        GopFrameSlot(2, 2, (1,)),
        GopFrameSlot(3, 3, (2,)),
        GopFrameSlot(4, 1, (3,)),
    ),
)

# Random access: five temporal levels, dyadic hierarchy over sixteen frames.
RA16 = GopStructure(
    name="RA16",
    size=16,
    config="RA",
    coding_order=(
        GopFrameSlot(16, 1, (0,)),
        GopFrameSlot(8, 2, (0, 16)),
        GopFrameSlot(4, 3, (0, 8)),
        GopFrameSlot(2, 4, (0, 4)),
        GopFrameSlot(1, 5, (0, 2)),
        GopFrameSlot(3, 5, (2, 4)),
        GopFrameSlot(6, 4, (4, 8)),
        GopFrameSlot(5, 5, (4, 6)),
        GopFrameSlot(7, 5, (6, 8)),
        GopFrameSlot(12, 3, (8, 16)),
        GopFrameSlot(10, 4, (8, 12)),
        GopFrameSlot(9, 5, (8, 10)),
        GopFrameSlot(11, 5, (10, 12)),
        GopFrameSlot(14, 4, (12, 16)),
        GopFrameSlot(13, 5, (12, 14)),
        GopFrameSlot(15, 5, (14, 16)),
    ),
)

_STRUCTURES = {"LD4": LD4, "RA16": RA16}


def gop_structure(name: str) -> GopStructure:
    try:
        return _STRUCTURES[name]
    except KeyError:
        raise ValueError(f"unknown GOP structure: {name!r} (expected LD4 or RA16)") from None
