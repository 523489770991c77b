"""Parsing house map files into typed grids and computing per-cell features."""

import logging
import re
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from app.core.exceptions import DisconnectedMap, MalformedMap, MissingAnchor
from app.models.grid import CellClass, FeatureField, GridMap, LegendEntry, Zone

logger = logging.getLogger(__name__)

WALL_GLYPH = "#"
DOOR_GLYPH = "D"
UNZONED_GLYPH = "."

_LEGEND_LINE = re.compile(r"^([A-Z])=([^,\s]+),(\d+),(\d+)$")


def parse_map(text: str, cell_size: float = 0.5) -> GridMap:
    """
    Parse map file contents into a GridMap.

    The file is a grid block, a blank line and a legend block. Legend lines
    are `GLYPH=name,anchor_row,anchor_col` for zones and `D=ZONEGLYPH,row,col`
    for each door, naming the zone the door belongs to.

    Args:
        text: Map file contents
        cell_size: Metres per cell edge

    Returns:
        GridMap satisfying the border, zoning and connectivity invariants

    Raises:
        MalformedMap: Ragged rows, unknown glyph, open border or bad legend
        MissingAnchor: Zone without legend entry or with a misplaced anchor
        DisconnectedMap: Free cells that cannot reach each other
    """
    trailing_newline = text.endswith("\n")
    body = text[:-1] if trailing_newline else text
    blocks = body.split("\n\n")
    if len(blocks) != 2:
        raise MalformedMap("Map needs a grid block, one blank line and a legend block")
    grid_block, legend_block = blocks

    rows = tuple(grid_block.split("\n"))
    height = len(rows)
    width = len(rows[0])
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MalformedMap(f"Ragged row of length {len(row)}, expected {width}", row=r)
    if width < 2 or height < 2:
        raise MalformedMap(f"Map must be at least 2x2, got {height}x{width}")

    legend = _parse_legend(legend_block.split("\n") if legend_block else [], first_line=height + 1)
    zone_entries = {e.glyph: e for e in legend if e.glyph != DOOR_GLYPH}
    door_entries = {(e.row, e.col): e for e in legend if e.glyph == DOOR_GLYPH}

    glyph_ids = {glyph: i for i, glyph in enumerate(sorted(zone_entries))}
    cells = np.full((height, width), CellClass.WALL, dtype=np.int8)
    zone_of = np.full((height, width), -1, dtype=np.int64)

    for r, row in enumerate(rows):
        for c, glyph in enumerate(row):
            on_border = r in (0, height - 1) or c in (0, width - 1)
            if glyph == WALL_GLYPH:
                continue
            if on_border:
                raise MalformedMap("Open border: non-wall glyph on the map edge", row=r, col=c)
            if glyph == DOOR_GLYPH:
                entry = door_entries.get((r, c))
                if entry is None:
                    raise MalformedMap("Door has no legend entry naming its zone", row=r, col=c)
                cells[r, c] = CellClass.DOOR
                zone_of[r, c] = glyph_ids[entry.name]
            elif glyph == UNZONED_GLYPH:
                raise MalformedMap("Free cell without a zone", row=r, col=c)
            elif glyph.isupper() and glyph.isascii():
                if glyph not in glyph_ids:
                    raise MissingAnchor(f"Zone glyph {glyph!r} has no legend entry", row=r, col=c)
                cells[r, c] = CellClass.FREE
                zone_of[r, c] = glyph_ids[glyph]
            else:
                raise MalformedMap(f"Unknown glyph {glyph!r}", row=r, col=c)

    for (r, c), entry in door_entries.items():
        if not (0 <= r < height and 0 <= c < width) or rows[r][c] != DOOR_GLYPH:
            raise MalformedMap("Door legend entry does not point at a door cell", row=r, col=c)

    zones = []
    for glyph, zone_id in sorted(glyph_ids.items(), key=lambda item: item[1]):
        entry = zone_entries[glyph]
        if not np.any(zone_of == zone_id):
            raise MalformedMap(f"Zone {glyph!r} has no cells")
        r, c = entry.row, entry.col
        if not (0 <= r < height and 0 <= c < width) or rows[r][c] != glyph:
            raise MissingAnchor(f"Anchor of zone {glyph!r} is not one of its free cells", row=r, col=c)
        zones.append(Zone(id=zone_id, glyph=glyph, name=entry.name, anchor_cell=(r, c)))

    names = [z.name for z in zones]
    if len(set(names)) != len(names):
        raise MalformedMap("Zone names must be unique")

    _check_connected(cells)

    grid = GridMap(
        width=width,
        height=height,
        cell_size=cell_size,
        cells=cells,
        zone_of=zone_of,
        zones=tuple(zones),
        rows=rows,
        legend=tuple(legend),
        trailing_newline=trailing_newline,
    )
    logger.debug(
        "Parsed map",
        extra={"height": height, "width": width, "zones": len(zones), "free_cells": grid.free_cell_count},
    )
    return grid


def _parse_legend(lines: list[str], first_line: int) -> list[LegendEntry]:
    entries: list[LegendEntry] = []
    seen_zones: set[str] = set()
    seen_doors: set[tuple[int, int]] = set()
    for offset, line in enumerate(lines):
        line_no = first_line + offset
        match = _LEGEND_LINE.match(line)
        if match is None:
            raise MalformedMap(f"Bad legend line {line!r}", row=line_no)
        glyph, name, row, col = match.group(1), match.group(2), int(match.group(3)), int(match.group(4))
        if glyph == DOOR_GLYPH:
            if (row, col) in seen_doors:
                raise MalformedMap("Door listed twice in the legend", row=row, col=col)
            seen_doors.add((row, col))
        else:
            if glyph in seen_zones:
                raise MalformedMap(f"Zone glyph {glyph!r} listed twice in the legend", row=line_no)
            seen_zones.add(glyph)
        entries.append(LegendEntry(glyph=glyph, name=name, row=row, col=col))
    for entry in entries:
        if entry.glyph == DOOR_GLYPH and entry.name not in seen_zones:
            raise MalformedMap(f"Door names unknown zone {entry.name!r}", row=entry.row, col=entry.col)
    return entries


def _check_connected(cells: np.ndarray) -> None:
    passable = cells != CellClass.WALL
    labels, count = ndimage.label(passable)
    if count <= 1:
        return
    # Report the first cell (row-major) outside the component of the first free cell.
    first = labels[passable][0]
    stray = np.argwhere(passable & (labels != first))[0]
    raise DisconnectedMap(f"Free cells form {count} separate regions", row=int(stray[0]), col=int(stray[1]))


def serialize_map(grid: GridMap) -> str:
    """Write a GridMap back to map-file text, legend in its original order."""
    legend = "\n".join(f"{e.glyph}={e.name},{e.row},{e.col}" for e in grid.legend)
    text = "\n".join(grid.rows) + "\n\n" + legend
    return text + "\n" if grid.trailing_newline else text


def load_map(path: str | Path, cell_size: float = 0.5) -> GridMap:
    """Read and parse a map file."""
    text = Path(path).read_text(encoding="utf-8")
    grid = parse_map(text, cell_size=cell_size)
    logger.info("Loaded map", extra={"path": str(path), "zones": len(grid.zones)})
    return grid


def features(grid: GridMap) -> FeatureField:
    """
    Compute the bird's-eye feature field of a map.

    Wall distance is the 4-connected step count to the nearest wall (taxicab
    distance transform, which equals a breadth-first search out of the walls)
    divided by the map's largest such distance.

    Args:
        grid: Parsed map

    Returns:
        FeatureField of shape (height, width, 3 + Z + 3)
    """
    n_zones = len(grid.zones)
    dim = 3 + 1 + n_zones + 2
    values = np.zeros((grid.height, grid.width, dim), dtype=np.float64)
    rows, cols = np.indices((grid.height, grid.width))

    passable = grid.cells != CellClass.WALL
    distance = ndimage.distance_transform_cdt(passable, metric="taxicab").astype(np.float64)
    d_max = distance[passable].max() if passable.any() else 1.0

    values[rows, cols, grid.cells.astype(np.int64)] = 1.0
    values[..., 3] = np.where(passable, distance / d_max, 0.0)
    for zone in grid.zones:
        values[..., 4 + zone.id] = (grid.zone_of == zone.id).astype(np.float64)
    values[..., 4 + n_zones] = np.where(passable, cols / max(grid.width - 1, 1), 0.0)
    values[..., 5 + n_zones] = np.where(passable, rows / max(grid.height - 1, 1), 0.0)

    names = ("free", "wall", "door", "wall_dist") + tuple(f"zone:{z.name}" for z in grid.zones) + ("x", "y")
    return FeatureField(values=values, names=names)


def goal_candidates(grid: GridMap) -> list[tuple[int, tuple[int, int]]]:
    """One (zone id, anchor cell) per zone, zone ids ascending."""
    return [(zone.id, zone.anchor_cell) for zone in sorted(grid.zones, key=lambda z: z.id)]


def zone_at(grid: GridMap, cell: tuple[int, int]) -> Optional[Zone]:
    """The zone a cell belongs to, or None for walls and off-grid cells."""
    r, c = cell
    if not (0 <= r < grid.height and 0 <= c < grid.width):
        return None
    zone_id = int(grid.zone_of[r, c])
    return grid.zones[zone_id] if zone_id >= 0 else None
