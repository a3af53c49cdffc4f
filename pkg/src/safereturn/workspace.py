"""Grid and terrain workspaces and their labeled-MDP models.

Map files are plain text with sections::

    [grid]
    #########
    #S..a..b#
    #########
    [legend]
    a = r1
    b = bs, stay
    v = oneway=S
    [motion]
    p_intent = 0.8
    initial = 1,1

``#`` is blocked and ``.`` unlabeled unless the legend says otherwise.
Legend tokens are propositions except ``blocked``, ``stay`` (adds a stay
action) and ``oneway=D`` (the cell can only be entered moving in
direction ``D``).  Terrain maps add a ``[terrain]`` section naming a
whitespace-separated depth file and the ``delta_up_max`` /
``delta_down_max`` limits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidGrid, InvalidTerrain
from .model import LabeledMdp

DIRS = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}
# drift sides relative to the intended direction: (left, right)
SIDES = {"N": ("W", "E"), "S": ("E", "W"), "E": ("N", "S"), "W": ("S", "N")}


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    cell_labels: dict = field(default_factory=dict)
    blocked: frozenset = frozenset()
    motion: tuple = (0.8, 0.1, 0.1, 0.0)
    action_costs: dict = field(default_factory=lambda: {"N": 1.0, "S": 1.0, "E": 1.0, "W": 1.0, "stay": 1.0})
    initial_cell: tuple = (0, 0)
    stay_cells: frozenset = frozenset()
    oneway: dict = field(default_factory=dict)
    chars: tuple = ()
    legend: dict = field(default_factory=dict)

    def validate(self, err=InvalidGrid) -> None:
        if self.width < 1 or self.height < 1:
            raise err("grid must have at least one cell")
        if abs(sum(self.motion) - 1.0) > 1e-9 or min(self.motion) < 0:
            raise err(f"motion probabilities {self.motion} must be nonnegative and sum to 1")
        if tuple(self.initial_cell) in self.blocked:
            raise err("initial cell is blocked")
        r, c = self.initial_cell
        if not (0 <= r < self.height and 0 <= c < self.width):
            raise err("initial cell outside the grid")
        if any(v <= 0 for v in self.action_costs.values()):
            raise err("action costs must be positive")

    def cells(self) -> list:
        return [(r, c) for r in range(self.height) for c in range(self.width) if (r, c) not in self.blocked]


@dataclass(frozen=True)
class TerrainSpec:
    grid: GridSpec
    depth: np.ndarray
    delta_up_max: float
    delta_down_max: float
    depth_file: str = ""

    def validate(self) -> None:
        self.grid.validate(InvalidTerrain)
        d = np.asarray(self.depth, dtype=float)
        if d.shape != (self.grid.height, self.grid.width):
            raise InvalidTerrain(f"depth shape {d.shape} does not match grid {(self.grid.height, self.grid.width)}")
        if not np.all(np.isfinite(d)):
            raise InvalidTerrain("non-finite depth")
        if self.delta_up_max > self.delta_down_max:
            raise InvalidTerrain("delta_up_max exceeds delta_down_max")


def _build(g: GridSpec, feasible=None) -> LabeledMdp:
    cells = g.cells()
    index = {cell: i for i, cell in enumerate(cells)}
    p_int, p_left, p_right, p_stay = g.motion

    def land(cell, d):
        r, c = cell
        dr, dc = DIRS[d]
        t = (r + dr, c + dc)
        if t not in index:
            return cell
        want = g.oneway.get(t)
        if want is not None and want != d:
            return cell
        if feasible is not None and not feasible(cell, t):
            return cell
        return t

    recs = []
    for cell in cells:
        i = index[cell]
        for d in ("N", "S", "E", "W"):
            left, right = SIDES[d]
            dist: dict = {}
            for tgt, pr in ((land(cell, d), p_int), (land(cell, left), p_left),
                            (land(cell, right), p_right), (cell, p_stay)):
                if pr > 0:
                    dist[index[tgt]] = dist.get(index[tgt], 0.0) + pr
            recs.append((i, d, g.action_costs.get(d, 1.0), sorted(dist.items())))
        if cell in g.stay_cells:
            recs.append((i, "stay", g.action_costs.get("stay", 1.0), [(i, 1.0)]))
    ap = sorted({a for ls in g.cell_labels.values() for a in ls})
    labels = [g.cell_labels.get(cell, frozenset()) for cell in cells]
    coords = [(c, r) for r, c in cells]
    return LabeledMdp.from_transitions(len(cells), ap, labels, index[tuple(g.initial_cell)], recs, coords)


def grid_to_mdp(g: GridSpec) -> LabeledMdp:
    """One state per free cell; moves N/S/E/W with lateral drift.

    Mass heading into a wall, the border or a one-way cell entered the wrong
    way stays put.
    """
    g.validate()
    return _build(g)


def terrain_to_mdp(t: TerrainSpec) -> LabeledMdp:
    """Grid model where climbing more than ``delta_up_max`` is impossible."""
    t.validate()
    depth = np.asarray(t.depth, dtype=float)

    def feasible(a, b):
        rise = depth[a] - depth[b]
        return rise <= t.delta_up_max + 1e-12

    return _build(t.grid, feasible)


def cell_index(m: LabeledMdp) -> dict:
    """(row, col) -> state index for models built here."""
    return {(r, c): i for i, (c, r) in enumerate(m.coords)}


# ---------------------------------------------------------------- map files


def _sections(text: str) -> dict:
    out, cur = {}, None
    for raw in text.splitlines():
        line = raw.rstrip("\n")
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip().lower()
            out[cur] = []
            continue
        if cur is None:
            if s and not s.startswith(";"):
                raise InvalidGrid(f"content before first section: {s!r}")
            continue
        if cur != "grid" and (not s or s.startswith(";")):
            continue
        out[cur].append(line if cur == "grid" else s)
    return out


def _kv(lines) -> dict:
    out = {}
    for ln in lines:
        if "=" not in ln:
            raise InvalidGrid(f"expected key = value, got {ln!r}")
        k, v = ln.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_map(text: str, base_dir: Path | None = None):
    """Parse a map file into a :class:`GridSpec` or :class:`TerrainSpec`."""
    sec = _sections(text)
    if "grid" not in sec:
        raise InvalidGrid("missing [grid] section")
    rows = [ln for ln in sec["grid"] if ln.strip()]
    if not rows:
        raise InvalidGrid("empty grid")
    width = max(len(r) for r in rows)
    rows = [r.ljust(width, "#") for r in rows]
    legend_raw = {}
    for ln in sec.get("legend", []):
        if "=" not in ln:
            raise InvalidGrid(f"bad legend line {ln!r}")
        ch, v = ln.split("=", 1)
        ch = ch.strip()
        if len(ch) != 1:
            raise InvalidGrid(f"legend key must be one character: {ch!r}")
        legend_raw[ch] = tuple(t.strip() for t in v.split(",") if t.strip())
    legend = {"#": ("blocked",), ".": ()}
    legend.update(legend_raw)
    labels, blocked, stay, oneway = {}, set(), set(), {}
    initial = None
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch == "S" and "S" not in legend_raw:
                initial = (r, c)
                continue
            if ch not in legend:
                raise InvalidGrid(f"character {ch!r} at ({r},{c}) missing from legend")
            props = set()
            for tok in legend[ch]:
                if tok == "blocked":
                    blocked.add((r, c))
                elif tok == "stay":
                    stay.add((r, c))
                elif tok.startswith("oneway="):
                    d = tok.split("=", 1)[1].strip().upper()
                    if d not in DIRS:
                        raise InvalidGrid(f"bad one-way direction {d!r}")
                    oneway[(r, c)] = d
                else:
                    props.add(tok)
            if props:
                labels[(r, c)] = frozenset(props)
    mo = _kv(sec.get("motion", []))
    try:
        motion = (float(mo.get("p_intent", 0.8)), float(mo.get("p_drift_left", 0.1)),
                  float(mo.get("p_drift_right", 0.1)), float(mo.get("p_stay", 0.0)))
        costs = {"N": 1.0, "S": 1.0, "E": 1.0, "W": 1.0, "stay": 1.0}
        if "cost" in mo:
            costs = {k: float(mo["cost"]) for k in costs}
        for k in list(costs):
            if f"cost_{k}" in mo:
                costs[k] = float(mo[f"cost_{k}"])
        if "initial" in mo:
            initial = tuple(int(v) for v in mo["initial"].split(","))
    except ValueError as exc:
        raise InvalidGrid(f"bad [motion] value: {exc}") from None
    if initial is None:
        raise InvalidGrid("no initial cell ('S' in the grid or initial = r,c)")
    g = GridSpec(width, len(rows), labels, frozenset(blocked), motion, costs, tuple(initial),
                 frozenset(stay), oneway, tuple(rows), {k: v for k, v in legend_raw.items()})
    if "terrain" not in sec:
        g.validate()
        return g
    te = _kv(sec["terrain"])
    try:
        up, down = float(te["delta_up_max"]), float(te["delta_down_max"])
        fname = te["depth"]
    except (KeyError, ValueError) as exc:
        raise InvalidTerrain(f"bad [terrain] section: {exc}") from None
    path = Path(fname) if base_dir is None else Path(base_dir) / fname
    try:
        depth = np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as exc:
        raise InvalidTerrain(f"cannot read depth file {path}: {exc}") from None
    t = TerrainSpec(g, depth, up, down, fname)
    t.validate()
    return t


def load_map(path):
    path = Path(path)
    return parse_map(path.read_text(), path.parent)


def serialize_map(spec) -> str:
    """Inverse of :func:`parse_map` (the depth file is referenced, not written)."""
    g = spec.grid if isinstance(spec, TerrainSpec) else spec
    out = ["[grid]"] + list(g.chars)
    if g.legend:
        out.append("[legend]")
        out += [f"{k} = {', '.join(v)}" for k, v in g.legend.items()]
    p_int, p_l, p_r, p_s = g.motion
    out += ["[motion]", f"p_intent = {p_int!r}", f"p_drift_left = {p_l!r}",
            f"p_drift_right = {p_r!r}", f"p_stay = {p_s!r}"]
    out += [f"cost_{k} = {v!r}" for k, v in g.action_costs.items()]
    out.append(f"initial = {g.initial_cell[0]},{g.initial_cell[1]}")
    if isinstance(spec, TerrainSpec):
        out += ["[terrain]", f"depth = {spec.depth_file}", f"delta_up_max = {spec.delta_up_max!r}",
                f"delta_down_max = {spec.delta_down_max!r}"]
    return "\n".join(out) + "\n"


def spec_to_mdp(spec) -> LabeledMdp:
    return terrain_to_mdp(spec) if isinstance(spec, TerrainSpec) else grid_to_mdp(spec)


def scaled_grid(n: int, motion=(0.8, 0.1, 0.1, 0.0)) -> GridSpec:
    """Open ``n x n`` room with point features at fixed relative positions.

    Features: ``r1``..``r3`` task cells and a two-cell walled base bay.  The
    feature count does not depend on ``n``, so the abstraction size stays
    fixed while the low-level model grows.
    """
    if n < 8:
        raise InvalidGrid("scaled grid needs n >= 8")
    chars = [["."] * n for _ in range(n)]

    def put(fr, fc, ch):
        r, c = min(n - 1, int(round(fr * (n - 1)))), min(n - 1, int(round(fc * (n - 1))))
        chars[r][c] = ch
        return r, c

    put(0.15, 0.8, "a")
    put(0.8, 0.85, "b")
    put(0.75, 0.2, "c")
    # base bay in the top-left corner: two cells reached from below only
    chars[0][0] = chars[0][1] = "B"
    chars[0][2] = "#"
    chars[1][0] = "v"
    chars[1][1] = "#"
    chars[n // 2][n // 2] = "S"
    legend = {"a": ("r1",), "b": ("r2",), "c": ("r3",), "B": ("bs",), "v": ("oneway=N",)}
    text = "[grid]\n" + "\n".join("".join(r) for r in chars) + "\n[legend]\n"
    text += "\n".join(f"{k} = {', '.join(v)}" for k, v in legend.items())
    text += "\n[motion]\n" + "\n".join(
        f"{k} = {v}" for k, v in zip(("p_intent", "p_drift_left", "p_drift_right", "p_stay"), motion))
    return parse_map(text)
