"""0-dimensional persistent homology of 2-D scalar maps over a superlevel filtration.

Pixels are swept from high to low value with a union-find; a pixel with no
higher processed neighbour births a component, merges kill the younger
component (elder rule), and the last survivor is the essential class.
Coordinates are (x, y) = (column, row).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PersistencePair:
    """One component's lifetime: born at threshold ``birth``, killed at ``death``.

    Superlevel convention: birth >= death.  ``birth_coord``/``death_coord``
    are the (x, y) pixels where the component appeared and was merged away;
    the essential pair dies at the global minimum by convention.
    """

    birth: float
    death: float
    birth_coord: tuple
    death_coord: tuple
    essential: bool = False

    @property
    def persistence(self) -> float:
        return self.birth - self.death


@dataclass
class PersistenceDiagram:
    pairs: list = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


@dataclass
class GeneratorSet:
    """Coordinate tuples ((x_b, y_b), (x_d, y_d)) of topological events."""

    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def normalize_unit(values: np.ndarray) -> np.ndarray:
    """Min-max rescale to [0, 1]; constant maps collapse to all zeros."""
    arr = np.asarray(values, dtype=np.float64)
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def _neighbour_offsets(connectivity: int):
    if connectivity == 4:
        return ((-1, 0), (1, 0), (0, -1), (0, 1))
    if connectivity == 8:
        return ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


def compute_ph0(values: np.ndarray, connectivity: int = 4) -> PersistenceDiagram:
    """Persistence diagram of the superlevel filtration of a [0,1] scalar map.

    Ties are broken in raster (row-major) order: among equal values the
    lower raster index is processed first and, on equal births, survives a
    merge.  Callers normalise the map; values outside [0,1] are rejected.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("map values must lie in [0, 1]; normalise first")
    h, w = arr.shape
    flat = arr.reshape(-1)
    n = flat.size
    order = np.lexsort((np.arange(n), -flat))
    offsets = _neighbour_offsets(connectivity)

    parent = np.full(n, -1, dtype=np.int64)
    birth_val = np.empty(n)
    birth_idx = np.empty(n, dtype=np.int64)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def xy(idx):
        return (int(idx % w), int(idx // w))

    pairs = []
    for p in order:
        v = flat[p]
        py, px = divmod(int(p), w)
        roots = set()
        for dy, dx in offsets:
            qy, qx = py + dy, px + dx
            if 0 <= qy < h and 0 <= qx < w:
                q = qy * w + qx
                if parent[q] >= 0:
                    roots.add(find(q))
        parent[p] = p
        birth_val[p] = v
        birth_idx[p] = p
        if not roots:
            # No higher processed neighbour: p births a component.
            continue
        # Elder rule: highest birth survives; ties keep the lower raster root.
        members = sorted(roots, key=lambda r: (-birth_val[r], birth_idx[r]))
        elder = members[0]
        for r in members[1:]:
            pairs.append(
                PersistencePair(
                    birth=float(birth_val[r]),
                    death=float(v),
                    birth_coord=xy(birth_idx[r]),
                    death_coord=xy(int(p)),
                    essential=False,
                )
            )
            parent[r] = elder
        parent[p] = elder

    survivor = find(int(order[-1]))
    min_idx = int(flat.argmin())
    pairs.append(
        PersistencePair(
            birth=float(birth_val[survivor]),
            death=float(flat[min_idx]),
            birth_coord=xy(birth_idx[survivor]),
            death_coord=xy(min_idx),
            essential=True,
        )
    )
    pairs.sort(
        key=lambda pr: (-pr.persistence, -pr.birth, pr.birth_coord[1], pr.birth_coord[0])
    )
    return PersistenceDiagram(pairs=pairs)


def pairs_to_generators(pd: PersistenceDiagram) -> GeneratorSet:
    """Map each diagram pair to its ((x_b, y_b), (x_d, y_d)) coordinates."""
    return GeneratorSet(entries=[(p.birth_coord, p.death_coord) for p in pd.pairs])


def filter_generators(pd: PersistenceDiagram, generators: GeneratorSet, tau0: float) -> GeneratorSet:
    """Keep generators whose pair persists strictly longer than ``tau0``."""
    if tau0 < 0:
        raise ValueError("tau0 must be >= 0")
    if len(pd.pairs) != len(generators.entries):
        raise ValueError("diagram and generator set are not index-aligned")
    kept = [
        entry
        for pair, entry in zip(pd.pairs, generators.entries)
        if pair.persistence > tau0
    ]
    return GeneratorSet(entries=kept)


def filter_diagram(pd: PersistenceDiagram, tau0: float) -> PersistenceDiagram:
    """Diagram restricted to pairs with persistence strictly above ``tau0``."""
    if tau0 < 0:
        raise ValueError("tau0 must be >= 0")
    return PersistenceDiagram(pairs=[p for p in pd.pairs if p.persistence > tau0])


# ---------------------------------------------------------------------------
# CSV serialisation (CLI contract)

CSV_HEADER = "birth,death,bx,by,dx,dy,essential"


def diagram_to_csv(pd: PersistenceDiagram, comments=()) -> str:
    """Render a diagram as CSV; floats carry 9 significant digits."""
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    buf.write(CSV_HEADER + "\n")
    for p in pd.pairs:
        buf.write(
            f"{p.birth:.9g},{p.death:.9g},{p.birth_coord[0]},{p.birth_coord[1]},"
            f"{p.death_coord[0]},{p.death_coord[1]},{int(p.essential)}\n"
        )
    return buf.getvalue()


def diagram_from_csv(text: str) -> PersistenceDiagram:
    pairs = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("birth"):
            continue
        b, d, bx, by, dx, dy, ess = line.split(",")
        pairs.append(
            PersistencePair(
                birth=float(b),
                death=float(d),
                birth_coord=(int(bx), int(by)),
                death_coord=(int(dx), int(dy)),
                essential=bool(int(ess)),
            )
        )
    return PersistenceDiagram(pairs=pairs)
