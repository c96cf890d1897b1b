"""Material tables: tissue properties, Hounsfield-unit classification, and
acoustic/elastic domain tagging.

Element material assignment is always by explicit material id from the mesh;
HU classification is a preprocessing/diagnostic tool (the fat/melon HU
overlap makes HU alone non-identifying).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

ACOUSTIC = "acoustic"
ELASTIC = "elastic"


class MaterialError(ValueError):
    pass


class InvalidMaterialError(MaterialError):
    """Physically inconsistent material (negative Lame lambda etc.)."""


@dataclass(frozen=True)
class TissueProperties:
    """Averaged mechanical properties of one tissue type.

    hu_min/hu_max bound the Hounsfield range (either may be None for an
    open-ended bound, e.g. water's HU < -2000).
    """

    name: str
    rho: float  # kg/m^3
    vp: float  # m/s
    vs: float  # m/s, 0 for fluids
    hu_min: float | None = None
    hu_max: float | None = None

    def __post_init__(self):
        if self.rho <= 0:
            raise MaterialError(f"{self.name}: density must be positive, got {self.rho}")
        if self.vp <= 0:
            raise MaterialError(f"{self.name}: vp must be positive, got {self.vp}")
        if self.vs < 0 or self.vs >= self.vp:
            raise MaterialError(f"{self.name}: need 0 <= vs < vp, got vs={self.vs} vp={self.vp}")

    @property
    def impedance(self) -> float:
        return self.rho * self.vp

    @property
    def lam(self) -> float:
        """First Lame parameter rho*(vp^2 - 2 vs^2); must be non-negative."""
        value = self.rho * (self.vp**2 - 2.0 * self.vs**2)
        if value < 0:
            raise InvalidMaterialError(
                f"{self.name}: vp^2 < 2 vs^2 gives negative lambda ({value:.6g})"
            )
        return value

    @property
    def mu(self) -> float:
        return self.rho * self.vs**2

    def hu_contains(self, hu: float) -> bool:
        lo = -math.inf if self.hu_min is None else self.hu_min
        hi = math.inf if self.hu_max is None else self.hu_max
        if self.hu_min is None and self.hu_max is None:
            return False
        return lo <= hu <= hi


def domain_kind(props: TissueProperties) -> str:
    """acoustic iff the shear velocity vanishes."""
    return ACOUSTIC if props.vs == 0.0 else ELASTIC


class MaterialTable:
    """Ordered tissue list plus the material-id -> properties mapping."""

    def __init__(self, entries):
        # entries: iterable of (material_id, TissueProperties)
        self.by_id: dict[int, TissueProperties] = {}
        self.tissues: list[TissueProperties] = []
        for mid, props in entries:
            mid = int(mid)
            if mid in self.by_id:
                raise MaterialError(f"duplicate material id {mid}")
            self.by_id[mid] = props
            self.tissues.append(props)

    def __len__(self):
        return len(self.tissues)

    def get(self, material_id: int) -> TissueProperties:
        try:
            return self.by_id[int(material_id)]
        except KeyError:
            raise MaterialError(f"material id {material_id} not in table") from None

    def by_name(self, name: str) -> TissueProperties:
        for props in self.tissues:
            if props.name == name:
                return props
        raise MaterialError(f"no material named {name!r}")

    def id_of(self, name: str) -> int:
        for mid, props in self.by_id.items():
            if props.name == name:
                return mid
        raise MaterialError(f"no material named {name!r}")

    def check_mesh(self, materials):
        missing = sorted(set(int(m) for m in materials) - set(self.by_id))
        if missing:
            raise MaterialError(f"mesh references undefined material ids {missing}")


def builtin_dolphin_table() -> MaterialTable:
    """The built-in five-tissue table (densities kg/m^3, velocities m/s)."""
    return MaterialTable(
        [
            (1, TissueProperties("soft_tissue", 1013, 1536, 215, hu_min=-35, hu_max=110)),
            (2, TissueProperties("acoustic_fat", 928, 1390, 186, hu_min=-115, hu_max=-35)),
            (3, TissueProperties("melon", 884, 1316, 184, hu_min=-115, hu_max=-35)),
            (4, TissueProperties("bone", 2035, 3400, 1817, hu_min=235, hu_max=2030)),
            (5, TissueProperties("water", 1028, 1480, 0, hu_min=None, hu_max=-2000)),
        ]
    )


def classify_hu(table: MaterialTable, hu: float) -> list[TissueProperties]:
    """All tissues whose HU range contains ``hu``; may be empty or ambiguous
    (acoustic fat and melon share the same range)."""
    if len(table) == 0:
        raise MaterialError("classify_hu on an empty table")
    return [t for t in table.tissues if t.hu_contains(hu)]


def snap_hu(table: MaterialTable, hu: float) -> TissueProperties:
    """Nearest-range assignment for HU values that fall in a gap.

    Used only behind the --hu-snap flag; silent snapping would hide
    segmentation defects.
    """
    best, best_dist = None, math.inf
    for t in table.tissues:
        lo = -math.inf if t.hu_min is None else t.hu_min
        hi = math.inf if t.hu_max is None else t.hu_max
        if t.hu_min is None and t.hu_max is None:
            continue
        dist = 0.0 if lo <= hu <= hi else min(abs(hu - lo), abs(hu - hi))
        if dist < best_dist:
            best, best_dist = t, dist
    if best is None:
        raise MaterialError("no tissue with HU bounds in table")
    return best


# ---------------------------------------------------------------------------
# SMAT1 text format: `<material_id> <name> <rho> <vp> <vs> [hu_min hu_max]`


def format_smat(table: MaterialTable) -> str:
    lines = []
    for mid, t in table.by_id.items():
        line = f"{mid} {t.name} {t.rho:.17g} {t.vp:.17g} {t.vs:.17g}"
        if t.hu_min is not None or t.hu_max is not None:
            lo = "-inf" if t.hu_min is None else f"{t.hu_min:.17g}"
            hi = "inf" if t.hu_max is None else f"{t.hu_max:.17g}"
            line += f" {lo} {hi}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def write_smat(table: MaterialTable, path):
    with open(path, "w") as f:
        f.write(format_smat(table))


def parse_smat(text: str) -> MaterialTable:
    entries = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (5, 7):
            raise MaterialError(f"SMAT1 line {ln}: expected 5 or 7 fields, got {len(parts)}")
        mid = int(parts[0])
        rho, vp, vs = float(parts[2]), float(parts[3]), float(parts[4])
        hu_min = hu_max = None
        if len(parts) == 7:
            hu_min = None if parts[5] == "-inf" else float(parts[5])
            hu_max = None if parts[6] == "inf" else float(parts[6])
        entries.append((mid, TissueProperties(parts[1], rho, vp, vs, hu_min, hu_max)))
    if not entries:
        raise MaterialError("SMAT1 file defines no materials")
    return MaterialTable(entries)


def read_smat(path) -> MaterialTable:
    with open(path) as f:
        return parse_smat(f.read())
