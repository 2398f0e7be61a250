"""Revised lifting-equation multipliers, recommended weight limit, and index.

All distances are in cm, the asymmetry angle in degrees, frequency in
lifts per minute.  The recommended weight limit (RWL) is the 23 kg load
constant scaled by six multipliers; the lifting index (LI) is the actual
load divided by the RWL.
"""

import bisect
import math
from dataclasses import dataclass

from .errors import ConfigError

LOAD_CONSTANT_KG = 23.0

H_MIN_CM = 25.0
H_MAX_CM = 63.0
V_REFERENCE_CM = 75.0
V_MAX_CM = 175.0
V_COEFF = 0.003
D_MIN_CM = 25.0
D_MAX_CM = 175.0
A_MAX_DEG = 135.0
A_COEFF = 0.0032

DURATIONS = ("1h", "2h", "8h")
COUPLINGS = ("good", "fair", "poor")

# Frequency multiplier, rows ordered by lifts/min.  Each row holds the six
# duration/height combinations: (<=1 h, <=2 h, <=8 h) x (V < 75, V >= 75).
FM_TABLE = (
    (0.2, 1.00, 1.00, 0.95, 0.95, 0.85, 0.85),
    (0.5, 0.97, 0.97, 0.92, 0.92, 0.81, 0.81),
    (1.0, 0.94, 0.94, 0.88, 0.88, 0.75, 0.75),
    (2.0, 0.91, 0.91, 0.84, 0.84, 0.65, 0.65),
    (3.0, 0.88, 0.88, 0.79, 0.79, 0.55, 0.55),
    (4.0, 0.84, 0.84, 0.72, 0.72, 0.45, 0.45),
    (5.0, 0.80, 0.80, 0.60, 0.60, 0.35, 0.35),
    (6.0, 0.75, 0.75, 0.50, 0.50, 0.27, 0.27),
    (7.0, 0.70, 0.70, 0.42, 0.42, 0.22, 0.22),
    (8.0, 0.60, 0.60, 0.35, 0.35, 0.18, 0.18),
    (9.0, 0.52, 0.52, 0.30, 0.30, 0.00, 0.15),
    (10.0, 0.45, 0.45, 0.26, 0.26, 0.00, 0.13),
    (11.0, 0.41, 0.41, 0.00, 0.23, 0.00, 0.00),
    (12.0, 0.37, 0.37, 0.00, 0.21, 0.00, 0.00),
    (13.0, 0.00, 0.34, 0.00, 0.00, 0.00, 0.00),
    (14.0, 0.00, 0.31, 0.00, 0.00, 0.00, 0.00),
    (15.0, 0.00, 0.28, 0.00, 0.00, 0.00, 0.00),
)

# Coupling multiplier by quality, split at V = 75 cm.
CM_TABLE = {
    "good": (1.00, 1.00),
    "fair": (0.95, 1.00),
    "poor": (0.90, 0.90),
}


@dataclass
class RnleTask:
    """One lifting task's geometry and timing inputs."""

    h_cm: float
    v_cm: float
    d_cm: float
    a_deg: float
    f_per_min: float
    duration: str
    coupling: str

    def validate(self) -> None:
        if self.h_cm < 0 or not math.isfinite(self.h_cm):
            raise ConfigError(f"H must be finite and non-negative, got {self.h_cm}")
        if self.v_cm < 0 or not math.isfinite(self.v_cm):
            raise ConfigError(f"V must be finite and non-negative, got {self.v_cm}")
        if self.d_cm < 0 or not math.isfinite(self.d_cm):
            raise ConfigError(f"D must be finite and non-negative, got {self.d_cm}")
        if self.a_deg < 0 or not math.isfinite(self.a_deg):
            raise ConfigError(f"A must be finite and non-negative, got {self.a_deg}")
        if self.f_per_min <= 0 or not math.isfinite(self.f_per_min):
            raise ConfigError(f"frequency must be positive, got {self.f_per_min}")
        if self.duration not in DURATIONS:
            raise ConfigError(f"duration must be one of {DURATIONS}")
        if self.coupling not in COUPLINGS:
            raise ConfigError(f"coupling must be one of {COUPLINGS}")


@dataclass
class MultiplierSet:
    """The six multipliers for one task."""

    hm: float
    vm: float
    dm: float
    am: float
    fm: float
    cm: float

    def product(self) -> float:
        return self.hm * self.vm * self.dm * self.am * self.fm * self.cm


def horizontal_multiplier(h_cm: float) -> float:
    """25/H with H clamped up to 25 cm; 0 beyond the 63 cm reach limit."""
    if h_cm > H_MAX_CM:
        return 0.0
    return H_MIN_CM / max(h_cm, H_MIN_CM)


def vertical_multiplier(v_cm: float) -> float:
    """1 - 0.003 |V - 75|; 0 above the 175 cm reach limit."""
    if v_cm > V_MAX_CM:
        return 0.0
    return 1.0 - V_COEFF * abs(v_cm - V_REFERENCE_CM)


def distance_multiplier(d_cm: float) -> float:
    """0.82 + 4.5/D, exactly 1 at or below 25 cm, 0 above 175 cm."""
    if d_cm > D_MAX_CM:
        return 0.0
    if d_cm <= D_MIN_CM:
        return 1.0
    return 0.82 + 4.5 / d_cm


def asymmetry_multiplier(a_deg: float) -> float:
    """1 - 0.0032 A; 0 beyond 135 degrees."""
    if a_deg > A_MAX_DEG:
        return 0.0
    return 1.0 - A_COEFF * a_deg


def frequency_multiplier(f_per_min: float, duration: str, v_cm: float) -> float:
    """Tabulated frequency multiplier.

    Frequencies below 0.2 lifts/min use the 0.2 row; values between
    tabulated rows are linearly interpolated; above 15 lifts/min the
    multiplier is 0.  The V >= 75 cm column applies at exactly 75 cm.
    """
    if duration not in DURATIONS:
        raise ConfigError(f"duration must be one of {DURATIONS}")
    col = 1 + 2 * DURATIONS.index(duration) + (1 if v_cm >= V_REFERENCE_CM else 0)
    f = max(f_per_min, FM_TABLE[0][0])
    if f > FM_TABLE[-1][0]:
        return 0.0
    freqs = [row[0] for row in FM_TABLE]
    for i, row_f in enumerate(freqs):
        if abs(f - row_f) < 1e-12:
            return FM_TABLE[i][col]
    j = bisect.bisect_right(freqs, f)
    f0, f1 = freqs[j - 1], freqs[j]
    y0, y1 = FM_TABLE[j - 1][col], FM_TABLE[j][col]
    return y0 + (y1 - y0) * (f - f0) / (f1 - f0)


def coupling_multiplier(coupling: str, v_cm: float) -> float:
    """Tabulated coupling multiplier, split at V = 75 cm."""
    if coupling not in COUPLINGS:
        raise ConfigError(f"coupling must be one of {COUPLINGS}")
    low, high = CM_TABLE[coupling]
    return high if v_cm >= V_REFERENCE_CM else low


def compute_multipliers(task: RnleTask) -> MultiplierSet:
    """All six multipliers for one task."""
    task.validate()
    return MultiplierSet(
        hm=horizontal_multiplier(task.h_cm),
        vm=vertical_multiplier(task.v_cm),
        dm=distance_multiplier(task.d_cm),
        am=asymmetry_multiplier(task.a_deg),
        fm=frequency_multiplier(task.f_per_min, task.duration, task.v_cm),
        cm=coupling_multiplier(task.coupling, task.v_cm),
    )


def compute_rwl(task: RnleTask) -> float:
    """Recommended weight limit in kg."""
    return LOAD_CONSTANT_KG * compute_multipliers(task).product()


def compute_li(load_kg: float, rwl_kg: float) -> float:
    """Lifting index.  A zero RWL yields +inf: the task exceeds all limits."""
    if load_kg < 0 or not math.isfinite(load_kg):
        raise ConfigError(f"load must be finite and non-negative, got {load_kg}")
    if rwl_kg < 0 or not math.isfinite(rwl_kg):
        raise ConfigError(f"RWL must be finite and non-negative, got {rwl_kg}")
    if rwl_kg == 0.0:
        return math.inf
    return load_kg / rwl_kg
