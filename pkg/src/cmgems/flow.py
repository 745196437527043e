"""Resistive loss accounting for inter-cluster links and PCC feeders."""
from __future__ import annotations

import math
from dataclasses import dataclass

SECONDS_PER_KWH = 3.6e6  # joules per kWh


@dataclass(frozen=True)
class LineParams:
    resistivity: float  # ohm*m
    cross_section: float  # m^2
    length: float  # m
    nominal_voltage: float  # V

    def __post_init__(self):
        for name in ("resistivity", "cross_section", "length", "nominal_voltage"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"line {name} must be > 0, got {value}")


# Copper, 100 mm^2, 1 km at 4.16 kV (IEEE-123 nominal).
DEFAULT_LINE = LineParams(1.72e-8, 1e-4, 1000.0, 4160.0)


def line_resistance(p: LineParams) -> float:
    return p.resistivity * p.length / p.cross_section


def line_losses(p: LineParams, power_kw: float, duration_s: float) -> float:
    """Energy (kWh) dissipated carrying ``power_kw`` for ``duration_s`` seconds."""
    if not duration_s > 0:
        raise ValueError(f"duration_s must be > 0, got {duration_s}")
    current = power_kw * 1000.0 / p.nominal_voltage
    return line_resistance(p) * current * current * duration_s / SECONDS_PER_KWH
