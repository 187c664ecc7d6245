"""Shared domain types, unit conversions, geodesy, and the safety-distance rule.

Everything internal runs in SI units (meters, meters/second, integer
milliseconds). Miles-per-hour and feet exist only at the configuration
boundary and in rendered reports, so conversions live here and nowhere else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

MPH_TO_MPS = 0.44704
FT_TO_M = 0.3048
EARTH_RADIUS_M = 6_371_000.0


class InvalidParameterError(ValueError):
    """A physically meaningless parameter (e.g. non-positive deceleration)."""


def mph_to_mps(mph: float) -> float:
    """Convert miles/hour to meters/second (exact factor 0.44704)."""
    return mph * MPH_TO_MPS


def mps_to_mph(mps: float) -> float:
    return mps / MPH_TO_MPS


def ft_to_m(ft: float) -> float:
    """Convert feet to meters (exact factor 0.3048)."""
    return ft * FT_TO_M


def m_to_ft(m: float) -> float:
    return m / FT_TO_M


def round_half_away(x: float) -> int:
    """Round to nearest integer, halves away from zero.

    Report tables compare against published integer-feet values; Python's
    built-in banker's rounding would disagree on exact halves.
    """
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


@dataclass(frozen=True)
class GeoPoint:
    """A WGS-84-style decimal-degree coordinate."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidParameterError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise InvalidParameterError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class Bsm:
    """One basic safety message: the per-vehicle 10 Hz record.

    ``t`` is milliseconds since scenario start (emission time). ``heading``
    is optional; nothing downstream requires it.
    """

    t: int
    vehicle_id: str
    pos: GeoPoint
    speed: float
    heading: float | None = None

    def __post_init__(self) -> None:
        if self.speed < 0:
            raise InvalidParameterError(f"negative speed: {self.speed}")

    def to_doc(self) -> dict:
        doc = {
            "t": self.t,
            "vehicle_id": self.vehicle_id,
            "lat": self.pos.lat,
            "lon": self.pos.lon,
            "speed": self.speed,
        }
        if self.heading is not None:
            doc["heading"] = self.heading
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "Bsm":
        return cls(
            t=int(doc["t"]),
            vehicle_id=str(doc["vehicle_id"]),
            pos=GeoPoint(float(doc["lat"]), float(doc["lon"])),
            speed=float(doc["speed"]),
            heading=float(doc["heading"]) if "heading" in doc else None,
        )


@dataclass(frozen=True)
class SimConstants:
    """Scenario-wide physical constants, all strictly positive.

    Defaults: 10 Hz messaging, 5 mph / 20 ft queue thresholds, 11.2 ft/s^2
    braking deceleration, 300 m short-range radio reach, 200 ms safety
    latency budget.
    """

    bsm_interval_s: float = 0.1
    queue_speed_threshold_mps: float = mph_to_mps(5.0)
    queue_gap_threshold_m: float = ft_to_m(20.0)
    decel_mps2: float = ft_to_m(11.2)
    dsrc_range_m: float = 300.0
    safety_latency_req_ms: int = 200

    def __post_init__(self) -> None:
        for name in (
            "bsm_interval_s",
            "queue_speed_threshold_mps",
            "queue_gap_threshold_m",
            "decel_mps2",
            "dsrc_range_m",
            "safety_latency_req_ms",
        ):
            value = getattr(self, name)
            if not value > 0:
                raise InvalidParameterError(f"{name} must be positive, got {value}")

    @property
    def bsm_interval_ms(self) -> int:
        return int(round(self.bsm_interval_s * 1000))


def distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters (haversine, spherical Earth).

    Corridor scales here are a few kilometers and report precision is feet,
    so an ellipsoid would buy nothing.
    """
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def min_safety_distance(speed_mps: float, decel_mps2: float) -> float:
    """Braking distance v^2 / (2a) in meters.

    This is the stopping distance once braking begins, i.e. the minimum gap a
    vehicle needs at the moment the first warning packet arrives.
    """
    if decel_mps2 <= 0:
        raise InvalidParameterError(f"deceleration must be positive, got {decel_mps2}")
    if speed_mps < 0:
        raise InvalidParameterError(f"speed must be non-negative, got {speed_mps}")
    return speed_mps * speed_mps / (2.0 * decel_mps2)
