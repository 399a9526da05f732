"""Version tracking for releases."""

# Updated with each numerical fix
VERSION = "1.3.0"  # Latest: cutoff evaluation off the ramp
LAST_UPDATED = "2026-10-19T09:00:00+00:00"

RECENT_FIXES = [
    "Cutoff derivatives no longer overflow when λ is far below r",
    "Assembly error bound divides the slope term by r",
    "FD oracle charts follow the profile in local segment parameters",
    "Flat ambients bend on the cone boundary",
    "Plane curvatures from the warping functions",
    "Bending profiles keep log radii (deep bends no longer underflow)",
]
