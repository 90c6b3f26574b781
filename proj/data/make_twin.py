#!/usr/bin/env python3
"""Generates the synthetic 33-bus twin, its meter sidecar and a solar reference profile."""

import json
import math
from pathlib import Path

HERE = Path(__file__).resolve().parent

MV_V = 11000.0
LV_V = 433.0

# (from, to) over ss01..ss33, radial.
EDGES = [(i, i + 1) for i in range(1, 18)]
EDGES += [(2, 19), (19, 20), (20, 21), (21, 22)]
EDGES += [(3, 23), (23, 24), (24, 25)]
EDGES += [(6, 26)] + [(i, i + 1) for i in range(26, 33)]

# Segment lengths in metres; they add up to 13.1 km.
LENGTHS = [
    580, 520, 480, 450, 610, 420, 430, 460, 400, 380, 360, 400, 340, 370, 350, 380, 360,
    500, 420, 390, 350,
    460, 410, 380,
    300, 360, 380, 420, 400, 380, 350, 310,
]

CABLE = {"format": "sequence", "units": "ohm_per_km",
         "r1": 0.164, "x1": 0.092, "r0": 0.62, "x0": 0.31, "b1": 110.0, "b0": 110.0}

LV_PARENTS = [3, 5, 7, 8, 10, 11, 13, 14, 15, 16, 17, 20, 22, 24, 25, 27, 29, 30, 32, 33]
LOAD_KVA = [150, 180, 220, 260, 200, 240, 170, 210, 190, 230, 250, 160, 205, 195, 215, 185, 225, 175, 235, 180]
TOTAL_KVA = 4030.0
LOAD_PF = 0.95
PHASE_SHARES = [(0.34, 0.33, 0.33), (0.33, 0.34, 0.33), (0.33, 0.33, 0.34)]

SOLAR_BUS = "ss18"
SLACK_V = 1.03


def mv(i):
    return f"ss{i:02d}"


def lv(k):
    return f"lv{k:02d}"


def network():
    assert len(LENGTHS) == len(EDGES) and abs(sum(LENGTHS) - 13100) < 1e-9
    buses = [{"id": mv(i), "base_voltage_v": MV_V, "phases": "abc"} for i in range(1, 34)]
    buses += [{"id": lv(k + 1), "base_voltage_v": LV_V, "phases": "abc"} for k in range(len(LV_PARENTS))]
    lines = [{"id": f"cb{n + 1:02d}", "from": mv(a), "to": mv(b), "length_m": float(LENGTHS[n]), "phases": "abc",
              "impedance": CABLE} for n, (a, b) in enumerate(EDGES)]
    transformers = [{"id": f"tx{k + 1:02d}", "from": mv(p), "to": lv(k + 1), "rated_kva": 500.0,
                     "r_pu": 0.009, "x_pu": 0.045, "hv_connection": "delta", "lv_connection": "wye_grounded",
                     "nominal_ratio": MV_V / LV_V, "tap_step_pct": 1.25, "tap": 0, "tap_min": -4, "tap_max": 4}
                    for k, p in enumerate(LV_PARENTS)]
    scale = TOTAL_KVA / sum(LOAD_KVA)
    sin_phi = math.sqrt(1.0 - LOAD_PF ** 2)
    loads = []
    for k, kva in enumerate(LOAD_KVA):
        s = kva * scale
        shares = PHASE_SHARES[k % 3]
        loads.append({"id": f"ld{k + 1:02d}", "bus": lv(k + 1), "phases": "abc",
                      "kw": [round(s * LOAD_PF * f, 6) for f in shares],
                      "kvar": [round(s * sin_phi * f, 6) for f in shares]})
    generators = [{"id": "pv01", "bus": SOLAR_BUS, "phases": "abc", "kw": 0.0, "kvar": 0.0}]
    return {
        "bases": {"power_kva": 1000.0, "frequency_hz": 50.0},
        "slack": {"bus": "ss01", "voltage_pu": [SLACK_V] * 3, "angle_deg": [0.0, -120.0, 120.0]},
        "buses": buses, "lines": lines, "transformers": transformers, "loads": loads, "generators": generators,
    }


ALL_CHANNELS = ["v_ab", "v_bc", "v_ca", "i_a", "i_b", "i_c", "p_tot", "q_tot",
                "v_a", "v_b", "v_c", "p_a", "p_b", "p_c", "q_a", "q_b", "q_c"]


def meters():
    out = {"m_pcc": {"bus": "ss01", "rated_voltage_v": MV_V / math.sqrt(3), "rated_current_a": 400.0,
                     "measurands": ALL_CHANNELS, "sign": "generation"},
           "m_pv": {"bus": SOLAR_BUS, "rated_voltage_v": MV_V / math.sqrt(3), "rated_current_a": 200.0,
                    "measurands": ALL_CHANNELS, "sign": "generation"}}
    for k in range(len(LV_PARENTS)):
        out[f"m_{lv(k + 1)}"] = {"bus": lv(k + 1), "rated_voltage_v": 250.0, "rated_current_a": 700.0,
                                 "measurands": ALL_CHANNELS, "sign": "consumption"}
    return out


def solar_profile():
    """Normalised clear-sky shape for 2021-06-01 at 5-minute resolution."""
    rows = ["timestamp,normalised_output"]
    sunrise, sunset = 4.75, 20.25
    for n in range(24 * 12 + 1):
        h = n / 12.0
        x = 0.0
        if sunrise < h < sunset:
            x = math.sin(math.pi * (h - sunrise) / (sunset - sunrise)) ** 1.6
        hh, mm = divmod(n * 5, 60)
        stamp = f"2021-06-01T{hh:02d}:{mm:02d}:00Z" if hh < 24 else "2021-06-02T00:00:00Z"
        rows.append(f"{stamp},{x:.6f}")
    return "\n".join(rows) + "\n"


def main():
    (HERE / "twin33.json").write_text(json.dumps(network(), indent=2) + "\n")
    (HERE / "twin33_meters.json").write_text(json.dumps(meters(), indent=2) + "\n")
    (HERE / "solar_reference.csv").write_text(solar_profile())


if __name__ == "__main__":
    main()
