"""Walk through the two physical models everything else leans on.

Run from the repository root:  python3 demos/channel_and_propulsion.py
"""

import numpy as np

from uavmec.channel import (ChannelParams, LinkGeometry, expected_channel_gain,
                            los_probability, uplink_rate)
from uavmec.cost_model import propulsion_power
from uavmec.scenario import PropulsionParams


def channel_walkthrough():
    params = ChannelParams()
    print("== air-to-ground channel ==")
    print(f"reference loss at {params.ref_dist_m:.0f} m: "
          f"{params.ref_loss:.1f}x")
    print("\nelevation sweep at 100 m altitude:")
    print(f"{'horiz m':>8} {'elev deg':>9} {'P(LoS)':>8} "
          f"{'E[gain]':>12} {'rate Mb/s':>10}")
    for horiz in (0.0, 50.0, 150.0, 400.0, 1000.0, 2500.0):
        geom = LinkGeometry(horiz_dist_m=horiz, altitude_m=100.0)
        gain = expected_channel_gain(geom, params)
        rate = uplink_rate(gain, 1.0, params)
        print(f"{horiz:8.0f} {geom.elevation_deg:9.1f} "
              f"{los_probability(geom, params):8.4f} "
              f"{gain:12.3e} {rate / 1e6:10.1f}")
    print("\nhigher elevation keeps the link line-of-sight, which is why")
    print("the flight planner pulls a UAV toward the users it serves.")


def propulsion_walkthrough():
    prop = PropulsionParams()
    speeds = np.linspace(0.0, 60.0, 601)
    power = propulsion_power(speeds, prop)
    v_best = speeds[power.argmin()]
    print("\n== rotary-wing propulsion ==")
    print(f"{'m/s':>5} {'watts':>8}")
    for v in (0.0, 5.0, 10.0, 20.0, 30.0, 45.0, 60.0):
        print(f"{v:5.0f} {float(propulsion_power(np.array([v]), prop)[0]):8.2f}")
    print(f"\nhovering costs {power[0]:.2f} W but the curve bottoms out at "
          f"{power.min():.2f} W near {v_best:.1f} m/s,")
    print("so a moving UAV can spend less energy than one parked over a user.")


if __name__ == "__main__":
    channel_walkthrough()
    propulsion_walkthrough()
