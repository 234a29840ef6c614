#!/usr/bin/env python3
"""
Compares turbulence statistics of the outdoor link and the indoor reference path.

For each environment, a per-second r0 trajectory with the measured mean and
spread drives a synthetic beacon centroid series; the series then goes through
the same r0 estimation used on real camera data.
"""
import os
import sys
import argparse

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.services.atmos_characterization import AtmosConfig, r0_series, summarize_turbulence
from src.services.channel_model import R0_PRESETS, ChannelConfig, synth_centroid_series, synth_r0_trajectory


def compare(duration: float, seed: int) -> None:
    channel, atmos = ChannelConfig(), AtmosConfig()
    print(f"{'environment':<12} {'target r0':>10} {'mean r0':>10} {'target std':>11} {'std':>8} {'Cn2':>12}")
    for offset, (name, (mean, relative_std)) in enumerate(sorted(R0_PRESETS.items())):
        trajectory = synth_r0_trajectory(mean, relative_std, duration, seed + 2 * offset)
        series = synth_centroid_series(mean, channel.beam_diameter, channel.wavelength_beacon, atmos.frame_rate,
                                       duration, channel.turbulence_corr_time, seed + 2 * offset + 1, trajectory)
        estimates = r0_series(series, atmos.frames_per_estimate, channel.beam_diameter, channel.wavelength_beacon)
        summary = summarize_turbulence(estimates, channel.wavelength_beacon, channel.distance)
        if summary.mean_r0 is None:
            print(f"{name:<12} no usable blocks")
            continue
        spread = "n/a" if summary.relative_std is None else f"{summary.relative_std:.1f} %"
        print(f"{name:<12} {mean * 100:>8.2f}cm {summary.mean_r0 * 100:>8.2f}cm "
              f"{relative_std * 100:>9.1f} % {spread:>8} {summary.cn2:>12.3e}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description='Compare indoor and outdoor turbulence statistics.')
    parser.add_argument('--duration', type=float, default=300.0, help='Seconds of centroid data per environment')
    parser.add_argument('--seed', type=int, default=0, help='Random seed')
    args = parser.parse_args()

    compare(args.duration, args.seed)
