"""Turn-detector precision, recall and net-yaw error against planted turns, across noise levels."""

import argparse
import time

from scenario_fusion import nds, synth

LEVELS = [(0.0, 0.0), (0.5, 2.0), (1.0, 4.0), (2.0, 8.0), (4.0, 15.0)]


def run(seed, trips, yaw_sd, heading_sd, jobs):
    spec = synth.SynthSpec(seed=seed, trips=synth.TripSpec(count=trips, yaw_noise_sd=yaw_sd,
                                                          heading_noise_sd=heading_sd, lat_accel_noise_sd=0.05))
    pairs = synth.gen_trips(spec)
    t0 = time.perf_counter()
    events = nds.detect_many([p[0] for p in pairs], synth.grid_graph(spec), jobs=jobs)
    dt = time.perf_counter() - t0
    return synth.score_detections(events, [p[1] for p in pairs]), dt


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--trips", type=int, default=200)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    print("yaw_sd heading_sd   TP  FP  FN  precision  recall  max|dyaw|  detect_s")
    for yaw_sd, heading_sd in LEVELS:
        s, dt = run(args.seed, args.trips, yaw_sd, heading_sd, args.jobs)
        print(f"{yaw_sd:6.1f} {heading_sd:10.1f} {s.true_positive:4d} {s.false_positive:3d} {s.false_negative:3d}"
              f"  {s.precision:9.3f}  {s.recall:6.3f}  {s.max_yaw_error:9.2f}  {dt:8.3f}")


if __name__ == "__main__":
    main()
