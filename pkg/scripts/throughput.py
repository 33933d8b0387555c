"""Single-job and multi-job detection time on a long synthetic trip set."""

import argparse
import time

from scenario_fusion import nds, synth


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--hours", type=float, default=10.0)
    ap.add_argument("--seed", type=int, default=31)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    spec = synth.SynthSpec(seed=args.seed, grid_size=(12, 12),
                           trips=synth.TripSpec(count=1, route_nodes=40, yaw_noise_sd=0.5, heading_noise_sd=2.0))
    graph = synth.grid_graph(spec)
    trips, samples, k = [], 0, 0
    target = args.hours * 3600 * spec.trips.sample_rate
    rng = synth.SplitMix64(args.seed)
    while samples < target:
        trip, _ = synth.gen_trip(spec, synth.random_route(spec, rng), f"trip{k:04d}")
        trips.append(trip)
        samples += len(trip)
        k += 1
    print(f"{len(trips)} trips, {samples} samples ({samples / spec.trips.sample_rate / 3600:.2f} h)")
    reference = None
    for jobs in (1, 2, 8):
        best = float("inf")
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            events = nds.detect_many(trips, graph, jobs=jobs)
            best = min(best, time.perf_counter() - t0)
        reference = reference or events
        n = sum(len(e) for e in events)
        print(f"jobs={jobs}: best {best:.3f}s, {samples / best / 1e6:.1f} M samples/s, {n} events, "
              f"identical to jobs=1: {events == reference}")


if __name__ == "__main__":
    main()
