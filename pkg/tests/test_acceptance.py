"""The nine acceptance criteria, each reported as one PASS/FAIL line."""

import math
import os
import time
import xml.etree.ElementTree as ET
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from scenario_fusion import nds, records, scenario, synth, testgen
from scenario_fusion.exposure import AamTable, VioTable, vmt_estimate
from scenario_fusion.params import fit_histogram
from scenario_fusion.rates import Scale, rate
from scenario_fusion.rng import SplitMix64
from scenario_fusion.scenario import Atom, Outcome, ScenarioDefinition, UnknownPolicy


@contextmanager
def criterion(log, number, title, budget_s=None):
    t0 = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        dt = time.perf_counter() - t0
        over = budget_s is not None and dt >= budget_s
        status = "PASS" if ok and not over else "FAIL"
        note = f", budget {budget_s:g}s exceeded" if over else ""
        line = f"[{status}] criterion {number}: {title} ({dt:.2f}s{note})"
        log.append(line)
        print(line)
    if over:
        pytest.fail(f"criterion {number} took {dt:.2f}s, budget {budget_s}s")


# 1 ---------------------------------------------------------------------------


def test_1_published_rates(acceptance_log):
    with criterion(acceptance_log, 1, "published rate cells reproduce", budget_s=1.0):
        ncd, nds_miles = 25.991e12, 36.5e6
        cells = [
            (293_572, ncd, Scale.Per100MVMT, 2, "1.13"),
            (38_856, ncd, Scale.Per100MVMT, 2, "0.15"),
            (84_596_476, ncd, Scale.Per100MVMT, 0, "325"),
            (23_024_145, ncd, Scale.Per100MVMT, 0, "89"),
            (1_720, nds_miles, Scale.PerMVMT, 2, "47.12"),
            (6_982, nds_miles, Scale.PerMVMT, 1, "191.3"),
        ]
        for num, miles, scale, decimals, printed in cells:
            assert rate(num, miles, scale).render(decimals) == printed


# 2 ---------------------------------------------------------------------------


def _random_table(rng):
    cy0 = int(rng.integers(1995, 2020, 1)[0])
    ncy = int(rng.integers(1, 6, 1)[0])
    my0 = cy0 - int(rng.integers(0, 9, 1)[0])
    entries = {}
    for cy in range(cy0, cy0 + ncy):
        for my in range(my0, cy + 2):
            if rng.uniform(1)[0] < 0.7:
                entries[(cy, my)] = int(rng.integers(0, 100_000, 1)[0])
    aam = {a: int(rng.integers(0, 20_000, 1)[0]) for a in range(cy0 + ncy - my0 + 1)}
    return entries, aam, cy0, cy0 + ncy - 1, my0


def _oracle(entries, aam, cy_from, cy_to, my_min):
    total = Fraction(0)
    for cy in range(cy_from, cy_to + 1):
        for my in range(my_min, cy + 2):
            if (cy, my) in entries:
                total += entries[(cy, my)] * aam[max(cy - my, 0)]
    return float(total)


def test_2_exposure_oracle(acceptance_log):
    with criterion(acceptance_log, 2, "VMT estimate equals nested-loop oracle; linear and additive", budget_s=5.0):
        rng = SplitMix64(20240501)
        for _ in range(1000):
            entries, aam, a, b, m = _random_table(rng)
            vio, table = VioTable(entries), AamTable.from_mapping(aam)
            got = vmt_estimate(vio, table, a, b, m)
            assert got == _oracle(entries, aam, a, b, m)
            c = int(rng.integers(0, 100, 1)[0])
            assert vmt_estimate(vio.scaled(c), table, a, b, m) == c * got
            split = int(rng.integers(a, b + 1, 1)[0])
            right = vmt_estimate(vio, table, split + 1, b, m) if split < b else 0.0
            assert vmt_estimate(vio, table, a, split, m) + right == got


# 3 ---------------------------------------------------------------------------


def _monte_carlo(noise):
    spec = synth.SynthSpec(seed=11, trips=synth.TripSpec(count=200, yaw_noise_sd=noise[0], heading_noise_sd=noise[1],
                                                        lat_accel_noise_sd=noise[2]))
    pairs = synth.gen_trips(spec)
    events = nds.detect_many([p[0] for p in pairs], synth.grid_graph(spec))
    return synth.score_detections(events, [p[1] for p in pairs])


def test_3_detector_fidelity(acceptance_log):
    with criterion(acceptance_log, 3, "detector precision/recall on 200 seeded trips", budget_s=30.0):
        clean = _monte_carlo((0.0, 0.0, 0.0))
        noisy = _monte_carlo((0.5, 2.0, 0.05))
        print(f"  noise-free P={clean.precision:.3f} R={clean.recall:.3f}; "
              f"noisy P={noisy.precision:.3f} R={noisy.recall:.3f} max|dyaw|={noisy.max_yaw_error:.2f} deg "
              f"over {noisy.true_positive + noisy.false_negative} planted turns")
        assert clean.true_positive > 0
        assert clean.precision == 1.0 and clean.recall == 1.0
        assert noisy.precision >= 0.95 and noisy.recall >= 0.95
        assert max(clean.max_yaw_error, noisy.max_yaw_error) <= 3.0


# 4 ---------------------------------------------------------------------------


def _trip(y):
    n = len(y)
    return nds.Trip("y", 10.0, np.arange(n) / 10.0, np.full(n, 5.0), y, np.zeros(n), np.zeros(n), ["s"] * n)


def test_4_yaw_integration(acceptance_log):
    with criterion(acceptance_log, 4, "trapezoidal yaw integration accuracy and symmetries"):
        assert abs(nds.integrate_yaw(_trip(np.full(101, 9.0)), (0, 100)) - 90.0) < 1.0
        t = np.arange(51) / 10.0
        assert abs(nds.integrate_yaw(_trip(30.0 * np.sin(np.pi * t / 5.0)), (0, 50)) - 300.0 / math.pi) < 1.0
        rng = SplitMix64(4)
        for _ in range(200):
            n = int(rng.integers(3, 400, 1)[0])
            y = rng.normal(n, 0.0, 20.0)
            trip = _trip(y)
            whole = nds.integrate_yaw(trip, (0, n - 1))
            rev = _trip(y[::-1])
            assert abs(float(np.trapezoid(rev.yaw_rate[::-1], rev.t[::-1])) + whole) <= 1e-9
            m = int(rng.integers(1, n - 1, 1)[0])
            assert abs(nds.integrate_yaw(trip, (0, m)) + nds.integrate_yaw(trip, (m, n - 1)) - whole) <= 1e-9


# 5 ---------------------------------------------------------------------------


def test_5_scenario_selection(acceptance_log, bundled, mappings):
    with criterion(acceptance_log, 5, "planted scenario fractions recovered exactly"):
        spec, datasets, _ = bundled
        turns = scenario.builtin_definition()
        definitions = [
            turns,
            ScenarioDefinition("turns_excl_unknown", turns.record_predicate, unknown_policy=UnknownPolicy.ExcludeFromBoth),
            ScenarioDefinition("junction_only", Atom("junction", "eq", "Junction")),
        ]
        fractions = {}
        for rs in spec.records:
            kept, _ = records.apply_cohort_filter(datasets[rs.dataset])
            items = scenario.flag_records(kept, records.derive_flags(kept, mappings))
            lighting = "LIGHTING" if rs.dataset.is_nds else "LGT_COND"
            daylight = ScenarioDefinition("daylight", Atom(lighting, "eq", "Daylight"))
            fractions[rs.dataset] = scenario.proportions(turns, items).fraction
            assert fractions[rs.dataset] == round(rs.match_fraction * rs.n) / rs.n
            for d in definitions + [daylight]:
                counts = scenario.proportions(d, items).counts
                assert counts[Outcome.Match] + counts[Outcome.NoMatch] + counts[Outcome.Unknown] == len(items)
        assert fractions[records.DatasetId.FatalNCD] == 0.30


# 6 ---------------------------------------------------------------------------


def test_6_distribution_statistics(acceptance_log):
    with criterion(acceptance_log, 6, "moments, count conservation and 2-sigma bounds"):
        rng = SplitMix64(6)
        for _ in range(300):
            n = int(rng.integers(1, 500, 1)[0])
            x = rng.normal(n, float(rng.uniform(1, -50, 50)[0]), float(rng.uniform(1, 0.1, 30)[0]))
            d = fit_histogram(x, np.sort(rng.uniform(int(rng.integers(2, 30, 1)[0]), -60, 60)))
            mean = math.fsum(x.tolist()) / n
            sd = math.sqrt(math.fsum(((v - mean) ** 2 for v in x.tolist())) / n)
            assert abs(d.mean - mean) <= 1e-9 * max(abs(mean), 1e-300) or abs(d.mean - mean) < 1e-12
            assert abs(d.sd - sd) <= 1e-9 * sd or sd == d.sd == 0
            assert int(d.counts.sum()) + d.underflow + d.overflow == n
        lo, hi = fit_histogram(SplitMix64(2024).normal(1_000_000), 60).bounds_2sigma
        print(f"  2-sigma bounds of 1e6 normals: ({lo:.4f}, {hi:.4f})")
        assert abs(lo + 2) <= 0.02 and abs(hi - 2) <= 0.02


# 7 ---------------------------------------------------------------------------


def _speed_lat(n, seed):
    rng = SplitMix64(seed)
    speed = rng.uniform(n, 3.0, 12.0)
    return speed, np.abs(0.25 * speed + rng.normal(n, 0.0, 0.6))


def test_7_sampling_fidelity(acceptance_log):
    with criterion(acceptance_log, 7, "KS <= 0.02 and JointEmpirical rank correlation within 0.05"):
        speed, lat = _speed_lat(5000, 70)
        logical = testgen.build_logical(
            "fig4c", testgen.StaticFeatures(), [testgen.Actor("ego", "Ego", 0, "TurnLeft", "$speed")],
            {
                "speed": testgen.ParameterBinding("speed", "m/s", fit_histogram(speed), observations=speed),
                "lat": testgen.ParameterBinding("lat", "m/s^2", fit_histogram(lat), observations=lat),
            },
        )
        sample = np.array([c.values["speed"] for c in testgen.sample_concrete(logical, 10_000, "IndependentMarginal", 7)])
        src = np.sort(speed)
        xs = np.sort(sample)
        f = np.searchsorted(src, xs, side="right") / len(src)
        k = np.arange(1, len(xs) + 1) / len(xs)
        ks = float(max(np.max(k - f), np.max(f - (k - 1 / len(xs)))))
        rho_src = stats.spearmanr(speed, lat).statistic
        joint = testgen.sample_concrete(logical, 10_000, "JointEmpirical", 7)
        rho = stats.spearmanr([c.values["speed"] for c in joint], [c.values["lat"] for c in joint]).statistic
        print(f"  KS={ks:.4f}; rank correlation source={rho_src:.3f} sampled={rho:.3f}")
        assert ks <= 0.02
        assert abs(rho - rho_src) <= 0.05


# 8 ---------------------------------------------------------------------------


def test_8_emission(acceptance_log, tmp_path):
    with criterion(acceptance_log, 8, "emission round-trip, byte-identical batches, 12 connections"):
        speed, lat = _speed_lat(2000, 80)
        logical = testgen.build_logical(
            "left_turn", testgen.StaticFeatures(4, 1),
            [testgen.Actor("ego", "Ego", 0, "TurnLeft", "$speed", trigger_value="$gap"),
             testgen.Actor("other", "PrincipalOther", 2, "Straight", "$other")],
            {"speed": fit_histogram(speed), "gap": (10.0, 60.0), "other": (5.0, 20.0)},
        )
        cs = testgen.sample_concrete(logical, 100, "StratifiedMarginal", seed=8)
        for c in cs:
            assert testgen.parse_scenario(testgen.emit_scenario(c)).parameters == c.values
        runs = []
        for d in ("a", "b"):
            paths = testgen.write_batch(logical, testgen.sample_concrete(logical, 100, "StratifiedMarginal", seed=8), tmp_path / d)
            runs.append({os.path.relpath(p, tmp_path / d): open(p, "rb").read() for p in paths})
        assert runs[0] == runs[1]
        assert sum(p.endswith(".xosc") for p in runs[0]) == 100
        junction = ET.fromstring(testgen.emit_road(logical.static)).find("junction")
        assert len(junction.findall("connection")) == 12


# 9 ---------------------------------------------------------------------------


def test_9_throughput(acceptance_log):
    spec = synth.SynthSpec(seed=31, grid_size=(12, 12),
                           trips=synth.TripSpec(count=40, route_nodes=40, yaw_noise_sd=0.5, heading_noise_sd=2.0,
                                                lat_accel_noise_sd=0.05))
    pairs = synth.gen_trips(spec)
    trips, graph = [p[0] for p in pairs], synth.grid_graph(spec)
    samples = sum(len(t) for t in trips)
    title = f"detect {samples} samples ({samples / 36000:.1f} h at 10 Hz) in < 1 s, jobs 1 == jobs 8"
    with criterion(acceptance_log, 9, title):
        assert samples >= 360_000
        t0 = time.perf_counter()
        single = nds.detect_many(trips, graph, jobs=1)
        elapsed = time.perf_counter() - t0
        print(f"  single-job detection: {elapsed:.3f}s")
        assert elapsed < 1.0
        assert single == nds.detect_many(trips, graph, jobs=8)
