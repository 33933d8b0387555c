"""Recompute the published rate cells from their numerators and mileages."""

import argparse

from scenario_fusion.rates import Scale, rate

NCD_MILES = 25.991e12
NDS_MILES = 36.5e6

# (label, numerator, miles, scale, decimals shown, printed value)
CELLS = [
    ("NCD fatal, overall", 293_572, NCD_MILES, Scale.Per100MVMT, 2, "1.13"),
    ("NCD fatal, scenario", 38_856, NCD_MILES, Scale.Per100MVMT, 2, "0.15"),
    ("NCD non-fatal, overall", 84_596_476, NCD_MILES, Scale.Per100MVMT, 0, "325"),
    ("NCD non-fatal, scenario", 23_024_145, NCD_MILES, Scale.Per100MVMT, 0, "89"),
    ("NDS crash, overall", 1_720, NDS_MILES, Scale.PerMVMT, 2, "47.12"),
    ("NDS near-crash, overall", 6_982, NDS_MILES, Scale.PerMVMT, 1, "191.3"),
    ("NDS crash, scenario", 321.64, NDS_MILES, Scale.PerMVMT, 2, "9.14"),
    ("NDS near-crash, scenario", 768.02, NDS_MILES, Scale.PerMVMT, 1, "24.3"),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.parse_args()
    print(f"{'cell':28s} {'computed':>10s} {'printed':>8s}  status")
    for label, num, miles, scale, decimals, printed in CELLS:
        got = rate(num, miles, scale).render(decimals)
        status = "ok" if got == printed else "differs"
        print(f"{label:28s} {got:>10s} {printed:>8s}  {status} ({scale.label})")
    # the scenario cells for NDS need a denominator of num / printed million miles
    for label, num, _, _, _, printed in CELLS[-2:]:
        print(f"{label}: implied mileage {num / float(printed):.1f} million miles")


if __name__ == "__main__":
    main()
