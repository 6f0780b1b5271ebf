"""
Spatio-temporal triage of a richness raster stack
=================================================

Baseline percentiles and per-pixel trends place every forested pixel in one
of five zones, which are then tallied per forest class.
"""
import numpy as np

from mycosat.trend import ZONES, classify_pixel, gap_fill, sample_trajectories, synth_stack, triage, zonal_stats

stack, mask = synth_stack(64, 64, seed=0, missing_fraction=0.15)
stack, filled, left = gap_fill(stack, 2024, 2023, mask)
print(f"gap-filled {filled:.1%} of forest pixels in 2024; {left} still missing")

for pct, slope in [(80, -1), (80, 0), (30, 1), (10, -1), (40, -1)]:
    print(f"percentile {pct}, slope {slope:+}: {ZONES[classify_pixel(pct, slope)]}")

tri = triage(stack, mask)
print("thresholds:", tri.diagnostics["thresholds"], "rule gaps:", tri.diagnostics["rule_gap_count"])

for row in zonal_stats(tri.zone, mask):
    if row["forest_class"] == "ASNW":
        print(f"ASNW {row['zone']:>12}: {row['hectares']:6.2f} ha  share {row['share']:.3f}")

rows, notes = sample_trajectories(stack, tri.zone, per_zone=100, seed=0)
for r in rows:
    if r["zone"] == "Vulnerable" and r["year"] in (2017, 2024):
        print(f"Vulnerable {r['year']}: {r['mean']:.2f} [{r['ci95_low']:.2f}, {r['ci95_high']:.2f}] n={r['n']}")
for note in notes:
    print(note)
