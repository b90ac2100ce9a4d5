"""Asymmetric view selection: deterministic top-K vs score-proportional sampling.

Scores every camera pair of an arc rig from baseline angles at surface
anchors, then contrasts the teacher policy (always the top-K sources) with
the student policy (sampling without replacement, proportional to score).
"""

import collections

import numpy as np

import mvskit as mk

scene = mk.render(mk.SceneSpec(
    surface="sphere",
    resolution=(48, 64),
    rig=mk.RigSpec(count=9, kind="arc", spacing=2.5, radius=5.0, look_at=(0, 0, 5)),
    sphere_center=(0, 0, 5), sphere_radius=2.2,
))
scores = mk.compute_view_scores(scene.cameras, scene.anchors, scene.anchor_visibility)

ref = 4
row = scores.score[ref]
print("pair scores from view 4:")
print("  " + "  ".join(f"{j}:{row[j]:6.1f}" for j in range(scores.n_views) if j != ref))

top = mk.select_top_k(scores, ref, 4)
print(f"\nteacher (top-4, deterministic): {top}")

counts = collections.Counter()
for seed in range(2000):
    for j in mk.sample_by_score(scores, ref, 3, seed):
        counts[j] += 1
print("student (sampled 3-of-8, 2000 seeds), selection frequency:")
total = sum(counts.values())
expected = row / row.sum()
for j in sorted(counts):
    bar = "#" * int(60 * counts[j] / total)
    print(f"  view {j}: {counts[j] / 2000:5.1%}  {bar}")
print("\nevery source can appear, but high-score views dominate;")
print("the teacher set stays fixed while the student set varies per draw.")
