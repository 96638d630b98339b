"""Shoebox room impulse responses and how reverberant they are.

The default room holds a two-microphone array in its centre, with one talker
on each side of broadside. Lowering the wall reflection coefficient shortens
the reverberation time.
"""

import numpy as np

from spatialvc.room_sim import default_scene, measure_rt60, simulate_rirs

fs = 24000
scene = default_scene()
print(f"array centre: {scene.array_center()}")
for i in range(len(scene.sources)):
    print(f"source {i}: {np.degrees(scene.source_angle(i)):+.1f} deg from broadside")

for r in (0.2, 0.5, 0.8):
    rirs = simulate_rirs(default_scene(r), fs)
    rt = measure_rt60(rirs.rirs[0, 0], fs)
    print(f"r = {r}: RIR length {rirs.rirs.shape[-1]} samples, RT60 {rt * 1000:.0f} ms")
