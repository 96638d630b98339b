"""Put a converted voice back into the scene in two ways.

The inverse remix reuses the estimated mixing matrix for every source. The
steering remix replaces the target's column with an anechoic far-field
model, so the converted voice arrives without the room's reverberation.
A gain backend stands in for a real converter here.
"""

import numpy as np

from spatialvc import pipeline
from spatialvc.room_sim import default_scene
from spatialvc.signal_core import istft

cfg = pipeline.RunConfig(scene=default_scene(0.5), vc="gain:0.5", seed=1)
sim = pipeline.simulate(cfg)
Y, state, separated = pipeline.separate(sim.observation, cfg)

target = istft(separated, Y.length).channel(0)
converted = pipeline.convert(target, cfg)
waves = pipeline.remix_waves(state, separated, converted, cfg)

obs = sim.observation.samples
for name, w in waves.items():
    ratio = np.linalg.norm(w.samples) / np.linalg.norm(obs)
    print(f"{name:8s} remix: energy relative to the observation {ratio:.2f}")
