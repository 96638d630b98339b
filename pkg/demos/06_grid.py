"""Sweep the wall reflection coefficient and tabulate spatial distortion.

Four scenes per setting, the smallest grid accepted, keep this quick; raise ``scenes_per_cell`` for
tighter statistics.
"""

import tempfile

from spatialvc import pipeline

with tempfile.TemporaryDirectory() as out:
    base = pipeline.RunConfig(output_dir=out)
    grid = pipeline.GridSpec(reflection_coeffs=(0.2, 0.5, 0.8), scenes_per_cell=4)
    result = pipeline.run_grid(grid, base, write_scenes=False)

print(result["table"])
