"""Run one scene end to end and read its report.

With the identity converter the inverse remix should sit very close to the
ideal rendering in spatial terms, and the steering remix noticeably further
away, since it drops the target's reverberation.
"""

import json
import tempfile
from pathlib import Path

from spatialvc import pipeline

with tempfile.TemporaryDirectory() as out:
    cfg = pipeline.RunConfig(seed=0, output_dir=out)
    report = pipeline.run_scene(cfg)
    print("files:", ", ".join(sorted(p.name for p in Path(out).iterdir())))

print(json.dumps({k: report[k] for k in ("ldd", "si_sdr_improvement_db", "rt60_s")}, indent=2))
