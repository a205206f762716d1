"""
The same pipeline from the command line
=======================================

Every step is also a ``binagg`` subcommand.  A JSON manifest strings steps
together and records a hash of every file they touch, so a rerun can be
compared byte for byte.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

steps = [
    ["synth", "--classes", "4", "--per-class", "8", "--per-image", "40", "--dim", "64",
     "--seed", "0", "--gt", "gt.txt", "--cnn", "cnn.gvec", "-o", "db.dsc"],
    ["train", "bmm", "--k", "8", "--sample", "db.dsc", "--seed", "0", "-o", "m.bmm"],
    ["encode", "--method", "fv-bmm", "--model", "m.bmm", "--input", "db.dsc", "-o", "fv.gvec"],
    ["postproc", "--beta", "0.5", "-i", "fv.gvec", "-o", "fv.pp.gvec"],
    ["evaluate", "--db", "fv.pp.gvec", "--queries", "fv.pp.gvec", "--gt", "gt.txt",
     "--exclude-query"],
    ["evaluate", "--db", "fv.pp.gvec", "--queries", "fv.pp.gvec", "--gt", "gt.txt",
     "--exclude-query", "--fuse", "cnn.gvec,cnn.gvec", "--alpha", "0.5", "--kv"],
]

with tempfile.TemporaryDirectory() as tmp:
    manifest = Path(tmp) / "pipeline.json"
    manifest.write_text(json.dumps({"steps": steps}, indent=1))
    # python -m binagg is the same entry point as the installed binagg script
    res = subprocess.run([sys.executable, "-m", "binagg", "pipeline", str(manifest)],
                         capture_output=True, text=True)
    print(res.stdout)
    if res.returncode:
        print(res.stderr, file=sys.stderr)
        sys.exit(res.returncode)
    lock = json.loads((Path(tmp) / "pipeline.json.lock.json").read_text())
    for step in lock["steps"]:
        print(step["argv"][0], {f: h[:12] for f, h in step["files"].items()})
