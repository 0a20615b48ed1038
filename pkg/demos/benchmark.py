"""The default synthetic benchmark: directions of the with/without-profile table.

    python3 demos/benchmark.py [seed ...]     (default seeds 1-5, about a minute each)
"""

import sys
import time

from topic_exposure.evaluation import run_benchmark

seeds = [int(s) for s in sys.argv[1:]] or [1, 2, 3, 4, 5]
for seed in seeds:
    start = time.perf_counter()
    rep = run_benchmark(seed)
    r = {c.key: c.mean for c in rep.cells if c.status == "ok"}
    print(f"seed {seed} ({time.perf_counter() - start:.0f}s)")
    for key in ("nn", "cnn", "pf", "encdec"):
        off = r[f"{key}_off"]
        on = r.get(f"{key}_on")
        on_text = "n/a" if on is None else f"{on:.4f} ({'better' if on < off else 'not better'})"
        print(f"  {key:7s} off {off:.4f}  on {on_text}")
    print(f"  cnn <= nn: {r['cnn_off'] <= r['nn_off']}, "
          f"encdec beats both NN: {r['encdec_off'] < min(r['nn_off'], r['cnn_off'])}")
