"""Stand-in simulator driven by markers in the design text.

compile: fake_sim.py compile OUT TOP FILES...  (fails on a SYNTAX_ERROR marker)
run:     fake_sim.py run OUT                   (HANG sleeps; GOOD passes; else fails)
"""
import sys
import time
from pathlib import Path

mode, out = sys.argv[1], Path(sys.argv[2])
if mode == "compile":
    text = "".join(Path(f).read_text() for f in sys.argv[4:])
    if "SYNTAX_ERROR" in text:
        print("%Error: syntax error")
        sys.exit(1)
    (out / "design.txt").write_text(text)
    sys.exit(0)
text = (out / "design.txt").read_text()
if "HANG" in text:
    time.sleep(30)
print("TESTS: PASS" if "GOOD" in text else "TESTS: FAIL")
