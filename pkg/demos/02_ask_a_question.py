"""Answer one natural-language query by composing geographic operations.

Run from the repository root:

    python3 demos/02_ask_a_question.py
"""

import json

from geoprog import (build_city_bundle, check_program, execute_program,
                     parse_program)

# The bundle wires the synthetic scene to a landmark registry, a language
# field, and stub detector/embedder providers, so everything runs offline.
bundle = build_city_bundle(seed=7)
engine = bundle.engine

text = """\
SEG0=GetLandmarkSeg(query='Building A')
SEG1=SegAround(area=SEG0,distance=60)
DETS=GetObjectSeg(query='car',area=SEG1)
ANSWER=Count(dets=DETS)"""

print("program:")
print(text)

ast = parse_program(text)
report = check_program(ast)
print(f"\nstatic checks: {'clean' if report.clean else report}")

value, trace = execute_program(ast, engine)
print(f"\nanswer: {value} car(s) within 60 m of Building A")

print("\ntrace:")
print(json.dumps(trace.to_json_dict(), indent=2)[:600])

# Programs are total: a bad landmark produces None plus an error trace,
# never an exception.
bad = parse_program("ANSWER=GetLandmarkSeg(query='Atlantis')")
value, trace = execute_program(bad, engine)
print(f"\nunknown landmark -> {value!r}, "
      f"step status {trace.steps[0]['status']!r}")
