"""Renders each template in ../../templates with jinja2 against inputs.json.

Run from this directory to regenerate the golden files:
    python3 render.py
"""
import json
import pathlib

import jinja2

here = pathlib.Path(__file__).parent
templates = here / ".." / ".." / "templates"
env = jinja2.Environment(undefined=jinja2.StrictUndefined)
env.globals["len"] = len
inputs = json.loads((here / "inputs.json").read_text())
for name, variables in inputs.items():
    source = (templates / f"{name}.jinja").read_text()
    out = env.from_string(source).render(**variables)
    (here / f"{name}.txt").write_text(out)
    print(name, len(out))
