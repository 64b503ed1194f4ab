'''
Sweeps: running every cell of a SweepGrid (optionally in a process
pool), aggregating the verdicts into a SweepResult and emitting it as
CSV, JSON, SVG or PNG.
'''

from aebsim._metadata import __version__ # noqa: F401

import os
import json
import logging
import collections
import dataclasses
import concurrent.futures

import numpy as np

from aebsim.helpers import ModelError, derive_seed, canonical_json, canonical_hash, \
  dump_json, json_object_hook, document_delta, get_subdict
from aebsim.scenarios import load_scenario, cell_document, expand_sweep
from aebsim.simulation import run_once
from aebsim.monitors import SEVERITY

# Cell tokens, most severe first
CELL_SEVERITY = [ "ModelError" ] + [ o.value for o in SEVERITY ]

SUMMARY_FIELDS = [ "min_separation", "stop_position_margin", "first_brake_time",
                   "first_violation_time", "crash_time", "violated_constraint" ]


def _run_repetition(task):
  ''' Runs one (cell, repetition). Module level so that it pickles for the process pool. '''
  coords, rep, seed, document = task
  scenario = load_scenario(document, coordinates=coords)
  try:
    _, verdict = run_once(scenario, seed)
  except ModelError as e:
    logging.warning(f"Cell {list(coords)} repetition {rep}: {e}")
    return coords, rep, { "seed": seed, "outcome": "ModelError", "error": str(e) }
  summary = { k: getattr(verdict, k) for k in SUMMARY_FIELDS }
  return coords, rep, dict(seed=seed, outcome=verdict.outcome.value, **summary)


def majority_outcome(outcomes):
  ''' Most common token; ties go to the more severe one. '''
  counts = collections.Counter(outcomes)
  return min(counts, key=lambda o: (-counts[o], CELL_SEVERITY.index(o)))


def _mean_std(values):
  import uncertainties
  values = [ v for v in values if v is not None ]
  if len(values) == 0: return None
  if not all(np.isfinite(values)): return float(min(values))
  return uncertainties.ufloat(float(np.mean(values)), float(np.std(values)))


def aggregate_cell(coords, repetitions, delta):
  outcome = majority_outcome([ r["outcome"] for r in repetitions ])
  representative = next(r for r in repetitions if r["outcome"] == outcome)
  cell = { "coordinates": list(coords),
           "outcome": outcome,
           "repetitions": repetitions,
           "min_separation": _mean_std([ r.get("min_separation") for r in repetitions ]),
           "delta": delta }
  for k in SUMMARY_FIELDS[1:]: cell[k] = representative.get(k)
  if outcome == "ModelError": cell["error"] = representative["error"]
  return cell


@dataclasses.dataclass
class SweepResult:
  name: str
  axes: list # [{"name", "path", "values"}]
  cells: dict # coordinates tuple -> cell summary dict
  provenance: dict

  @property
  def shape(self): return tuple(len(a["values"]) for a in self.axes)

  def __post_init__(self):
    assert len(self.cells) == int(np.prod(self.shape)), "Every grid cell must be populated."

  def outcomes(self):
    ''' ndarray of outcome tokens with one dimension per axis. '''
    m = np.empty(self.shape, dtype=object)
    for coords, c in self.cells.items(): m[coords] = c["outcome"]
    return m

  def count(self, outcome): return sum(c["outcome"] == outcome for c in self.cells.values())

  def summary(self, field):
    ''' ndarray of a per-cell summary field (nominal values, NaN for None). '''
    m = np.full(self.shape, np.nan)
    for coords, c in self.cells.items():
      v = c.get(field)
      if v is not None: m[coords] = getattr(v, "nominal_value", v)
    return m

  def _JSONEncoder(self):
    return { "name": self.name, "axes": self.axes, "provenance": self.provenance,
             "cells": [ self.cells[k] for k in sorted(self.cells) ] }

  @classmethod
  def from_dict(cls, d):
    return cls(name=d["name"], axes=d["axes"], provenance=d["provenance"],
               cells={ tuple(c["coordinates"]): c for c in d["cells"] })

  @classmethod
  def from_json(cls, s): return cls.from_dict(json.loads(s, object_hook=json_object_hook))

  def to_json(self): return canonical_json(self)

  def __eq__(self, other):
    return isinstance(other, SweepResult) and canonical_json(self) == canonical_json(other)

  def to_xarray(self):
    '''xarray Dataset with one dimension per axis and the outcome token,
       min_separation and first_brake_time as data variables.'''
    import xarray
    dims = [ a["name"].replace("/", "_") for a in self.axes ]
    coords = { d: list(a["values"]) for d, a in zip(dims, self.axes) }
    ds = xarray.Dataset(
      { "outcome": (dims, self.outcomes().astype(str)),
        "min_separation": (dims, self.summary("min_separation")),
        "first_brake_time": (dims, self.summary("first_brake_time")) },
      coords=coords)
    ds["min_separation"].attrs["units"] = "m"
    ds["first_brake_time"].attrs["units"] = "s"
    ds.attrs.update({ k: str(v) for k, v in self.provenance.items() })
    return ds


def run_sweep(grid, parallelism=1):
  '''Run every cell of grid grid.repetitions times and aggregate.

     Seeds derive from (base_seed, cell coordinates, repetition), so the
     result does not depend on execution order or parallelism. Model
     errors are recorded in their cell and do not stop the sweep.
  '''
  assert parallelism >= 1, "parallelism must be >= 1."
  expand_sweep(grid) # raises ScenarioError naming the first invalid cell
  docs = { coords: cell_document(grid, coords) for coords in grid.coordinates() }
  tasks = [ (coords, rep, derive_seed(grid.base_seed, list(coords), rep), docs[coords])
            for coords in grid.coordinates() for rep in range(grid.repetitions) ]
  logging.info(f"Sweep '{grid.name}': {len(docs)} cells x {grid.repetitions} repetitions, parallelism {parallelism}.")

  results = collections.defaultdict(dict)
  def collect(out):
    coords, rep, r = out
    results[coords][rep] = r
    logging.info(f"Cell {list(coords)} repetition {rep}: {r['outcome']}")

  if parallelism == 1:
    for t in tasks: collect(_run_repetition(t))
  else:
    with concurrent.futures.ProcessPoolExecutor(max_workers=parallelism) as executor:
      for out in executor.map(_run_repetition, tasks, chunksize=1): collect(out)

  cells = { coords: aggregate_cell(coords, [ results[coords][r] for r in range(grid.repetitions) ],
                                   document_delta(grid.base, docs[coords]))
            for coords in grid.coordinates() }

  provenance = { "aebsim_version": __version__,
                 "base_scenario": grid.base["name"],
                 "scenario_hash": canonical_hash(grid.base),
                 "sweep_hash": canonical_hash(grid.document) if grid.document is not None else None,
                 "base_seed": grid.base_seed,
                 "repetitions": grid.repetitions }
  return SweepResult(name=grid.name,
                     axes=[ { "name": a.name, "path": a.path, "values": list(a.values) } for a in grid.axes ],
                     cells=cells, provenance=provenance)


########################################################################
# Emitting
########################################################################

def _csv(result):
  lines = [ f"# aebsim_version = {result.provenance['aebsim_version']}",
            f"# scenario_hash = {result.provenance['scenario_hash']}",
            f"# base_seed = {result.provenance['base_seed']}",
            f"# repetitions = {result.provenance['repetitions']}" ]
  m = result.outcomes()
  if m.ndim == 2:
    a0, a1 = result.axes
    lines.append(",".join([ f"{a0['name']}\\{a1['name']}" ] + [ str(v) for v in a1["values"] ]))
    for i, v in enumerate(a0["values"]):
      lines.append(",".join([ str(v) ] + list(m[i, :])))
  else:
    lines.append(",".join([ a["name"] for a in result.axes ] + [ "outcome" ]))
    for coords in sorted(result.cells):
      lines.append(",".join([ str(a["values"][i]) for a, i in zip(result.axes, coords) ]
                            + [ result.cells[coords]["outcome"] ]))
  return "\n".join(lines) + "\n"


def _heatmap_axes(result):
  axes = result.axes
  assert len(axes) in (1, 2), "Heatmaps need a sweep with one or two axes."
  if len(axes) == 1: return axes[0]["values"], [""], axes[0]["name"], ""
  return axes[1]["values"], axes[0]["values"], axes[1]["name"], axes[0]["name"]


def emit(result, fmt, path):
  '''Write result to path as "csv" (outcome matrix), "json" (full
     per-cell summaries), "svg" or "png" (heatmaps). Returns path.'''
  from aebsim.analysis.heatmap import outcome_heatmap_svg, outcome_heatmap_png

  assert fmt in ("csv", "json", "svg", "png"), f"Unknown format '{fmt}'."
  parent = os.path.dirname(os.fspath(path))
  if parent != "": os.makedirs(parent, exist_ok=True)

  if fmt == "json":
    with open(path, 'w', newline='\n') as f: dump_json(result, f)
    return path

  if fmt == "csv":
    with open(path, 'w', newline='\n') as f: f.write(_csv(result))
    return path

  x, y, x_name, y_name = _heatmap_axes(result)
  title = f"{result.name} ({result.provenance['base_scenario']})"
  if fmt == "svg":
    svg = outcome_heatmap_svg(result.outcomes(), x, y, x_name, y_name, title,
                              scenario_hash=result.provenance["scenario_hash"])
    with open(path, 'w', newline='\n') as f: f.write(svg)
    return path

  return outcome_heatmap_png(result.outcomes(), x, y, path, x_name, y_name, title)


def axis_values(result, name):
  ''' Values of the named axis. '''
  return next(a["values"] for a in result.axes if a["name"] == name)


def cell_parameter(grid, coords, path):
  ''' Value at path in the scenario document of one cell. '''
  return get_subdict(cell_document(grid, coords), path)
