'''
Command-line interface. Run "aebsim --help" (or "python -m aebsim
--help") for the list of subcommands.

Exit codes: 0 if every run was Safe or StoppedTooSoon, 2 if any run
crashed or violated a safety constraint, 3 if any run hit a model error
and 1 for invalid input documents or unwritable outputs.

Log verbosity is read from the AEBSIM_LOG_LEVEL environment variable
(a level name such as "INFO", or an integer; default WARNING).
'''

from aebsim._metadata import __version__ # noqa: F401

import os
import sys
import json
import logging
import argparse

from aebsim.helpers import ScenarioError, StpaError, ModelError, dump_json

EXIT_OK, EXIT_INVALID, EXIT_UNSAFE, EXIT_MODEL_ERROR = 0, 1, 2, 3

UNSAFE_OUTCOMES = ("Crash", "ConstraintViolated")


def configure_logging(env=os.environ):
  level = env.get("AEBSIM_LOG_LEVEL", "WARNING").strip()
  level = int(level) if level.lstrip('-').isdigit() else level.upper()
  try: logging.basicConfig(level=level, format="%(levelname)s %(message)s")
  except ValueError:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    logging.warning(f"Ignoring unknown AEBSIM_LOG_LEVEL '{level}'.")


def exit_code(outcomes):
  outcomes = list(outcomes)
  if "ModelError" in outcomes: return EXIT_MODEL_ERROR
  if any(o in UNSAFE_OUTCOMES for o in outcomes): return EXIT_UNSAFE
  return EXIT_OK


########################################################################
# Subcommands
########################################################################

def cmd_run(args):
  from aebsim.scenarios import load_scenario
  from aebsim.simulation import run_once, detection_onset
  from aebsim.recording import record_run

  scenario = load_scenario(args.scenario)
  seed = scenario.seed if args.seed is None else args.seed
  with record_run(scenario, seed, data_base_dir=args.out) as rec:
    try:
      trace, verdict = run_once(scenario, seed)
    except ModelError as e:
      logging.error(f"Model error: {e}")
      rec.write_verdict(None, { "outcome": "ModelError", "error": str(e) })
      return EXIT_MODEL_ERROR
    rec.add_trace(trace)
    onsets = { f"{s.key}/{b.id}": detection_onset(trace, s, b.id)
               for s in scenario.enabled_sensors() for b in scenario.bodies }
    rec.write_verdict(verdict, { "terminated_by": trace.terminated_by, "detection_onsets": onsets })

  print(f"{scenario.name}: {verdict.outcome.value} (min separation {verdict.min_separation:.2f} m) -> {rec.path()}")
  return exit_code([ verdict.outcome.value ])


def cmd_sweep(args):
  from aebsim.scenarios import load_sweep
  from aebsim.experiments import run_sweep, emit

  grid = load_sweep(args.grid)
  result = run_sweep(grid, parallelism=args.parallel)
  for fmt in args.format:
    if fmt in ("svg", "png") and len(grid.axes) > 2:
      logging.warning(f"Skipping {fmt}: heatmaps need one or two axes, '{grid.name}' has {len(grid.axes)}.")
      continue
    path = emit(result, fmt, os.path.join(args.out, f"{grid.name}.{fmt}"))
    logging.info(f"Wrote {path}")

  counts = { o: result.count(o) for o in ("Safe", "StoppedTooSoon", "ConstraintViolated", "Crash", "ModelError") }
  print(f"{grid.name}: " + ", ".join(f"{k} {v}" for k, v in counts.items() if v > 0))
  return exit_code(c["outcome"] for c in result.cells.values())


def cmd_stpa_analyze(args):
  from aebsim.stpa import load_model, load_catalog, analyze

  result = analyze(load_model(args.model), load_catalog(args.catalog))
  os.makedirs(args.out, exist_ok=True)
  with open(os.path.join(args.out, "stpa_report.json"), 'w', newline='\n') as f: dump_json(result, f)
  with open(os.path.join(args.out, "stpa_report.txt"), 'w', newline='\n') as f: f.write(result.table_text())
  print(", ".join(f"{k} {v}" for k, v in result.counts().items()))
  return EXIT_OK


def cmd_stpa_concretize(args):
  from aebsim.stpa import find_template, concretize

  c = concretize(find_template(args.template, args.id), args.scenario)
  parent = os.path.dirname(args.out)
  if parent != "": os.makedirs(parent, exist_ok=True)
  with open(args.out, 'w', newline='\n') as f: dump_json(c.document, f)
  print(f"Wrote {'sweep' if c.is_sweep else 'scenario'} '{c.document['name']}' to {args.out}")
  return EXIT_OK


def cmd_scenario_validate(args):
  from aebsim.scenarios import read_document, load_scenario, load_sweep, expand_sweep

  doc = read_document(args.file)
  if "axes" in doc:
    grid = load_sweep(args.file)
    expand_sweep(grid)
    print(f"Sweep '{grid.name}' is valid ({'x'.join(map(str, grid.shape))} cells).")
  else:
    s = load_scenario(args.file)
    print(f"Scenario '{s.name}' is valid (hash {s.hash}).")
  return EXIT_OK


def build_parser():
  parser = argparse.ArgumentParser(prog="aebsim",
    description="Closed-loop AEB simulation under sensor attacks.")
  parser.add_argument("--version", action="version", version=f"aebsim {__version__}")
  sub = parser.add_subparsers(dest="command", required=True)

  p = sub.add_parser("run", help="Run one scenario and write a run directory.")
  p.add_argument("--scenario", required=True, help="Scenario file or bundled name (e.g. cpno).")
  p.add_argument("--seed", type=int, default=None, help="Defaults to the scenario's seed.")
  p.add_argument("--out", default=".", help="Parent directory of the run directory.")
  p.set_defaults(func=cmd_run)

  p = sub.add_parser("sweep", help="Run every cell of a sweep grid.")
  p.add_argument("--grid", required=True, help="Sweep file or bundled name (e.g. jamming_sweep).")
  p.add_argument("--parallel", type=int, default=1, help="Number of worker processes.")
  p.add_argument("--out", default=".", help="Output directory.")
  p.add_argument("--format", nargs="+", choices=["csv", "json", "svg", "png"], default=["csv", "json", "svg"])
  p.set_defaults(func=cmd_sweep)

  stpa = sub.add_parser("stpa", help="Hazard analysis and attack scenario generation.")
  stpa_sub = stpa.add_subparsers(dest="stpa_command", required=True)
  p = stpa_sub.add_parser("analyze", help="UCAs, hazard scenarios and attack templates.")
  p.add_argument("--model", default="aeb_stpa_model")
  p.add_argument("--catalog", default="attack_catalog")
  p.add_argument("--out", default=".")
  p.set_defaults(func=cmd_stpa_analyze)
  p = stpa_sub.add_parser("concretize", help="Bind an attack template to an operational scenario.")
  p.add_argument("--template", required=True, help="Template file, or an analysis report together with --id.")
  p.add_argument("--id", default=None, help="Template id within a report (e.g. AS-1).")
  p.add_argument("--scenario", required=True, help="Scenario or binding document.")
  p.add_argument("--out", required=True, help="Output scenario or sweep file.")
  p.set_defaults(func=cmd_stpa_concretize)

  scen = sub.add_parser("scenario", help="Scenario documents.")
  scen_sub = scen.add_subparsers(dest="scenario_command", required=True)
  p = scen_sub.add_parser("validate", help="Validate a scenario or sweep document.")
  p.add_argument("file")
  p.set_defaults(func=cmd_scenario_validate)

  return parser


def main(argv=None):
  configure_logging()
  args = build_parser().parse_args(argv)
  try:
    return args.func(args)
  except (ScenarioError, StpaError) as e:
    logging.error(f"Invalid input: {e}")
  except (OSError, json.JSONDecodeError) as e:
    logging.error(f"{type(e).__name__}: {e}")
  return EXIT_INVALID


if __name__ == "__main__":
  sys.exit(main())
