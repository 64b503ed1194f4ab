"""
Writing single runs to disk.
"""

from aebsim._metadata import __version__ # noqa: F401

import os
import sys
import logging
import contextlib

import numpy as np

from aebsim.helpers import dump_json
from aebsim.sensors import Sensor

# Version number of the run directory format, following Semantic Versioning (https://semver.org/).
# This version number should increase much more slowly than the aebsim package/release versions.
ondisk_format_version = (1, 0, 0)

def _float(x): return "" if x is None else f"{x:.15e}"
def _str(x): return "" if x is None else str(x)

# (column name, unit, formatter, dtype hint), in file order
TRACE_COLUMNS = [
  ("tick", "", str, int),
  ("time", "s", _float, float),
  ("ego_x", "m", _float, float),
  ("ego_speed", "m/s", _float, float),
  ("ego_decel", "m/s^2", _float, float),
  ("radar_detections", "", str, int),
  ("camera_detections", "", str, int),
  ("lidar_detections", "", str, int),
  ("confirmed_tracks", "", str, int),
  ("mio_id", "", _str, str),
  ("mio_range", "m", _float, float),
  ("mio_range_rate", "m/s", _float, float),
  ("sensed_stage", "", str, str),
  ("oracle_stage", "", str, str),
  ("true_mio_range", "m", _float, float),
  ("min_separation", "m", _float, float),
  ("overlap", "", _str, str),
  ("extra_noise", "dBm", _float, float),
  ("active_attacks", "", lambda x: "|".join(x), str),
]


def trace_row(r):
  ''' Column values of one TickRecord. '''
  ego = r.world.ego
  mio = r.mio or {}
  return {
    "tick": r.tick,
    "time": r.time,
    "ego_x": ego.pose.x,
    "ego_speed": ego.speed,
    "ego_decel": r.sensed.decel,
    "radar_detections": len(r.detections.get(Sensor.Radar, [])),
    "camera_detections": len(r.detections.get(Sensor.Camera, [])),
    "lidar_detections": len(r.detections.get(Sensor.Lidar, [])),
    "confirmed_tracks": len(r.tracks),
    "mio_id": mio.get("id"),
    "mio_range": mio.get("range"),
    "mio_range_rate": mio.get("range_rate"),
    "sensed_stage": r.sensed.stage.label,
    "oracle_stage": r.oracle.stage.label,
    "true_mio_range": r.true_mio_range,
    "min_separation": r.min_separation,
    "overlap": r.overlap,
    "extra_noise": r.attacks.extra_noise,
    "active_attacks": r.attacks.active,
  }


@contextlib.contextmanager
def record_run(scenario, seed, data_base_dir='.', dir_name_generator=lambda n: n, log_level="inherit"):
  '''
  A simple context manager that runs begin() and end() of a
  RunRecorder automatically.

  The directory name for storing the run is:
    <data_base_dir>/<dir_name_generator(scenario.name)>

  Typical use::

    with record_run(scenario, seed, data_base_dir=out) as rec:
      trace, verdict = run_once(scenario, seed)
      rec.add_trace(trace)
      rec.write_verdict(verdict)
  '''
  rec = RunRecorder(scenario, seed,
                    target_dir=os.path.join(data_base_dir, dir_name_generator(scenario.name)),
                    log_level=log_level)
  rec.begin()
  try:     yield rec
  finally: rec.end()


class RunRecorder():
  '''
  Writes one simulation run to a directory.

  The run directory contains the following:

    * :file:`scenario.json` -- The normalized scenario document (all defaults filled in).
    * :file:`trace.csv` -- One row per simulation tick. The columns are listed in a
      commented header, together with the on-disk format version, the
      aebsim version, the scenario hash and the seed.
    * :file:`verdict.json` -- Outcome of the run and the values it was derived from.
    * :file:`log.txt` -- copy of messages from the logging module.
    * :file:`README` -- this description.

  Nothing in the directory depends on the wall clock, so the same
  scenario and seed always produce byte-identical files (apart from
  log.txt, whose format is inherited from the root logger).
  '''

  def __init__(self, scenario, seed, target_dir, log_level="inherit"):
    self._scenario = scenario
    self._seed = seed
    self._target_dir = target_dir
    self._log_level = log_level
    self._nrows = 0

  def path(self): return self._target_dir

  def begin(self):
    '''Creates the run directory, writes the scenario and the trace
       header. Must be called before add_trace().'''
    assert not hasattr(self, "_trace_file"), "begin() must be called only once."

    parent_dir, target = os.path.split(self._target_dir)
    target = RunRecorder._path_friendly_str(target)

    # Append a number to target dir name if the dir already exists
    i = 2
    self._target_dir = os.path.join(parent_dir, target)
    while os.path.exists(self._target_dir):
      self._target_dir = os.path.join(parent_dir, '%s_%d' % (target, i))
      i += 1

    os.makedirs(self._target_dir)
    self._write_readme()
    self._open_log_file()

    with open(os.path.join(self._target_dir, 'scenario.json'), 'w', newline='\n') as f:
      dump_json(self._scenario.to_document(), f)

    self._trace_file = open(os.path.join(self._target_dir, 'trace.csv'), 'w', newline='\n')
    self._write_trace_header()

  def _write_trace_header(self):
    header =  "#\n"
    header += f"# ondisk_format_version = {'.'.join(map(str, ondisk_format_version))}\n"
    header += f"# aebsim_version = {__version__}\n"
    header += f"# numpy_version = {np.__version__}\n"
    header += f"# python_version = {sys.version.split()[0]}\n"
    header += f"# scenario = {self._scenario.name}\n"
    header += f"# scenario_hash = {self._scenario.hash}\n"
    header += f"# seed = {self._seed}\n"
    header += "# Column dtypes: " + ",".join(dt.__name__ for _, _, _, dt in TRACE_COLUMNS) + "\n"
    header += "#\n"
    header += "# " + ",".join(f"{c} ({u})" for c, u, _, _ in TRACE_COLUMNS) + "\n"
    header += "#\n"
    try:     self._trace_file.write(header)
    finally: self._trace_file.flush()

  def add_trace(self, trace):
    ''' Append the rows of every record in trace. '''
    rows = "".join(
      ",".join(RunRecorder._replace_disallowed_chars(f(row[c])) for c, _, f, _ in TRACE_COLUMNS) + "\n"
      for row in map(trace_row, trace.records))
    try:     self._trace_file.write(rows)
    finally: self._trace_file.flush()
    self._nrows += len(trace.records)

  def write_verdict(self, verdict, extra=None):
    d = { "aebsim_version": __version__,
          "scenario": self._scenario.name,
          "scenario_hash": self._scenario.hash,
          "seed": self._seed,
          "verdict": verdict }
    d.update(extra or {})
    with open(os.path.join(self._target_dir, 'verdict.json'), 'w', newline='\n') as f:
      dump_json(d, f)

  def end(self):
    '''Writes the trace footer and closes the files. The record_run()
       context manager calls this automatically.'''
    footer =  "#\n"
    footer += f"# Number of data rows: {self._nrows}\n"
    try:     self._trace_file.write(footer)
    finally: self._trace_file.close()
    self._close_log_file()

  def _open_log_file(self):
    ''' Open a secondary log file in the run directory. '''
    fn = os.path.join(self._target_dir, 'log.txt')
    if len(logging.getLogger().handlers) > 0:
      formatter = logging.getLogger().handlers[0].formatter
    else:
      formatter = None

    self._log_file_handler = logging.FileHandler(fn)
    self._log_file_handler.setLevel(logging.getLogger().level if self._log_level=="inherit" else self._log_level)
    self._log_file_handler.setFormatter(formatter)

    logging.getLogger().addHandler(self._log_file_handler)
    logging.debug(f'Added log_file_handler. path="{fn}"')

  def _close_log_file(self):
    logging.getLogger().removeHandler(self._log_file_handler)
    self._log_file_handler.close()
    self._log_file_handler = None

  def _write_readme(self):
    with open(os.path.join(self._target_dir, 'README'), 'w') as f:
      f.write('This run directory was created by the aebsim.recording module.\n\n'
              'The docstring of the RunRecorder class describes its contents:\n\n')
      f.write(RunRecorder.__doc__)

  @staticmethod
  def _path_friendly_str(s):
    def acceptable_char(x): return x.isalnum() or x in ['#', '-', '=', '.']
    return "".join(x if acceptable_char(x) else '_' for x in s)

  @staticmethod
  def _replace_disallowed_chars(s): return s.replace(",", ";").replace("\n", " ").replace("#", " ")
