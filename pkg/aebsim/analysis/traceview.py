'''
Reading run directories written by aebsim.recording back into pandas.
'''

from aebsim._metadata import __version__ # noqa: F401

import os
import re
import json
import logging

import numpy as np

from aebsim.helpers import json_object_hook

column_name_regex = '[\\w\\d\\s\\-+%=/*&]+'
column_unit_regex = '[\\w\\d\\s\\-+%=/*&^]*'


class TraceView():
  '''
  The trace of one run: header metadata, a pandas DataFrame with one
  row per tick, and the scenario and verdict stored next to it.

  path is a run directory or the trace.csv inside one.
  '''

  def __init__(self, path):
    if os.path.isdir(path): path = os.path.join(path, 'trace.csv')
    self._path = path
    self._run_dir = os.path.dirname(path)

    with open(path, 'r') as f:
      header = TraceView._extract_header(f)
    self._metadata = header["metadata"]
    self._column_names, self._units = TraceView._parse_columns_from_header(header["columns"])

    v = self._metadata.get("ondisk_format_version", "1.0.0")
    if not v.startswith("1."):
      logging.warning(f"{path} uses on-disk format {v}; this version of aebsim reads 1.x.")

    import pandas as pd
    dtypes = dict(zip(self._column_names, self._parse_dtypes(self._metadata.get("Column dtypes"))))
    self._data = pd.read_csv(path, comment='#', header=None, names=self._column_names,
                             dtype={ c: t for c, t in dtypes.items() if t is str },
                             keep_default_na=False, na_values=[""])

    footer = TraceView._parse_footer(path)
    if "number_of_data_rows" in footer and footer["number_of_data_rows"] != len(self._data):
      logging.warning(f"{path}: footer promises {footer['number_of_data_rows']} rows, found {len(self._data)}.")

  def name(self): return os.path.split(self._run_dir)[-1]
  def filename(self): return self._path
  def dimension_names(self): return self._column_names
  def dimension_units(self): return self._units
  def units(self, column): return dict(zip(self._column_names, self._units))[column]
  def npoints(self): return len(self._data)

  @property
  def metadata(self): return dict(self._metadata)

  @property
  def data(self): return self._data

  def __getitem__(self, key):
    ''' Column as a numpy array. '''
    return self._data[key].to_numpy()

  def scenario(self):
    ''' The normalized scenario document of the run. '''
    with open(os.path.join(self._run_dir, 'scenario.json'), 'r') as f: return json.load(f)

  def verdict(self):
    ''' Contents of verdict.json, or None if the run did not write one. '''
    fn = os.path.join(self._run_dir, 'verdict.json')
    if not os.path.isfile(fn): return None
    with open(fn, 'r') as f: return json.load(f, object_hook=json_object_hook)

  def to_xarray(self):
    '''xarray Dataset indexed by time, one variable per numeric
       column, with units as attributes.'''
    import xarray
    df = self._data.set_index("time")
    ds = xarray.Dataset.from_dataframe(df[[ c for c in df.columns if np.issubdtype(df[c].dtype, np.number) ]])
    for c, u in zip(self._column_names, self._units):
      if c in ds and u != "": ds[c].attrs["units"] = u
    ds["time"].attrs["units"] = "s"
    ds.attrs.update(self._metadata)
    return ds

  @staticmethod
  def _extract_header(f):
    ''' "# key = value" lines into a dict and the last header line (column names). '''
    r = { "metadata": {}, "columns": "" }
    for line in f:
      line = line.strip()
      if len(line) == 0: continue
      if not line.startswith('#'): break
      line = line[1:].strip()
      m = re.match(r'^(.+?)\s*=\s*(.*)$', line)
      if m is not None: r["metadata"][m.group(1)] = m.group(2)
      elif line.startswith("Column dtypes:"): r["metadata"]["Column dtypes"] = line.split(":", 1)[1].strip()
      elif len(line) > 0: r["columns"] = line
    return r

  @staticmethod
  def _parse_columns_from_header(s):
    ''' "name (unit),name (unit),..." -> ([names], [units]) '''
    cols, units = [], []
    for c in s.split(','):
      m = re.match(f'({column_name_regex})\\s+\\(({column_unit_regex})\\)', c.strip())
      if m is None: raise ValueError(f"Could not parse column '{c}' of trace header: {s}")
      cols.append(m.group(1).strip())
      units.append(m.group(2).strip())
    return cols, units

  @staticmethod
  def _parse_dtypes(s):
    if s is None: return []
    return [ { "int": int, "float": float, "str": str }.get(t.strip(), str) for t in s.split(',') ]

  @staticmethod
  def _parse_footer(path):
    r = {}
    with open(path, 'r') as f: lines = f.readlines()
    for l in reversed(lines):
      l = l.strip()
      if len(l) == 0: continue
      if not l.startswith('#'): break
      m = re.match(r'^#\s*Number of data rows:\s*(\d+)$', l)
      if m is not None: r["number_of_data_rows"] = int(m.group(1))
    return r
