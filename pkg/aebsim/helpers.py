'''
Short miscellaneous helpers: JSON encoding, nested document paths,
hashing and the exceptions shared by all modules.
'''

from aebsim._metadata import __version__ # noqa: F401

import copy
import enum
import json
import dataclasses
import hashlib
import numbers
import collections
import warnings
from typing import Any

import numpy as np
import jsondiff

with warnings.catch_warnings():
  # uncertainties still triggers deprecation warnings on import
  warnings.simplefilter("ignore", category=DeprecationWarning)
  import uncertainties


class ScenarioError(Exception):
  ''' Invalid scenario, sweep or STPA document. The message starts with the JSON path of the offending value. '''

class BindingError(ScenarioError):
  ''' An attack template could not be bound to an operational scenario. '''

class StpaError(Exception):
  ''' Invalid control structure or analysis input. '''

class ModelError(Exception):
  ''' The simulated state became non-finite. '''
  def __init__(self, message, tick=None):
    super().__init__(message if tick is None else f"tick {tick}: {message}")
    self.tick = tick


def get_keys(d, reject_str=True, reject_ndarray=True):
  """Return keys of d, if d is dict-like, or indices if d is
     list-like. Raise TypeError for str/ndarray if reject_str/ndarray
     is True.
  """
  if not isinstance(d, (collections.abc.Mapping, collections.abc.Sequence)): raise TypeError()
  if reject_str and isinstance(d, str): raise TypeError()
  if reject_ndarray and isinstance(d, np.ndarray): raise TypeError()
  try: return list(d.keys()) # Assume that d is dict-like
  except AttributeError: return list(range(0,len(d))) # Assume that d is a list, tuple, or similar

def parse_path(path):
  """Split a slash-separated document path ("attacks/0/tx_power") into
     keys, converting list indices to ints."""
  if isinstance(path, (list, tuple)): return list(path)
  return [ int(k) if k.lstrip('-').isdigit() else k for k in path.strip('/').split('/') if k != '' ]

def get_subdict(d, keys):
  """Given a nested dict-like structure, return the subdict or leaf
     value corresponding to a list of keys (or a slash-separated path)."""
  for k in parse_path(keys):
    if k not in get_keys(d): raise KeyError(f"'{k}' not found while resolving {format_path(keys)}")
    d = d[k]
  return d

def set_subdict(d, keys, value):
  """Set the leaf value at a list of keys (or a slash-separated
     path). All but the last key must already exist."""
  keys = parse_path(keys)
  assert len(keys) > 0, "Empty path."
  parent = get_subdict(d, keys[:-1])
  if isinstance(parent, collections.abc.Sequence) and not (0 <= keys[-1] < len(parent)):
    raise KeyError(f"Index {keys[-1]} out of range while resolving {format_path(keys)}")
  parent[keys[-1]] = value

def format_path(keys):
  ''' Inverse of parse_path(). '''
  if isinstance(keys, str): return keys
  return "/".join(str(k) for k in keys)

def merge_defaults(defaults, d):
  """Return a deep copy of defaults updated recursively with the
     values in d. Keys only present in d are kept as is (schema
     validation is responsible for rejecting unknown keys)."""
  merged = copy.deepcopy(defaults)
  for k, v in d.items():
    if isinstance(v, collections.abc.Mapping) and isinstance(merged.get(k), collections.abc.Mapping):
      merged[k] = merge_defaults(merged[k], v)
    else:
      merged[k] = copy.deepcopy(v)
  return merged

def canonical_json(obj):
  ''' Key-sorted compact JSON, used for hashing and byte-stable output. '''
  return json.dumps(obj, sort_keys=True, separators=(',', ':'), cls=NumpyJSONEncoder)

def canonical_hash(obj):
  ''' sha256 hex digest of canonical_json(obj). '''
  return hashlib.sha256(canonical_json(obj).encode('utf-8')).hexdigest()

def derive_seed(*parts):
  """Derive a 63-bit seed from arbitrary JSON-serializable parts, e.g.
     (base_seed, grid coordinates, repetition)."""
  digest = hashlib.sha256(canonical_json(list(parts)).encode('utf-8')).digest()
  return int.from_bytes(digest[:8], 'big') >> 1

def config_defaults(cfg):
  ''' Fields of a config dataclass instance as plain JSON types (lists, dicts). '''
  return json.loads(json.dumps(dataclasses.asdict(cfg), cls=NumpyJSONEncoder))

def dump_json(obj, fhandle):
  json.dump(obj, fhandle, sort_keys=False,
            indent=2, ensure_ascii=True, cls=NumpyJSONEncoder)
  fhandle.write("\n")

from jsondiff import JsonDiffer
class ScenarioDiffer(JsonDiffer):
  """JSON diff creator that treats lists of only scalars (extents,
     sectors, axis values) as complete blocks instead of diffing them
     element by element."""

  def _obj_diff(self, a, b, *args, **kwargs):

    if a is b: return self.options.syntax.emit_value_diff(a, b, 1.0), 1.0

    def is_vector(x): return isinstance(x, (list,tuple)) and all(np.isscalar(xi) for xi in x)

    if is_vector(a) or is_vector(b):
      if a == b: return self.options.syntax.emit_value_diff(a, b, 1.0), 1.0
      return self.options.syntax.emit_value_diff(a, b, 0.0), 0.0

    return super()._obj_diff(a, b, *args, **kwargs)

def document_delta(base, doc):
  '''Marshalled jsondiff of doc against base, with list indices turned
     into string keys so that the delta survives a JSON round trip.'''
  return json.loads(json.dumps(jsondiff.diff(base, doc, cls=ScenarioDiffer, marshal=True), cls=NumpyJSONEncoder))

def json_object_hook(d):
  ''' Inverse of the special cases in NumpyJSONEncoder.default. '''
  dtype = d.get('__dtype__')
  if dtype == 'UFloat': return uncertainties.ufloat(d['nominal_value'], d['std_dev'])
  if dtype == 'complex': return complex(d['re'], d['im'])
  return d


class NumpyJSONEncoder(json.JSONEncoder):
    """This JSON encoder adds support for serializing types that the built-in
    ``json`` module does not support out-of-the-box. Adapted from the
    QCoDeS encoder (MIT license).

    Conversions:
    * ``numpy.generic`` scalars via their ``item`` method.
    * ``numpy.ndarray`` via ``tolist``.
    * Complex numbers as ``{"__dtype__": "complex", "re": .., "im": ..}``.
    * ``uncertainties.UFloat`` as ``{"__dtype__": "UFloat", "nominal_value": .., "std_dev": ..}``.
    * ``enum.Enum`` members by value.
    * Objects with a ``_JSONEncoder`` method by its return value.
    * Sets as sorted lists.
    * Anything else by ``str``.
    """

    def default(self, obj: Any) -> Any:
        if isinstance(obj, np.generic) \
                and not isinstance(obj, np.complexfloating):
            return obj.item()
        elif isinstance(obj, np.ndarray):
            return obj.tolist()
        elif (isinstance(obj, numbers.Complex) and
              not isinstance(obj, numbers.Real)):
            return {
                '__dtype__': 'complex',
                're': float(obj.real),
                'im': float(obj.imag)
            }
        elif isinstance(obj, uncertainties.UFloat):
            return {
                '__dtype__': 'UFloat',
                'nominal_value': float(obj.nominal_value),
                'std_dev': float(obj.std_dev)
            }
        elif isinstance(obj, enum.Enum):
            return obj.value
        elif hasattr(obj, '_JSONEncoder'):
            # Use object's custom JSON encoder
            return getattr(obj, "_JSONEncoder")()
        elif isinstance(obj, (set, frozenset)):
            return sorted(obj)
        else:
            try:
                return super().default(obj)
            except TypeError:
                return str(obj)
