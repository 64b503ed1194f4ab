'''
Scenario and sweep documents: strict loading, default filling, the
CPNO generator and sweep expansion.

Documents are JSON. Unknown keys are rejected. Missing optional values
are filled from the module level defaults, and the filled
("normalized") document is what a Scenario keeps and serializes, so
load -> serialize -> load is the identity.
'''

from aebsim._metadata import __version__ # noqa: F401

import os
import copy
import json
import math
import logging
import itertools
import dataclasses
import importlib.resources
from typing import Optional

import jsonschema

from aebsim.helpers import ScenarioError, merge_defaults, get_subdict, set_subdict, \
  format_path, canonical_hash
from aebsim.world import Body, BodyKind, Pose2, Trajectory, Waypoint, WorldState, VISIBILITY_SAMPLES
from aebsim.sensors import Sensor, RadarConfig, CameraConfig, LidarConfig, \
  DEFAULT_RADAR_CONFIG, DEFAULT_CAMERA_CONFIG, DEFAULT_LIDAR_CONFIG
from aebsim.fusion import TrackerConfig, DEFAULT_TRACKER_CONFIG
from aebsim.aeb import AebConfig, DEFAULT_AEB_CONFIG
from aebsim.attacks import AttackSpec
from aebsim.monitors import SafetyConstraint

FORMAT_VERSION = "1.0.0"

DEFAULT_EGO = {
  "id": "ego",
  "pose": { "x": 0., "y": 0., "heading": 0. },
  "extent": [4.6, 1.8],
  "radar_cross_section": 10.,
  "lane_halfwidth": 1.8,
  "sensors": { "radar": DEFAULT_RADAR_CONFIG,
               "camera": DEFAULT_CAMERA_CONFIG,
               "lidar": DEFAULT_LIDAR_CONFIG },
  "tracker": DEFAULT_TRACKER_CONFIG,
  "aeb": DEFAULT_AEB_CONFIG,
}

DEFAULT_SCENARIO = {
  "description": "",
  "dt": 0.05,
  "seed": 0,
  "ego": DEFAULT_EGO,
  "sensor_enable": { "radar": True, "camera": True, "lidar": True },
  "bodies": [],
  "attacks": [],
  "termination": { "crash": True, "ego_stopped": True, "timeout": True },
  "conflict_point": None,
  "comfort_margin": 7.,
  "early_brake_tolerance": 0.5,
  "visibility_samples": VISIBILITY_SAMPLES,
}

DEFAULT_BODY = {
  "velocity": [0., 0.],
  "extent": [4.5, 1.8],
  "radar_cross_section": 1.,
  "trajectory": None,
}

DEFAULT_ATTACK = {
  "frame": "world",
  "antenna_gain": 3.,
  "active_window": [0., None],
}

DEFAULT_SC1_DESCRIPTION = ("When the nearest object in front is within a defined distance, "
                           "brake must be applied within a defined period of time.")

DEFAULT_SWEEP = {
  "name": "sweep",
  "description": "",
  "overrides": {},
  "base_seed": 0,
  "repetitions": 1,
}


########################################################################
# Document access
########################################################################

def _schema(name):
  return json.loads(importlib.resources.files("aebsim.static").joinpath(f"{name}.schema.json").read_text())

def bundled_names():
  ''' Names of the documents in aebsim/library/. '''
  return sorted(os.path.splitext(p.name)[0] for p in importlib.resources.files("aebsim.library").iterdir()
                if p.name.endswith(".json"))

def read_document(ref):
  '''ref is a dict (returned as a deep copy), a path to a JSON file,
     or the bare name of a bundled document.'''
  if isinstance(ref, dict): return copy.deepcopy(ref)
  ref = os.fspath(ref)
  if os.path.isfile(ref):
    with open(ref, 'r', encoding='utf-8') as f: return json.load(f)
  if ref in bundled_names():
    return json.loads(importlib.resources.files("aebsim.library").joinpath(f"{ref}.json").read_text(encoding='utf-8'))
  raise ScenarioError(f"/: '{ref}' is neither a file nor a bundled document ({', '.join(bundled_names())}).")

def validate_document(doc, schema_name):
  ''' Raise ScenarioError naming the JSON path of every schema violation. '''
  validator = jsonschema.Draft7Validator(_schema(schema_name))
  errors = sorted(validator.iter_errors(doc), key=lambda e: [ str(p) for p in e.absolute_path ])
  if len(errors) > 0:
    raise ScenarioError("\n".join(f"{format_path(list(e.absolute_path)) or '/'}: {e.message}" for e in errors))


########################################################################
# Scenario
########################################################################

@dataclasses.dataclass(frozen=True)
class Scenario:
  document: dict
  name: str
  dt: float
  duration_limit: float
  seed: int
  ego: Body
  bodies: tuple
  radar: RadarConfig
  camera: CameraConfig
  lidar: LidarConfig
  sensor_enable: dict
  tracker: TrackerConfig
  aeb: AebConfig
  lane_halfwidth: float
  attacks: tuple
  monitors: tuple
  termination: dict
  conflict_point: Optional[tuple]
  comfort_margin: float
  early_brake_tolerance: float
  visibility_samples: int
  coordinates: Optional[tuple] = None # grid coordinates when expanded from a sweep

  def to_document(self): return copy.deepcopy(self.document)

  @property
  def hash(self): return canonical_hash(self.document)

  def sensor_config(self, sensor):
    return { Sensor.Radar: self.radar, Sensor.Camera: self.camera, Sensor.Lidar: self.lidar }[sensor]

  def enabled_sensors(self):
    return [ s for s in (Sensor.Radar, Sensor.Camera, Sensor.Lidar) if self.sensor_enable[s] ]

  def initial_world(self):
    return WorldState(time=0., bodies=(self.ego,) + self.bodies, ego_id=self.ego.id,
                      visibility_samples=self.visibility_samples)


def default_sc1(ego_speed, aeb_doc):
  '''SC1 with the trigger at the range where Partial1 would engage,
     plus 2 m.'''
  trigger = aeb_doc["headway_offset"] + aeb_doc["ttc_scale"]["p1"]*ego_speed**2/aeb_doc["partial1_decel"] + 2.
  return { "id": "SC1", "description": DEFAULT_SC1_DESCRIPTION,
           "trigger_distance": trigger, "max_latency": 0.2 }


def normalize_scenario(doc):
  ''' Schema-validated document with every default filled. '''
  validate_document(doc, "scenario")
  d = merge_defaults(DEFAULT_SCENARIO, doc)
  d["bodies"] = [ merge_defaults(DEFAULT_BODY, b) for b in d["bodies"] ]
  d["attacks"] = [ merge_defaults(DEFAULT_ATTACK, a) for a in d["attacks"] ]
  d["ego"]["pose"] = merge_defaults({ "heading": 0. }, d["ego"]["pose"])
  for b in d["bodies"]: b["pose"] = merge_defaults({ "heading": 0. }, b["pose"])

  sc1 = default_sc1(d["ego"]["speed"], d["ego"]["aeb"])
  if "monitors" not in d: d["monitors"] = [ sc1 ]
  d["monitors"] = [ merge_defaults(sc1 if m["id"] == "SC1" else { "description": "", "max_latency": 0.2 }, m)
                    for m in d["monitors"] ]
  return d


def _body_from_doc(b, path):
  traj = None
  if b["trajectory"] is not None:
    wps = [ Waypoint(w["t"], w["x"], w["y"], w.get("heading")) for w in b["trajectory"] ]
    if any(a.t >= c.t for a, c in zip(wps[:-1], wps[1:])):
      raise ScenarioError(f"{path}/trajectory: waypoint times must increase strictly.")
    traj = Trajectory(tuple(wps))
  pose = Pose2(**b["pose"])
  velocity = tuple(b["velocity"])
  if traj is not None: pose, velocity = traj.state_at(0.)
  return Body(id=b["id"], kind=BodyKind(b["kind"]), pose=pose, velocity=velocity,
              extent=tuple(b["extent"]), radar_cross_section=b["radar_cross_section"], trajectory=traj)


def load_scenario(ref, coordinates=None):
  '''Load and fully validate a scenario from a dict, a file path or a
     bundled name (e.g. "cpno"). Raises ScenarioError with the JSON path
     of the offending value.'''
  doc = normalize_scenario(read_document(ref))

  ego_doc = doc["ego"]
  ids = [ ego_doc["id"] ] + [ b["id"] for b in doc["bodies"] ]
  for i, b in enumerate(doc["bodies"]):
    # ids[:i+1] is the ego plus the bodies before this one
    if b["id"] in ids[:i+1]: raise ScenarioError(f"bodies/{i}/id: duplicate body id '{b['id']}'.")

  sensor_enable = { s: doc["sensor_enable"][s.key] for s in Sensor }
  attacks = []
  for i, a in enumerate(doc["attacks"]):
    try: spec = AttackSpec.from_dict(a)
    except AssertionError as e: raise ScenarioError(f"attacks/{i}: {e}")
    if not sensor_enable[spec.sensor]:
      raise ScenarioError(f"attacks/{i}/kind: {spec.kind.value} targets the {spec.sensor.key}, which is disabled in sensor_enable.")
    if spec.patch_target is not None and spec.patch_target not in ids:
      raise ScenarioError(f"attacks/{i}/patch_target: unknown body '{spec.patch_target}'.")
    attacks.append(spec)
  if len(set(a.id for a in attacks)) != len(attacks): raise ScenarioError("attacks: attack ids must be unique.")

  try:
    sensors = ego_doc["sensors"]
    radar = RadarConfig.from_dict(sensors["radar"])
    camera = CameraConfig.from_dict(sensors["camera"])
    lidar = LidarConfig.from_dict(sensors["lidar"])
  except AssertionError as e: raise ScenarioError(f"ego/sensors: {e}")
  try: tracker = TrackerConfig(**ego_doc["tracker"])
  except AssertionError as e: raise ScenarioError(f"ego/tracker: {e}")
  try: aeb = AebConfig.from_dict(ego_doc["aeb"])
  except AssertionError as e: raise ScenarioError(f"ego/aeb: {e}")

  monitors = []
  for i, m in enumerate(doc["monitors"]):
    try: monitors.append(SafetyConstraint(**m))
    except AssertionError as e: raise ScenarioError(f"monitors/{i}: {e}")

  pose = Pose2(**ego_doc["pose"])
  v = ego_doc["speed"]
  ego = Body(id=ego_doc["id"], kind=BodyKind.EgoVehicle, pose=pose,
             velocity=(v*math.cos(pose.heading), v*math.sin(pose.heading)),
             extent=tuple(ego_doc["extent"]), radar_cross_section=ego_doc["radar_cross_section"])
  bodies = tuple(_body_from_doc(b, f"bodies/{i}") for i, b in enumerate(doc["bodies"]))

  cp = doc["conflict_point"]
  return Scenario(document=doc, name=doc["name"], dt=doc["dt"], duration_limit=doc["duration_limit"],
                  seed=doc["seed"], ego=ego, bodies=bodies, radar=radar, camera=camera, lidar=lidar,
                  sensor_enable=sensor_enable, tracker=tracker, aeb=aeb,
                  lane_halfwidth=ego_doc["lane_halfwidth"], attacks=tuple(attacks),
                  monitors=tuple(monitors), termination=doc["termination"],
                  conflict_point=None if cp is None else (cp["x"], cp["y"]),
                  comfort_margin=doc["comfort_margin"],
                  early_brake_tolerance=doc["early_brake_tolerance"],
                  visibility_samples=doc["visibility_samples"],
                  coordinates=None if coordinates is None else tuple(coordinates))


########################################################################
# CPNO
########################################################################

DEFAULT_CPNO_PARAMS = {
  "name": "CPNO",
  "ego_speed": 25/3.6,
  "ped_speed": 5/3.6,
  "conflict_distance": 40.,
  "ped_start_offset": -4.5, # lateral start of the pedestrian, nearside
  "occluders": [ { "x": 31.9, "y": -2.9, "length": 4.6, "width": 1.8 },
                 { "x": 37.3, "y": -2.9, "length": 4.6, "width": 1.8 } ],
  "sensor_enable": { "radar": True, "camera": True, "lidar": True },
  "aeb_enabled": True,
  "attacks": [],
  "duration_limit": 10.,
  "seed": 0,
}


def cpno_document(params=None):
  '''Car-to-pedestrian nearside obstructed: the ego drives along +x
     towards a pedestrian who starts behind two parked vehicles and
     crosses the ego lane at conflict_distance, timed so that the
     pedestrian's center reaches the ego lane center together with the
     ego's center when the ego does not brake.'''
  p = merge_defaults(DEFAULT_CPNO_PARAMS, params or {})
  if not p["ego_speed"] > 0: raise ScenarioError(f"ego_speed: must be positive, got {p['ego_speed']}.")
  if not p["ped_speed"] > 0: raise ScenarioError(f"ped_speed: must be positive, got {p['ped_speed']}.")

  x_c, y0, vp = p["conflict_distance"], p["ped_start_offset"], p["ped_speed"]
  t_start = x_c / p["ego_speed"] - abs(y0) / vp
  if t_start < 0:
    raise ScenarioError(f"ped_speed: the pedestrian would have to start walking {-t_start:.2f} s before the run starts.")

  heading = math.copysign(math.pi/2, -y0)
  walk = [ { "t": t_start, "x": x_c, "y": y0, "heading": heading },
           { "t": t_start + 2*abs(y0)/vp, "x": x_c, "y": -y0, "heading": heading } ]
  if t_start > 0: walk.insert(0, { "t": 0., "x": x_c, "y": y0, "heading": heading })

  bodies = [ { "id": f"parked{i+1}", "kind": "Obstruction",
               "pose": { "x": o["x"], "y": o["y"], "heading": 0. },
               "extent": [o["length"], o["width"]], "radar_cross_section": 10. }
             for i, o in enumerate(p["occluders"]) ]
  bodies.append({ "id": "pedestrian", "kind": "Pedestrian",
                  "pose": { "x": x_c, "y": y0, "heading": heading },
                  "extent": [0.5, 0.5], "radar_cross_section": 1., "trajectory": walk })

  return { "format_version": FORMAT_VERSION,
           "name": p["name"],
           "description": "Car-to-pedestrian nearside obstructed crossing.",
           "duration_limit": p["duration_limit"],
           "seed": p["seed"],
           "ego": { "speed": p["ego_speed"], "aeb": { "enabled": p["aeb_enabled"] } },
           "sensor_enable": p["sensor_enable"],
           "bodies": bodies,
           "attacks": p["attacks"],
           "conflict_point": { "x": x_c, "y": 0. } }


def instantiate_cpno(params=None):
  ''' load_scenario(cpno_document(params)). '''
  return load_scenario(cpno_document(params))


########################################################################
# Sweeps
########################################################################

@dataclasses.dataclass(frozen=True)
class SweepAxis:
  name: str
  path: str
  values: tuple


@dataclasses.dataclass(frozen=True)
class SweepGrid:
  name: str
  base: dict # normalized base scenario document, overrides applied
  axes: tuple
  base_seed: int = 0
  repetitions: int = 1
  document: Optional[dict] = None

  @property
  def shape(self): return tuple(len(a.values) for a in self.axes)

  def coordinates(self): return list(itertools.product(*[ range(n) for n in self.shape ]))

  def to_document(self): return copy.deepcopy(self.document)


def load_sweep(ref):
  ''' Load a sweep document (dict, path or bundled name) into a SweepGrid. '''
  raw = read_document(ref)
  validate_document(raw, "sweep")
  doc = merge_defaults(DEFAULT_SWEEP, raw)

  base_ref = doc["base"]
  if isinstance(base_ref, str) and not isinstance(ref, dict) and os.path.isfile(os.fspath(ref)):
    sibling = os.path.join(os.path.dirname(os.fspath(ref)), base_ref)
    if os.path.isfile(sibling): base_ref = sibling
  base = normalize_scenario(read_document(base_ref))
  for path, value in doc["overrides"].items():
    try: set_subdict(base, path, copy.deepcopy(value))
    except (KeyError, TypeError) as e: raise ScenarioError(f"overrides/{path}: {e}")
  base = load_scenario(base).document

  axes = []
  for i, a in enumerate(doc["axes"]):
    try: get_subdict(base, a["path"])
    except (KeyError, TypeError) as e: raise ScenarioError(f"axes/{i}/path: does not resolve in the base scenario ({e}).")
    axes.append(SweepAxis(name=a.get("name", a["path"]), path=a["path"], values=tuple(a["values"])))

  if len(set(a.path for a in axes)) != len(axes): raise ScenarioError("axes: paths must be unique.")
  return SweepGrid(name=doc["name"], base=base, axes=tuple(axes), base_seed=doc["base_seed"],
                   repetitions=doc["repetitions"], document=doc)


def cell_document(grid, coords):
  ''' Base document with the axis values at coords substituted. '''
  d = copy.deepcopy(grid.base)
  for axis, i in zip(grid.axes, coords): set_subdict(d, axis.path, copy.deepcopy(axis.values[i]))
  return d


def expand_sweep(grid):
  ''' One Scenario per grid cell, in row-major axis order, each carrying its coordinates. '''
  scenarios = []
  for coords in grid.coordinates():
    try: scenarios.append(load_scenario(cell_document(grid, coords), coordinates=coords))
    except ScenarioError as e:
      raise ScenarioError(f"cell {list(coords)}: {e}")
  logging.debug(f"Expanded sweep '{grid.name}' into {len(scenarios)} scenarios.")
  return scenarios
