'''
The closed loop of one run: attacks -> interference, sensing,
concatenation, tracking, MIO selection, AEB decision, plant step and
monitors, repeated until the scenario terminates.
'''

from aebsim._metadata import __version__ # noqa: F401

import logging
import itertools
import dataclasses

import numpy as np

from aebsim.helpers import ModelError
from aebsim.world import step_world
from aebsim.sensors import Sensor, radar_sense, camera_sense, lidar_sense
from aebsim.attacks import compile_interference, attack_record
from aebsim.fusion import concatenate_detections, update_tracks, select_mio, TrackStatus
from aebsim.aeb import BrakeCommand, aeb_decide
from aebsim.monitors import RunTrace, TickRecord, ego_geometry, oracle_decide, true_mio_range, \
  classify_outcome


def sensor_generators(seed):
  ''' Independent generators for radar, camera and LiDAR, derived from one seed. '''
  children = np.random.SeedSequence(seed).spawn(3)
  return dict(zip([ Sensor.Radar, Sensor.Camera, Sensor.Lidar ], [ np.random.default_rng(c) for c in children ]))


def sense(world, scenario, interference, rngs):
  ''' Detections of every enabled sensor for the current frame. '''
  detections = {}
  if scenario.sensor_enable[Sensor.Radar]:
    detections[Sensor.Radar] = radar_sense(world, scenario.radar, interference, rngs[Sensor.Radar])
  if scenario.sensor_enable[Sensor.Camera]:
    detections[Sensor.Camera] = camera_sense(world, scenario.camera, interference, rngs[Sensor.Camera])
  if scenario.sensor_enable[Sensor.Lidar]:
    detections[Sensor.Lidar] = lidar_sense(world, scenario.lidar, interference)
  return detections


def termination_reason(scenario, world, overlap):
  if overlap is not None and scenario.termination["crash"]: return "crash"
  if world.ego.speed == 0 and scenario.termination["ego_stopped"]: return "ego_stopped"
  if world.time >= scenario.duration_limit - 1e-9: return "timeout"
  return None


def run_once(scenario, seed=None):
  '''Execute one run. Returns (RunTrace, Verdict).

     seed defaults to the scenario's own seed. Raises ModelError, with
     the tick index, if the world state becomes non-finite.
  '''
  seed = scenario.seed if seed is None else seed
  rngs = sensor_generators(seed)
  cfgs = { s: scenario.sensor_config(s) for s in scenario.enabled_sensors() }
  lane = scenario.lane_halfwidth

  trace = RunTrace(scenario_name=scenario.name, monitors=scenario.monitors,
                   conflict_point=scenario.conflict_point, comfort_margin=scenario.comfort_margin,
                   early_brake_tolerance=scenario.early_brake_tolerance)
  world = scenario.initial_world()
  tracks, track_ids = [], itertools.count(1)
  sensed, oracle = BrakeCommand(), BrakeCommand()

  logging.info(f"Running '{scenario.name}' (seed {seed}, sensors {[ s.value for s in scenario.enabled_sensors() ]}).")
  for tick in itertools.count():
    interference = compile_interference(scenario.attacks, world, cfgs, lane)
    detections = sense(world, scenario, interference, rngs)
    tracks = update_tracks(tracks, concatenate_detections(detections, world.ego.pose),
                           scenario.tracker, world.time, track_ids)
    mio = select_mio(tracks, lane)

    sensed = aeb_decide(mio, world.ego.speed, scenario.aeb, sensed) if scenario.aeb.enabled else BrakeCommand()
    oracle = oracle_decide(world, scenario.aeb, oracle, lane)
    overlap, min_sep = ego_geometry(world)

    trace.append(TickRecord(tick=tick, world=world, detections=detections,
                            tracks=tuple(t.summary() for t in tracks if t.status == TrackStatus.Confirmed),
                            mio=None if mio is None else mio.summary(),
                            sensed=sensed, oracle=oracle,
                            attacks=attack_record(scenario.attacks, world, interference),
                            true_mio_range=true_mio_range(world, lane),
                            min_separation=min_sep, overlap=overlap))

    reason = termination_reason(scenario, world, overlap)
    if reason is not None:
      trace.terminated_by = reason
      break

    try: world = step_world(dataclasses.replace(world, ego_command=sensed), scenario.dt)
    except ModelError as e: raise ModelError(str(e), tick=tick)

  verdict = classify_outcome(trace)
  logging.info(f"'{scenario.name}' ended by {trace.terminated_by} at t={world.time:.2f} s: {verdict.outcome.value}"
               f" (min separation {verdict.min_separation:.2f} m).")
  return trace, verdict


def detection_onset(trace, sensor, body_id):
  '''(time, true range) of the first detection by sensor attributed to
     body_id, or None if it was never detected.'''
  for r in trace.records:
    if any(d.source == body_id for d in r.detections.get(sensor, [])):
      return r.time, r.world.relative(r.world.body(body_id))["range"]
  return None
