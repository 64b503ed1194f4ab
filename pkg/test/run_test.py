
import logging
import os
import io
import copy
import json
import math
import types
import shutil
import tempfile
import itertools
import dataclasses
import contextlib

import unittest

import numpy as np

from aebsim.helpers import ScenarioError, BindingError, StpaError, document_delta, derive_seed, \
  dump_json
from aebsim.world import Pose2, Body, BodyKind, WorldState, step_world, visible_fraction, bodies_overlap
from aebsim.aeb import AebStage, AebConfig, BrakeCommand, compute_ttc, stopping_time, aeb_decide, \
  DEFAULT_AEB_CONFIG
from aebsim.sensors import Sensor, Detection, Interference, NO_INTERFERENCE, CfarConfig, RadarConfig, \
  CameraConfig, LidarConfig, cfar_detect, dbm_to_mw, mw_to_dbm, radar_received_power, power_sum_dbm, \
  build_power_profile, radar_sense, camera_sense, lidar_sense, \
  DEFAULT_RADAR_CONFIG, DEFAULT_CAMERA_CONFIG, DEFAULT_LIDAR_CONFIG
from aebsim.fusion import TrackerConfig, TrackStatus, Track, HitWindow, concatenate_detections, \
  update_tracks, select_mio, DEFAULT_TRACKER_CONFIG
from aebsim.attacks import AttackSpec, AttackKind, jammer_power_at_receiver, compile_interference
from aebsim.monitors import Outcome, RunTrace, SafetyConstraint, check_sc1
from aebsim.scenarios import read_document, load_scenario, instantiate_cpno, load_sweep, expand_sweep, \
  cell_document
from aebsim.simulation import run_once, detection_onset
from aebsim.recording import record_run
from aebsim.experiments import SweepResult, run_sweep, emit, majority_outcome
from aebsim.analysis.traceview import TraceView
from aebsim import stpa
from aebsim import cli


def ego_at(x, speed, decel=0., stage=AebStage.NONE):
  ego = Body("ego", BodyKind.EgoVehicle, Pose2(x, 0.), velocity=(speed, 0.), extent=(4.6, 1.8))
  return WorldState(0., (ego,), "ego", ego_command=BrakeCommand(stage, decel))

def make_track(tid, forward, left, range_rate=-5., confirmed=True):
  hits = HitWindow(1, 1)
  hits.push(confirmed)
  return Track(id=tid, forward=forward, left=left, range_rate=range_rate, hits=hits,
               status=TrackStatus.Confirmed if confirmed else TrackStatus.Tentative,
               last_update=0., last_range=math.hypot(forward, left))

def m_of_n_oracle(flags, m, n):
  ''' Latched confirmation after each push, by brute force. '''
  return [ any(sum(flags[max(0, j-n+1):j+1]) >= m for j in range(k+1)) for k in range(len(flags)) ]

def box(body_id, x, y, kind=BodyKind.Car, extent=(4.5, 1.8), rcs=10.):
  return Body(body_id, kind, Pose2(x, y), extent=extent, radar_cross_section=rcs)

def pedestrian(body_id, x, y):
  return box(body_id, x, y, kind=BodyKind.Pedestrian, extent=(0.5, 0.5), rcs=1.)

def world_with(*bodies, speed=10.):
  ''' Ego at the origin heading along +x, plus bodies. '''
  ego = Body("ego", BodyKind.EgoVehicle, Pose2(0., 0.), velocity=(speed, 0.), extent=(4.6, 1.8))
  return WorldState(0., (ego,) + bodies, "ego")


class TestWorldAndControl(unittest.TestCase):

  def assert_float_equality(self, a, b, rtol=1e-12):
    self.assertTrue(abs(a-b) <= rtol*max(abs(a), abs(b), 1e-300), f"{a} != {b}")

  def test_stopping_distance(self):
    for v in range(5, 31):
      for decel in (3.8, 5.3, 9.8):
        w = ego_at(0., float(v), decel, AebStage.Full if decel == 9.8 else AebStage.Partial1)
        while w.ego.speed > 0: w = step_world(w, 0.05)
        expected = v**2 / (2*decel)
        self.assertTrue(abs(w.ego.pose.x / expected - 1) < 0.02, f"v={v}, decel={decel}: {w.ego.pose.x} vs {expected}")

  def test_constant_velocity_actors(self):
    w = ego_at(0., 10.)
    car = Body("car", BodyKind.Car, Pose2(50., 0.), velocity=(5., 0.))
    w = WorldState(0., (w.ego, car), "ego")
    for _ in range(20): w = step_world(w, 0.05)
    self.assert_float_equality(w.time, 1., rtol=1e-9)
    self.assert_float_equality(w.body("car").pose.x, 55., rtol=1e-9)
    self.assert_float_equality(w.ego.pose.x, 10., rtol=1e-9)

  def test_overlap_and_visibility(self):
    a = Body("a", BodyKind.Car, Pose2(0., 0.), extent=(4., 2.))
    self.assertTrue(bodies_overlap(a, Body("b", BodyKind.Car, Pose2(4., 0.), extent=(4., 2.)))) # touching
    self.assertFalse(bodies_overlap(a, Body("c", BodyKind.Car, Pose2(4.01, 0.), extent=(4., 2.))))

    target = Body("t", BodyKind.Pedestrian, Pose2(20., 0.), extent=(0.5, 0.5))
    wall = Body("w", BodyKind.Obstruction, Pose2(10., 0.), extent=(1., 5.))
    self.assertEqual(visible_fraction(Pose2(0., 0.), target, []), 1.)
    self.assertEqual(visible_fraction(Pose2(0., 0.), target, [wall]), 0.)
    half = Body("h", BodyKind.Obstruction, Pose2(10., -1.), extent=(1., 2.))
    f = visible_fraction(Pose2(0., 0.), target, [half])
    self.assertTrue(0. < f < 1.)

    # The CPNO pedestrian starts hidden behind the parked cars
    w = load_scenario("cpno").initial_world()
    self.assertEqual(w.visibility["pedestrian"], 0.)

  def test_occlusion_monotonic(self):
    ped = pedestrian("ped", 20., 0.)
    fractions = []
    # Wall from y=1 down to a lower edge that moves across the sight lines
    for bottom in np.linspace(0.3, -0.3, 13):
      wall = box("wall", 10., (bottom + 1.)/2, kind=BodyKind.Obstruction, extent=(0.2, 1. - bottom))
      fractions.append(visible_fraction(Pose2(0., 0.), ped, [ wall ]))
    self.assertEqual(fractions[0], 1.)
    self.assertEqual(fractions[-1], 0.)
    self.assertTrue(all(a >= b for a, b in zip(fractions[:-1], fractions[1:])), fractions)

  def test_ttc_and_stages(self):
    self.assertEqual(compute_ttc(10., 5.), 2.)
    self.assertIsNone(compute_ttc(10., 0.))
    self.assertIsNone(compute_ttc(10., -1.))
    self.assert_float_equality(stopping_time(9.8, 9.8), 1.)

    cfg = AebConfig()
    mio = types.SimpleNamespace(range=cfg.headway_offset + 20., range_rate=-10.)
    self.assertEqual(aeb_decide(mio, 10., cfg), BrakeCommand(AebStage.Partial1, 3.8))
    mio = types.SimpleNamespace(range=cfg.headway_offset + 5., range_rate=-10.)
    self.assertEqual(aeb_decide(mio, 10., cfg), BrakeCommand(AebStage.Full, 9.8))
    self.assertEqual(aeb_decide(None, 10., cfg), BrakeCommand())

    # Full brake stays on without an MIO until the ego stops
    full = BrakeCommand(AebStage.Full, 9.8)
    self.assertEqual(aeb_decide(None, 5., cfg, full), full)
    self.assertEqual(aeb_decide(None, 0., cfg, full), BrakeCommand())

    # Stages do not drop while closing
    mio = types.SimpleNamespace(range=cfg.headway_offset + 50., range_rate=-1.)
    p2 = BrakeCommand(AebStage.Partial2, 5.3)
    self.assertEqual(aeb_decide(mio, 10., cfg, p2), p2)

    for v in (5., 15., 30.):
      thresholds = [ t for _, t in cfg.thresholds(v) ]
      self.assertTrue(all(t > 0 for t in thresholds))
      self.assertEqual([ s for s, _ in cfg.thresholds(v) ],
                       [ AebStage.FCW, AebStage.Partial1, AebStage.Partial2, AebStage.Full ])

  def test_stage_labels(self):
    for s in AebStage: self.assertEqual(AebStage.from_label(s.label), s)
    self.assertEqual(AebStage.NONE.label, "None")


class TestSensors(unittest.TestCase):

  def test_cfar_alpha(self):
    for pfa in (1e-2, 1e-3, 1e-6):
      for T in (4, 8, 16):
        cfar = CfarConfig(num_train=T, num_guard=2, pfa=pfa)
        N = 2*T
        self.assertTrue(abs(cfar.alpha - N*(pfa**(-1/N) - 1)) < 1e-9)
        # Exact false-alarm probability of CA-CFAR in exponential noise
        self.assertTrue(abs((1 + cfar.alpha/N)**(-N) / pfa - 1) < 1e-9)

  def test_cfar_false_alarm_rate(self):
    rng = np.random.default_rng(1234)
    n = 1_000_000
    for pfa in (1e-2, 1e-3):
      profile = mw_to_dbm(rng.exponential(1e-12, n))
      detections = cfar_detect(profile, CfarConfig(num_train=8, num_guard=2, pfa=pfa))
      rate = len(detections) / n
      self.assertTrue(0.5*pfa <= rate <= 1.5*pfa, f"pfa={pfa}: measured {rate}")

  def test_cfar_detects_strong_target(self):
    rng = np.random.default_rng(5)
    p = rng.exponential(1., 200)
    p[100] = 1e4
    self.assertIn(100, cfar_detect(mw_to_dbm(p), CfarConfig(pfa=1e-4)))

  def test_radar_equation(self):
    cfg = RadarConfig()
    self.assertTrue(abs(radar_received_power(cfg, 10., 1.) - radar_received_power(cfg, 100., 1.) - 40.) < 1e-9)
    self.assertTrue(abs(radar_received_power(cfg, 10., 10.) - radar_received_power(cfg, 10., 1.) - 10.) < 1e-9)
    self.assertEqual(radar_received_power(cfg, 10., 0.), -math.inf)
    self.assertEqual(radar_received_power(cfg, 0.1, 1.), radar_received_power(cfg, 0.5, 1.))

  def test_power_sum(self):
    self.assertTrue(abs(power_sum_dbm(0., 0.) - 10*math.log10(2)) < 1e-12)
    self.assertAlmostEqual(power_sum_dbm(-3., -math.inf), -3., places=9)

  def test_noise_statistics(self):
    cfg = RadarConfig()
    w = world_with()
    rng = np.random.default_rng(21)
    floor = float(dbm_to_mw(cfg.noise_floor))

    quiet = np.mean([ dbm_to_mw(build_power_profile(w, cfg, NO_INTERFERENCE, rng)) for _ in range(500) ])
    self.assertTrue(abs(quiet/floor - 1) < 0.05, quiet/floor)

    # 20 dB above the floor: 100 times the floor, plus the floor itself
    jammed = Interference(extra_noise=cfg.noise_floor + 20.)
    loud = np.mean([ dbm_to_mw(build_power_profile(w, cfg, jammed, rng)) for _ in range(500) ])
    self.assertTrue(abs(loud/floor/101 - 1) < 0.05, loud/floor)

  def test_cfar_scale_invariance(self):
    rng = np.random.default_rng(8)
    p = rng.exponential(1., 400)
    p[[50, 120, 300]] *= [300., 1000., 50.]
    cfar = CfarConfig(pfa=1e-3)
    reference = cfar_detect(mw_to_dbm(p), cfar)
    self.assertIn(120, reference)
    for scale in (1e-13, 1e-3, 1e6):
      self.assertEqual(cfar_detect(mw_to_dbm(p*scale), cfar), reference, scale)

  def test_radar_power_monotonic(self):
    cfg = RadarConfig()
    p = [ radar_received_power(cfg, r, 1.) for r in np.linspace(1., 99., 50) ]
    self.assertTrue(all(a > b for a, b in zip(p[:-1], p[1:])))
    p = [ radar_received_power(cfg, 30., rcs) for rcs in (0.1, 1., 10., 100.) ]
    self.assertTrue(all(a < b for a, b in zip(p[:-1], p[1:])))

  def test_single_strong_target(self):
    cfg = RadarConfig(cfar=CfarConfig(pfa=1e-9))
    dets = radar_sense(world_with(box("car", 30., 0.)), cfg, NO_INTERFERENCE, np.random.default_rng(2))
    self.assertEqual(len(dets), 1)
    self.assertEqual(dets[0].source, "car")
    self.assertEqual(dets[0].range, cfg.bin_center(60))
    self.assertTrue(abs(dets[0].range_rate + 10.) < 1.)

  def test_ghost_next_to_true_detection(self):
    cfg = RadarConfig(cfar=CfarConfig(pfa=1e-9))
    ghost = Detection(Sensor.Radar, 30.1, 0., range_rate=-25., snr=40., source="ghost:g")
    dets = radar_sense(world_with(box("car", 30., 0.)), cfg, Interference(ghost_detections=(ghost,)),
                       np.random.default_rng(2))
    self.assertEqual(sorted(d.source for d in dets), [ "car", "ghost:g" ])
    car = next(d for d in dets if d.source == "car")
    self.assertTrue(abs(car.range_rate + 10.) < 1.)
    self.assertEqual(next(d for d in dets if d.source == "ghost:g").range_rate, -25.)

  def test_camera_fov_and_visibility(self):
    cam = CameraConfig(p_detect=((0., 1.), (100., 1.)))
    rng = np.random.default_rng(0)
    def seen(*bodies): return [ d.source for d in camera_sense(world_with(*bodies), cam, NO_INTERFERENCE, rng) ]

    self.assertEqual(seen(pedestrian("ped", 20., 0.)), [ "ped" ])
    self.assertEqual(seen(pedestrian("ped", 20., 15.)), []) # azimuth 0.64 rad, FOV is 1 rad wide
    self.assertEqual(seen(pedestrian("ped", 85., 0.)), [])

    # Covers three of the five sight lines to the near face
    wall = box("wall", 10., 0.495, kind=BodyKind.Obstruction, extent=(0.2, 1.01))
    w = world_with(pedestrian("ped", 20., 0.), wall)
    self.assertAlmostEqual(w.visibility["ped"], 0.4, places=12)
    self.assertNotIn("ped", [ d.source for d in camera_sense(w, cam, NO_INTERFERENCE, rng) ])

  def test_camera_patch(self):
    cam = CameraConfig(p_detect=((0., 1.), (100., 1.)))
    w = world_with(pedestrian("ped", 20., 0.), box("car", 30., 6.))
    plain = camera_sense(w, cam, NO_INTERFERENCE, np.random.default_rng(0))
    self.assertEqual(sorted(d.source for d in plain), [ "car", "ped" ])
    self.assertEqual({ d.class_label for d in plain }, { "Car", "Pedestrian" })

    patch = Interference(suppressed_classes=frozenset({ "Pedestrian" }))
    self.assertEqual([ d.source for d in camera_sense(w, cam, patch, np.random.default_rng(0)) ], [ "car" ])

  def test_lidar_clusters_and_blinding(self):
    lidar = LidarConfig()
    w = world_with(box("near", 20., 0.), box("side", 20., 6.))
    dets = lidar_sense(w, lidar, NO_INTERFERENCE)
    self.assertEqual(sorted(d.source for d in dets), [ "near", "side" ])
    near = next(d for d in dets if d.source == "near")
    self.assertTrue(abs(near.range - 17.75) < 0.1, near.range)
    self.assertTrue(abs(near.azimuth) < 0.01, near.azimuth)

    blinded = lidar_sense(w, lidar, Interference(blinded_sectors=((-0.1, 0.1),)))
    self.assertEqual([ d.source for d in blinded ], [ "side" ])


class TestFusion(unittest.TestCase):

  def test_m_of_n_all_histories(self):
    # Every history of length N; within the first N pushes the window sum is the prefix sum
    for n in range(1, 17):
      histories = ((np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
      prefix = np.cumsum(histories, axis=1)
      rows = histories.tolist()
      for m in range(1, n+1):
        got = []
        for row in rows:
          w = HitWindow(m, n)
          got.append([ w.push(b) for b in row ])
        self.assertTrue(np.array_equal(np.array(got), prefix >= m), f"M={m}, N={n}")

  def test_m_of_n_sliding(self):
    for n in range(1, 7):
      for m in range(1, n+1):
        for flags in itertools.product([False, True], repeat=n+2):
          w = HitWindow(m, n)
          self.assertEqual([ w.push(f) for f in flags ], m_of_n_oracle(flags, m, n), f"M={m}, N={n}, {flags}")

  def test_m_of_n_random(self):
    rng = np.random.default_rng(7)
    for n in range(1, 17):
      for m in range(1, n+1):
        for _ in range(20):
          flags = list(rng.random(2*n + 4) < rng.uniform(0.1, 0.9))
          w = HitWindow(m, n)
          self.assertEqual([ w.push(f) for f in flags ], m_of_n_oracle(flags, m, n))
          self.assertEqual(len(w.history()), min(n, len(flags)))

  def test_concatenation_order(self):
    d = lambda s, r: Detection(s, r, 0., timestamp=1.)
    merged = concatenate_detections({ Sensor.Lidar: [d(Sensor.Lidar, 5.)],
                                      Sensor.Camera: [d(Sensor.Camera, 30.), d(Sensor.Camera, 10.)],
                                      Sensor.Radar: [d(Sensor.Radar, 20.)] })
    self.assertEqual([ (x.sensor, x.range) for x in merged ],
                     [ (Sensor.Radar, 20.), (Sensor.Camera, 10.), (Sensor.Camera, 30.), (Sensor.Lidar, 5.) ])
    self.assertEqual(concatenate_detections({}), [])

  def test_track_confirmation_and_deletion(self):
    cfg = TrackerConfig(m_confirm=2, n_window=3)
    det = [ Detection(Sensor.Radar, 20., 0., range_rate=-5.) ]
    tracks = update_tracks([], det, cfg, 0.)
    self.assertEqual([ t.status for t in tracks ], [ TrackStatus.Tentative ])
    tracks = update_tracks(tracks, det, cfg, 0.05)
    self.assertEqual(len(tracks), 1)
    self.assertEqual(tracks[0].status, TrackStatus.Confirmed)
    for t in range(2): tracks = update_tracks(tracks, [], cfg, 0.1 + 0.05*t)
    self.assertEqual(tracks[0].status, TrackStatus.Confirmed)
    tracks = update_tracks(tracks, [], cfg, 0.2)
    self.assertEqual(tracks[0].status, TrackStatus.Deleted)
    self.assertEqual(update_tracks(tracks, [], cfg, 0.25), [])

  def test_select_mio(self):
    self.assertIsNone(select_mio([], 1.8))
    tracks = [ make_track(1, 30., 0.),
               make_track(2, 20., 3.),    # out of the lane
               make_track(3, 25., 0., confirmed=False),
               make_track(4, -5., 0.),    # behind
               make_track(5, 28., 1.) ]
    self.assertEqual(select_mio(tracks, 1.8).id, 5)
    tied = [ make_track(1, 20., 0., -1.), make_track(2, 20., 0., -8.) ]
    self.assertEqual(select_mio(tied, 1.8).id, 2)


class TestAttacks(unittest.TestCase):

  def test_jammer_link_budget(self):
    cfg = RadarConfig()
    ego = Pose2(0., 0.)
    spec = lambda x, **kw: AttackSpec.from_dict({ "id": "j", "kind": "RadarDenialJamming",
                                                  "attacker_pose": { "x": x, "y": 0. }, **kw })
    self.assertTrue(abs(jammer_power_at_receiver(spec(30.), ego, cfg) - jammer_power_at_receiver(spec(60.), ego, cfg)
                        - 20*math.log10(2)) < 1e-9)
    self.assertTrue(abs(jammer_power_at_receiver(spec(30., tx_power=20.), ego, cfg)
                        - jammer_power_at_receiver(spec(30.), ego, cfg) - 10.) < 1e-9)
    self.assertEqual(jammer_power_at_receiver(spec(30., tx_power=-math.inf), ego, cfg), -math.inf)

    # Ego frame attackers move with the ego
    moving = spec(30., frame="ego")
    self.assertEqual(jammer_power_at_receiver(moving, Pose2(100., 0.), cfg),
                     jammer_power_at_receiver(moving, ego, cfg))

  def test_compile_interference(self):
    w = ego_at(0., 10.)
    cfgs = { Sensor.Radar: RadarConfig() }
    self.assertTrue(compile_interference([], w, cfgs).is_identity())

    jam = AttackSpec.from_dict({ "id": "j", "kind": "RadarDenialJamming", "attacker_pose": { "x": 30., "y": 0. },
                                 "active_window": [1., 2.] })
    self.assertTrue(compile_interference([jam], w, cfgs).is_identity())
    w1 = dataclasses.replace(w, time=1.5)
    self.assertAlmostEqual(compile_interference([jam], w1, cfgs).extra_noise,
                           jammer_power_at_receiver(jam, w1.ego.pose, cfgs[Sensor.Radar]), places=9)
    self.assertIs(AttackKind.LidarBlinding.sensor, Sensor.Lidar)

  def test_two_equal_jammers(self):
    w = ego_at(0., 10.)
    cfgs = { Sensor.Radar: RadarConfig() }
    jam = lambda i: AttackSpec.from_dict({ "id": i, "kind": "RadarDenialJamming", "attacker_pose": { "x": 30., "y": 0. } })
    one = compile_interference([ jam("a") ], w, cfgs).extra_noise
    two = compile_interference([ jam("a"), jam("b") ], w, cfgs).extra_noise
    self.assertTrue(abs(two - one - 3.0103) < 1e-4, two - one)

  def test_range_deception(self):
    cfgs = { Sensor.Radar: RadarConfig() }
    pull_in = AttackSpec.from_dict({ "id": "r", "kind": "RadarRangeDeception", "attacker_pose": { "x": 50., "y": 0. },
                                     "spoof_range_offset": -10. })
    (g,) = compile_interference([ pull_in ], world_with(box("car", 40., 0.)), cfgs).ghost_detections
    self.assertAlmostEqual(g.range, 30., places=9)
    self.assertAlmostEqual(g.range_rate, -10., places=9)
    self.assertEqual(g.source, "ghost:r")
    self.assertTrue(g.snr > 0)

    # An empty lane has nothing to pull in, but a positive offset places a phantom
    self.assertEqual(compile_interference([ pull_in ], world_with(), cfgs).ghost_detections, ())
    phantom = dataclasses.replace(pull_in, spoof_range_offset=25.)
    for w in (world_with(), world_with(box("parked", 30., 6.))):
      (g,) = compile_interference([ phantom ], w, cfgs).ghost_detections
      self.assertEqual((g.range, g.azimuth), (25., 0.))
      self.assertAlmostEqual(g.range_rate, -10., places=9)

  def test_velocity_deception(self):
    cfgs = { Sensor.Radar: RadarConfig() }
    fast = AttackSpec.from_dict({ "id": "v", "kind": "RadarVelocityDeception", "attacker_pose": { "x": 50., "y": 0. },
                                  "spoof_velocity": -30. })
    (g,) = compile_interference([ fast ], world_with(box("car", 40., 0.)), cfgs).ghost_detections
    self.assertAlmostEqual(g.range, 40., places=9)
    self.assertEqual(g.range_rate, -30.)

    self.assertEqual(compile_interference([ fast ], world_with(), cfgs).ghost_detections, ())
    (g,) = compile_interference([ dataclasses.replace(fast, spoof_range_offset=20.) ], world_with(), cfgs).ghost_detections
    self.assertEqual((g.range, g.range_rate), (20., -30.))

  def test_patch_and_blinding(self):
    cfgs = { Sensor.Camera: CameraConfig(), Sensor.Lidar: LidarConfig() }
    patch = AttackSpec.from_dict({ "id": "p", "kind": "CameraAdversarialPatch", "patch_classes": [ "Pedestrian" ],
                                   "patch_target": "ped" })
    blind = AttackSpec.from_dict({ "id": "b", "kind": "LidarBlinding", "sector": [ -0.2, 0.2 ] })

    i = compile_interference([ patch, blind ], world_with(pedestrian("ped", 20., 0.)), cfgs)
    self.assertEqual(i.suppressed_classes, frozenset({ "Pedestrian" }))
    self.assertEqual(i.blinded_sectors, ((-0.2, 0.2),))
    self.assertEqual(i.extra_noise, -math.inf)

    # A patch outside the camera FOV does nothing
    behind = compile_interference([ patch ], world_with(pedestrian("ped", -20., 0.)), cfgs)
    self.assertEqual(behind.suppressed_classes, frozenset())


class TestMonitors(unittest.TestCase):

  @staticmethod
  def synthetic_trace(ranges, stages, speeds=None, dt=0.05):
    speeds = [ 5. ]*len(ranges) if speeds is None else speeds
    records = [ types.SimpleNamespace(time=i*dt, true_mio_range=r, world=ego_at(0., v),
                                      sensed=BrakeCommand(s, AebConfig().stage_decel(s)))
                for i, (r, s, v) in enumerate(zip(ranges, stages, speeds)) ]
    return RunTrace(scenario_name="synthetic", records=records)

  def test_sc1(self):
    sc = SafetyConstraint("SC1", trigger_distance=15., max_latency=0.2)
    N, P = AebStage.NONE, AebStage.Partial1
    ok = self.synthetic_trace([20., 16., 14., 12., 10.], [N, N, N, P, P])
    self.assertTrue(check_sc1(ok, sc).passed)

    late = self.synthetic_trace([20., 14., 12., 10., 8., 6., 4.], [N, N, N, N, N, N, P])
    r = check_sc1(late, sc)
    self.assertFalse(r.passed)
    self.assertTrue(abs(r.violation_time - 0.05) < 1e-9)

    # Ends inside the latency window without braking
    short = self.synthetic_trace([20., 14.], [N, N])
    self.assertFalse(check_sc1(short, sc).passed)

    never_close = self.synthetic_trace([None, 30., 20.], [N, N, N])
    self.assertTrue(check_sc1(never_close, sc).passed)

  def test_sc1_after_stopping(self):
    sc = SafetyConstraint("SC1", trigger_distance=15., max_latency=0.2)
    N, P, F, W = AebStage.NONE, AebStage.Partial1, AebStage.Full, AebStage.FCW

    # The full brake releases to FCW on the tick the ego comes to rest
    stopped = self.synthetic_trace([20., 14., 10., 6., 4.8, 4.77], [N, N, P, F, F, W],
                                   speeds=[8., 8., 6., 3., 1., 0.])
    self.assertTrue(check_sc1(stopped, sc).passed)

    # Ends inside the latency window, but standing still
    short_stop = self.synthetic_trace([20., 14.], [N, W], speeds=[0.5, 0.])
    self.assertTrue(check_sc1(short_stop, sc).passed)

    rolling = self.synthetic_trace([20., 14.], [N, W], speeds=[0.5, 0.1])
    self.assertFalse(check_sc1(rolling, sc).passed)

  def test_majority(self):
    self.assertEqual(majority_outcome(["Safe", "Crash", "Safe"]), "Safe")
    self.assertEqual(majority_outcome(["Safe", "Crash"]), "Crash")
    self.assertEqual(majority_outcome(["StoppedTooSoon", "Safe", "ModelError"]), "ModelError")


class TestScenarios(unittest.TestCase):

  def test_defaults_match_config_classes(self):
    self.assertEqual(RadarConfig.from_dict(DEFAULT_RADAR_CONFIG), RadarConfig())
    self.assertEqual(CameraConfig.from_dict(DEFAULT_CAMERA_CONFIG), CameraConfig())
    self.assertEqual(LidarConfig.from_dict(DEFAULT_LIDAR_CONFIG), LidarConfig())
    self.assertEqual(TrackerConfig(**DEFAULT_TRACKER_CONFIG), TrackerConfig())
    self.assertEqual(AebConfig.from_dict(DEFAULT_AEB_CONFIG), AebConfig())
    self.assertEqual(DEFAULT_AEB_CONFIG["ttc_scale"], { "fcw": 1.2, "p1": 1.0, "p2": 0.8, "full": 0.6 })

    # Plain JSON types only, so that filled-in documents validate again
    for d in (DEFAULT_RADAR_CONFIG, DEFAULT_CAMERA_CONFIG, DEFAULT_LIDAR_CONFIG, DEFAULT_TRACKER_CONFIG, DEFAULT_AEB_CONFIG):
      self.assertEqual(json.loads(json.dumps(d)), d)
    self.assertIsInstance(DEFAULT_CAMERA_CONFIG["p_detect"][0], list)
    self.assertEqual(load_scenario("ccrs").document["ego"]["sensors"]["radar"], DEFAULT_RADAR_CONFIG)

  def test_bundled_scenario(self):
    s = load_scenario("cpno")
    self.assertEqual(s.name, "CPNO")
    self.assertEqual(s.enabled_sensors(), [ Sensor.Radar, Sensor.Camera, Sensor.Lidar ])
    self.assertEqual(sorted(b.id for b in s.bodies), [ "parked1", "parked2", "pedestrian" ])
    self.assertEqual(s.conflict_point, (40., 0.))

    # Normalized documents load to the same scenario
    self.assertEqual(load_scenario(s.to_document()).hash, s.hash)

  def test_invalid_documents(self):
    doc = read_document("cpno")
    doc["bogus"] = 1
    with self.assertRaises(ScenarioError) as cm: load_scenario(doc)
    self.assertIn("bogus", str(cm.exception))

    doc = read_document("cpno")
    doc["bodies"][1]["id"] = doc["bodies"][0]["id"]
    with self.assertRaises(ScenarioError) as cm: load_scenario(doc)
    self.assertTrue(str(cm.exception).startswith("bodies/1/id"))

    with self.assertRaises(ScenarioError): load_scenario("no_such_scenario")
    with self.assertRaises(ScenarioError): instantiate_cpno({ "ped_speed": 0. })
    with self.assertRaises(ScenarioError): instantiate_cpno({ "ped_speed": 0.1 })

  def test_cpno_parameters(self):
    s = instantiate_cpno({ "ego_speed": 10., "conflict_distance": 50. })
    ped = next(b for b in s.bodies if b.id == "pedestrian")
    # The pedestrian reaches the lane center when the ego would
    pose, _ = ped.trajectory.state_at(50./10.)
    self.assertAlmostEqual(pose.y, 0., places=9)
    self.assertAlmostEqual(pose.x, 50., places=9)

  def test_expand_sweep(self):
    grid = load_sweep("jamming_sweep")
    self.assertEqual(grid.shape, (6, 7))
    scenarios = expand_sweep(grid)
    self.assertEqual(len(scenarios), 42)
    self.assertEqual(set(s.coordinates for s in scenarios), set(itertools.product(range(6), range(7))))
    for s in scenarios:
      i, j = s.coordinates
      self.assertEqual(s.attacks[0].attacker_pose.x, grid.axes[0].values[i])
      self.assertEqual(s.attacks[0].tx_power, grid.axes[1].values[j])

    delta = document_delta(grid.base, cell_document(grid, (0, 0)))
    self.assertEqual(json.loads(json.dumps(delta)), delta)
    self.assertNotEqual(derive_seed(grid.base_seed, [0, 0], 0), derive_seed(grid.base_seed, [0, 0], 1))
    self.assertEqual(derive_seed(grid.base_seed, [0, 0], 0), derive_seed(grid.base_seed, [0, 0], 0))

  def test_bad_sweep(self):
    doc = read_document("jamming_sweep")
    doc["axes"][0]["path"] = "attacks/5/tx_power"
    with self.assertRaises(ScenarioError): load_sweep(doc)

    doc = read_document("jamming_sweep")
    doc["axes"][1]["values"] = [ 10., float("nan") ]
    with self.assertRaises(ScenarioError): expand_sweep(load_sweep(doc))


class TestClosedLoop(unittest.TestCase):

  def test_cpno_baseline(self):
    trace, verdict = run_once(load_scenario("cpno"))
    self.assertEqual(verdict.outcome, Outcome.Safe)
    self.assertTrue(verdict.min_separation > 0.5)
    self.assertIsNotNone(verdict.first_brake_time)

    _, verdict = run_once(instantiate_cpno({ "aeb_enabled": False }))
    self.assertEqual(verdict.outcome, Outcome.Crash)
    self.assertEqual(verdict.min_separation, 0.)

  def test_radar_only_jamming(self):
    trace, verdict = run_once(load_scenario("cpno_jamming"))
    self.assertEqual(verdict.outcome, Outcome.Crash)
    onset = detection_onset(trace, Sensor.Radar, "pedestrian")
    self.assertTrue(onset is None or onset[1] < 5., f"Radar detection onset at {onset}")

  def test_concatenation_survives_jamming(self):
    _, verdict = run_once(load_scenario("cpno_concatenation"))
    self.assertEqual(verdict.outcome, Outcome.Safe)

  def test_ideal_sensor_matches_oracle(self):
    trace, _ = run_once(load_scenario("ccrs_ideal"))
    self.assertTrue(len(trace) > 10)
    for r in trace.records:
      self.assertEqual(r.sensed, r.oracle, f"t={r.time:.2f} s")

  def test_same_seed_same_trace(self):
    s = load_scenario("cpno_jamming")
    a, va = run_once(s, 11)
    b, vb = run_once(s, 11)
    self.assertEqual(va, vb)
    self.assertEqual([ r.detections for r in a.records ], [ r.detections for r in b.records ])

  @staticmethod
  def with_attack(name, attack, **changes):
    doc = read_document(name)
    doc["attacks"] = [ attack ]
    doc.update(changes)
    return load_scenario(doc)

  def test_phantom_in_empty_lane(self):
    radar_only = { "radar": True, "camera": False, "lidar": False }
    s = self.with_attack("ccrs", { "id": "phantom", "kind": "RadarRangeDeception", "frame": "ego",
                                   "attacker_pose": { "x": 30., "y": 0. }, "tx_power": 10., "spoof_range_offset": 30. },
                         bodies=[], sensor_enable=radar_only)
    trace, verdict = run_once(s)
    self.assertTrue(any(d.source == "ghost:phantom" for r in trace.records for d in r.detections[Sensor.Radar]))
    self.assertIsNotNone(verdict.first_brake_time)
    self.assertTrue(all(r.oracle.stage < AebStage.Partial1 for r in trace.records))
    self.assertEqual(trace.terminated_by, "ego_stopped")

  def test_velocity_ghost_next_to_target(self):
    radar_only = { "radar": True, "camera": False, "lidar": False }
    s = self.with_attack("ccrs", { "id": "fast", "kind": "RadarVelocityDeception",
                                   "attacker_pose": { "x": 80., "y": 0. }, "tx_power": 10., "spoof_velocity": -40. },
                         sensor_enable=radar_only)
    trace, _ = run_once(s)
    both = [ r for r in trace.records if { "target", "ghost:fast" } <= { d.source for d in r.detections[Sensor.Radar] } ]
    self.assertTrue(len(both) > 0)

  def test_camera_patch_and_lidar_blinding(self):
    plain, _ = run_once(load_scenario("cpno"))
    self.assertIsNotNone(detection_onset(plain, Sensor.Camera, "pedestrian"))
    self.assertIsNotNone(detection_onset(plain, Sensor.Lidar, "pedestrian"))

    patched, _ = run_once(self.with_attack("cpno", { "id": "patch", "kind": "CameraAdversarialPatch",
                                                     "patch_classes": [ "Pedestrian" ], "patch_target": "pedestrian" }))
    self.assertIsNone(detection_onset(patched, Sensor.Camera, "pedestrian"))
    self.assertIsNotNone(detection_onset(patched, Sensor.Lidar, "pedestrian"))

    blinded, _ = run_once(self.with_attack("cpno", { "id": "blind", "kind": "LidarBlinding", "sector": [ -1.0, 1.0 ] }))
    self.assertIsNone(detection_onset(blinded, Sensor.Lidar, "pedestrian"))
    self.assertIsNotNone(detection_onset(blinded, Sensor.Camera, "pedestrian"))


class TestSweeps(unittest.TestCase):

  @classmethod
  def setUpClass(cls):
    cls._data_root = tempfile.mkdtemp(prefix=f'aebsim_test_{hex(int(np.random.random()*1e8))[2:]}_')
    cls._parallelism = max(2, min(8, os.cpu_count() or 1))
    cls._results = { name: run_sweep(load_sweep(name), parallelism=cls._parallelism)
                     for name in [ "jamming_sweep", "jamming_sweep_mofn_2_2", "jamming_sweep_mofn_9_12",
                                   "jamming_sweep_false_alarm_2_2" ] }

  @classmethod
  def tearDownClass(cls):
    shutil.rmtree(cls._data_root)

  def test_monotone_staircase(self):
    m = self._results["jamming_sweep"].outcomes()
    self.assertEqual(m.shape, (6, 7))
    crash = (m == "Crash")
    self.assertTrue(crash.any())
    self.assertTrue((~crash).any())
    # Crashes with a far attacker imply crashes with a nearer one, and with more power
    for i in range(5): self.assertTrue(np.all(crash[i+1, :] <= crash[i, :]), f"\n{m}")
    for j in range(6): self.assertTrue(np.all(crash[:, j] <= crash[:, j+1]), f"\n{m}")

  def test_m_of_n(self):
    fast = self._results["jamming_sweep_mofn_2_2"]
    slow = self._results["jamming_sweep_mofn_9_12"]
    self.assertTrue(fast.count("Crash") <= slow.count("Crash"))
    self.assertTrue(np.any((slow.outcomes() == "Crash") & (fast.outcomes() != "Crash")))
    self.assertTrue(self._results["jamming_sweep_false_alarm_2_2"].count("StoppedTooSoon") > 0)

  def test_json_round_trip(self):
    r = self._results["jamming_sweep"]
    back = SweepResult.from_json(r.to_json())
    self.assertEqual(back, r)
    self.assertEqual(back.to_json(), r.to_json())
    self.assertEqual(r.provenance["repetitions"], 3)
    self.assertTrue(all(len(c["repetitions"]) == 3 for c in r.cells.values()))

  def test_emit(self):
    r = self._results["jamming_sweep"]
    out = os.path.join(self._data_root, "emitted")
    for fmt in ("csv", "json", "svg", "png"):
      self.assertTrue(os.path.isfile(emit(r, fmt, os.path.join(out, f"sweep.{fmt}"))))

    with open(os.path.join(out, "sweep.csv")) as f:
      rows = [ l.rstrip("\n").split(",") for l in f if not l.startswith("#") ]
    self.assertEqual(len(rows), 7)
    self.assertEqual(rows[0][0], "distance\\power")
    self.assertTrue(all(len(row) == 8 for row in rows))
    self.assertEqual(rows[1][1:], list(r.outcomes()[0, :]))

    with open(os.path.join(out, "sweep.svg")) as f: svg = f.read()
    self.assertEqual(svg.count('class="cell"'), 42)
    self.assertIn(r.provenance["scenario_hash"], svg)

    with open(os.path.join(out, "sweep.json")) as f:
      self.assertEqual(SweepResult.from_json(f.read()), r)

    ds = r.to_xarray()
    self.assertEqual(dict(ds.sizes), { "distance": 6, "power": 7 })

  def test_parallelism_does_not_change_results(self):
    doc = { "format_version": "1.0.0",
            "name": "determinism",
            "base": "cpno_jamming",
            "axes": [ { "name": "distance", "path": "attacks/0/attacker_pose/x", "values": [10., 40.] },
                      { "name": "power", "path": "attacks/0/tx_power", "values": [0., 20.] } ],
            "base_seed": 7,
            "repetitions": 2 }
    serial = run_sweep(load_sweep(doc), parallelism=1)
    parallel = run_sweep(load_sweep(doc), parallelism=8)
    self.assertEqual(serial.to_json(), parallel.to_json())

    paths = [ emit(x, "json", os.path.join(self._data_root, f"determinism_{i}.json"))
              for i, x in enumerate((serial, parallel)) ]
    with open(paths[0], 'rb') as f0, open(paths[1], 'rb') as f1: self.assertEqual(f0.read(), f1.read())


class TestRecording(unittest.TestCase):

  @classmethod
  def setUpClass(cls):
    cls._data_root = tempfile.mkdtemp(prefix=f'aebsim_test_{hex(int(np.random.random()*1e8))[2:]}_')
    cls._scenario = load_scenario("cpno_jamming")
    cls._run_dirs = []
    for _ in range(2):
      with record_run(cls._scenario, 3, data_base_dir=cls._data_root) as rec:
        logging.info(f'This info message will (also) end up in log.txt within the run dir {rec.path()}.')
        cls._trace, cls._verdict = run_once(cls._scenario, 3)
        rec.add_trace(cls._trace)
        rec.write_verdict(cls._verdict, { "terminated_by": cls._trace.terminated_by })
      cls._run_dirs.append(rec.path())

  @classmethod
  def tearDownClass(cls):
    shutil.rmtree(cls._data_root)

  def test_run_dir_files(self):
    files = os.listdir(self._run_dirs[0])
    for f in [ "README", "log.txt", "scenario.json", "trace.csv", "verdict.json" ]:
      self.assertTrue(f in files, f)

    # Same name again gets a numbered directory
    self.assertTrue(self._run_dirs[1].endswith("_2"))

  def test_byte_identical_reruns(self):
    for f in [ "scenario.json", "trace.csv", "verdict.json" ]:
      with open(os.path.join(self._run_dirs[0], f), 'rb') as f0, open(os.path.join(self._run_dirs[1], f), 'rb') as f1:
        self.assertEqual(f0.read(), f1.read(), f)

  def test_idle_attack_changes_nothing(self):
    plain = read_document("cpno")
    idle = copy.deepcopy(plain)
    # Never active: the ego stops long before t=100 s
    idle["attacks"] = [ { "id": "idle", "kind": "RadarDenialJamming", "frame": "ego", "tx_power": 20.,
                          "attacker_pose": { "x": 30., "y": 0. }, "active_window": [ 100., 200. ] } ]
    rows, verdicts = [], []
    for doc in (plain, idle):
      s = load_scenario(doc)
      with record_run(s, 5, data_base_dir=os.path.join(self._data_root, "idle_attack")) as rec:
        trace, verdict = run_once(s, 5)
        rec.add_trace(trace)
        rec.write_verdict(verdict)
      with open(os.path.join(rec.path(), "trace.csv"), 'rb') as f:
        rows.append(b"".join(l for l in f if not l.startswith(b"#")))
      with open(os.path.join(rec.path(), "verdict.json"), 'r') as f:
        verdicts.append(json.load(f)["verdict"])
    self.assertTrue(len(rows[0]) > 0)
    self.assertEqual(rows[0], rows[1])
    self.assertEqual(verdicts[0], verdicts[1])

  def test_traceview(self):
    view = TraceView(self._run_dirs[0])
    self.assertEqual(view.npoints(), len(self._trace))
    self.assertEqual(view.metadata["seed"], "3")
    self.assertEqual(view.metadata["scenario_hash"], self._scenario.hash)
    self.assertEqual(view.metadata["ondisk_format_version"], "1.0.0")
    self.assertEqual(view.units("time"), "s")
    self.assertEqual(view.units("ego_decel"), "m/s^2")
    self.assertTrue(np.allclose(view["time"], [ r.time for r in self._trace.records ]))
    self.assertEqual(list(view["sensed_stage"]), [ r.sensed.stage.label for r in self._trace.records ])

    v = view.verdict()
    self.assertEqual(v["verdict"]["outcome"], self._verdict.outcome.value)
    self.assertEqual(v["terminated_by"], self._trace.terminated_by)
    self.assertEqual(view.scenario()["name"], self._scenario.name)

    ds = view.to_xarray()
    self.assertEqual(ds["ego_speed"].attrs["units"], "m/s")
    self.assertEqual(len(ds["time"]), len(self._trace))

  def test_traceview_accepts_csv_path(self):
    view = TraceView(os.path.join(self._run_dirs[0], "trace.csv"))
    self.assertEqual(view.name(), os.path.split(self._run_dirs[0])[-1])


class TestStpa(unittest.TestCase):

  @classmethod
  def setUpClass(cls):
    cls._model = stpa.load_model("aeb_stpa_model")
    cls._catalog = stpa.load_catalog("attack_catalog")
    cls._analysis = stpa.analyze(cls._model, cls._catalog)
    cls._a1 = next(t for t in cls._analysis.templates if t.attack_types[0].id == "A1")

  def with_attack(self, attack_id):
    return dataclasses.replace(self._a1, attack_types=(next(a for a in self._catalog if a.id == attack_id),))

  def test_counts(self):
    c = self._analysis.counts()
    self.assertEqual(c["ucas"], 21)
    self.assertEqual(c["aeb_ucas"], 14)
    self.assertEqual(c["hazard_scenarios"], 15)
    self.assertEqual(c["templates"], 102)
    self.assertEqual(len(self._catalog), 11)

  def test_ids_and_order(self):
    self.assertEqual([ u.id for u in self._analysis.ucas ], [ f"UCA-{i+1}" for i in range(21) ])
    self.assertEqual([ s.id for s in self._analysis.scenarios ], [ f"HS-{i+1}" for i in range(15) ])
    self.assertEqual([ t.id for t in self._analysis.templates ], [ f"AS-{i+1}" for i in range(102) ])
    actions = [ a.id for a in self._model.structure.control_actions ]
    self.assertEqual([ u.action.id for u in self._analysis.ucas ],
                     sorted((u.action.id for u in self._analysis.ucas), key=actions.index))

  def test_traceability(self):
    for t in self._analysis.templates:
      chain = t.chain()
      uca = chain["uca"]
      self.assertIs(uca, t.hazard_scenario.uca)
      self.assertIs(chain["control_action"], uca.action)
      self.assertTrue(len(chain["hazards"]) > 0, t.id)
      self.assertEqual([ h["id"] for h in chain["hazards"] ], list(uca.hazards))
      self.assertTrue(len(t.target_constraints) > 0, t.id)
      self.assertTrue(all(a.caused_event in t.hazard_scenario.cause_events for a in t.attack_types))

  def test_report_round_trip(self):
    with io.StringIO() as f:
      dump_json(self._analysis, f)
      report = json.loads(f.getvalue())
    self.assertEqual(report["counts"]["templates"], 102)
    t = stpa.AttackScenarioTemplate.from_dict(report["templates"][0])
    self.assertEqual(t.id, "AS-1")
    self.assertEqual(t.chain()["uca"].id, self._analysis.templates[0].hazard_scenario.uca.id)
    self.assertEqual(len(self._analysis.table()), 102)

  def test_empty_catalog(self):
    links = stpa.link_attacks(self._analysis.scenarios, [], self._model.hazards)
    self.assertEqual(len(links), 0)
    self.assertEqual(len(links.uncovered), 15)
    self.assertEqual(len(links.unmatched_events), sum(len(s.cause_events) for s in self._analysis.scenarios))

  def test_invalid_structures(self):
    with self.assertRaises(StpaError):
      stpa.ControlStructure("s", ("Driver", "Vehicle"),
                            (stpa.ControlAction("a", "Driver", "Brakes", "brake"),))
    with self.assertRaises(StpaError):
      stpa.ControlStructure("s", ("Driver", "Vehicle", "Radio"),
                            (stpa.ControlAction("a", "Driver", "Vehicle", "brake"),))
    empty = stpa.ControlStructure("s", ("Driver",), ())
    with self.assertRaises(StpaError): stpa.enumerate_ucas(empty, ())
    with self.assertRaises(StpaError): stpa.expand_hazard_scenarios(self._analysis.ucas, [])

  def test_filter_rules(self):
    s = self._model.structure
    all_ucas = stpa.enumerate_ucas(s, self._model.hazards)
    self.assertEqual(len(all_ucas), 4*len(s.control_actions))
    one = stpa.enumerate_ucas(s, self._model.hazards, [ { "actions": [ s.control_actions[0].id ] } ])
    self.assertEqual(len(one), 4*(len(s.control_actions) - 1))

  def test_concretize_sweep(self):
    c = stpa.concretize(self._a1, "denial_jamming_binding")
    self.assertTrue(c.is_sweep)
    self.assertEqual(c.attacks[0].id, f"{self._a1.id}-A1")
    self.assertEqual(c.attacks[0].kind, AttackKind.RadarDenialJamming)
    grid = load_sweep(c.document)
    self.assertEqual(grid.shape, (6, 7))
    self.assertEqual([ a.name for a in grid.axes ], [ "distance", "power" ])
    self.assertEqual(len(expand_sweep(grid)), 42)

  def test_concretize_scenario(self):
    slots = { "frame": "ego", "attacker_pose": { "x": 30., "y": 0. }, "tx_power": 10., "active_window": [0., None] }
    c = stpa.concretize(self._a1, "cpno_radar_only", slots)
    self.assertFalse(c.is_sweep)
    s = load_scenario(c.document)
    self.assertEqual([ a.id for a in s.attacks ], [ f"{self._a1.id}-A1" ])
    self.assertEqual(s.attacks[0].tx_power, 10.)

  def test_binding_errors(self):
    slots = { "frame": "ego", "attacker_pose": { "x": 30., "y": 0. }, "tx_power": 10., "active_window": [0., None] }
    with self.assertRaises(BindingError) as cm: stpa.concretize(self._a1, "cpno_radar_only", { "tx_power": 10. })
    self.assertIn("attacker_pose", str(cm.exception))
    with self.assertRaises(BindingError): stpa.concretize(self._a1, "cpno_radar_only", { **slots, "bogus": 1 })
    with self.assertRaises(BindingError): stpa.concretize(self.with_attack("A10"), "cpno", slots)
    with self.assertRaises(BindingError): stpa.concretize(self.with_attack("A8"), "cpno_radar_only", slots)


class TestCli(unittest.TestCase):

  @classmethod
  def setUpClass(cls):
    cls._data_root = tempfile.mkdtemp(prefix=f'aebsim_test_{hex(int(np.random.random()*1e8))[2:]}_')

  @classmethod
  def tearDownClass(cls):
    shutil.rmtree(cls._data_root)

  def main(self, *argv):
    with contextlib.redirect_stdout(io.StringIO()):
      return cli.main(list(argv))

  def test_exit_codes(self):
    self.assertEqual(cli.exit_code([ "Safe", "StoppedTooSoon" ]), cli.EXIT_OK)
    self.assertEqual(cli.exit_code([ "Safe", "Crash" ]), cli.EXIT_UNSAFE)
    self.assertEqual(cli.exit_code([ "ConstraintViolated" ]), cli.EXIT_UNSAFE)
    self.assertEqual(cli.exit_code([ "Crash", "ModelError" ]), cli.EXIT_MODEL_ERROR)

  def test_run(self):
    out = os.path.join(self._data_root, "runs")
    self.assertEqual(self.main("run", "--scenario", "cpno", "--out", out), 0)
    self.assertEqual(self.main("run", "--scenario", "cpno_jamming", "--out", out), 2)
    self.assertEqual(sorted(os.listdir(out)), [ "CPNO", "CPNO_jamming" ])
    with open(os.path.join(out, "CPNO_jamming", "verdict.json")) as f: v = json.load(f)
    self.assertEqual(v["verdict"]["outcome"], "Crash")
    self.assertIn("radar/pedestrian", v["detection_onsets"])

  def test_validate(self):
    self.assertEqual(self.main("scenario", "validate", "cpno"), 0)
    self.assertEqual(self.main("scenario", "validate", "jamming_sweep"), 0)
    bad = os.path.join(self._data_root, "bad.json")
    doc = read_document("cpno")
    doc["bogus"] = True
    with open(bad, 'w') as f: json.dump(doc, f)
    self.assertEqual(self.main("scenario", "validate", bad), 1)
    self.assertEqual(self.main("scenario", "validate", os.path.join(self._data_root, "missing.json")), 1)

  def test_stpa(self):
    out = os.path.join(self._data_root, "stpa")
    self.assertEqual(self.main("stpa", "analyze", "--out", out), 0)
    report = os.path.join(out, "stpa_report.json")
    with open(report) as f: counts = json.load(f)["counts"]
    self.assertEqual((counts["ucas"], counts["hazard_scenarios"], counts["templates"]), (21, 15, 102))
    self.assertTrue(os.path.isfile(os.path.join(out, "stpa_report.txt")))

    with open(report) as f: a1 = next(t["id"] for t in json.load(f)["templates"] if t["attack_types"][0]["id"] == "A1")
    sweep = os.path.join(out, "bound", "sweep.json")
    self.assertEqual(self.main("stpa", "concretize", "--template", report, "--id", a1,
                               "--scenario", "denial_jamming_binding", "--out", sweep), 0)
    self.assertEqual(load_sweep(sweep).shape, (6, 7))
    self.assertEqual(self.main("stpa", "concretize", "--template", report, "--id", "AS-9999",
                               "--scenario", "denial_jamming_binding", "--out", sweep), 1)


if __name__ == '__main__':
  unittest.main(exit=False)
