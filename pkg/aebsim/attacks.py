'''
Attack model: turns the scheduled AttackSpecs and the current world
geometry into the Interference seen by each sensor.
'''

from aebsim._metadata import __version__ # noqa: F401

import enum
import math
import dataclasses
from typing import Optional

from aebsim.world import Pose2
from aebsim.sensors import Sensor, Detection, Interference, power_sum_dbm
from aebsim.fusion import in_path


class AttackKind(enum.Enum):
  RadarDenialJamming = "RadarDenialJamming"
  RadarRangeDeception = "RadarRangeDeception"
  RadarVelocityDeception = "RadarVelocityDeception"
  CameraAdversarialPatch = "CameraAdversarialPatch"
  LidarBlinding = "LidarBlinding"

  @property
  def sensor(self):
    if self is AttackKind.CameraAdversarialPatch: return Sensor.Camera
    if self is AttackKind.LidarBlinding: return Sensor.Lidar
    return Sensor.Radar


class AttackerFrame(enum.Enum):
  World = "world" # attacker_pose is a fixed world point
  Ego = "ego"     # attacker_pose is an offset (forward, left) from the ego reference point


@dataclasses.dataclass(frozen=True)
class AttackSpec:
  id: str
  kind: AttackKind
  attacker_pose: Pose2 = Pose2(0., 0.)
  frame: AttackerFrame = AttackerFrame.World
  tx_power: float = 10. # dBm
  antenna_gain: float = 3. # dBi
  spoof_range_offset: float = 0.
  spoof_velocity: float = 0. # reported range rate, negative = closing
  patch_classes: frozenset = frozenset()
  patch_target: Optional[str] = None # body carrying the patch; attacker_pose if None
  sector: tuple = (0., 0.)
  active_window: tuple = (0., math.inf)

  def __post_init__(self):
    assert self.active_window[0] <= self.active_window[1], f"Attack {self.id}: t_start must be <= t_end."
    assert not math.isnan(self.tx_power) and self.tx_power != math.inf, f"Attack {self.id}: tx_power must be finite or -inf."
    assert self.sector[0] <= self.sector[1], f"Attack {self.id}: sector must be [azimuth_lo, azimuth_hi]."

  @classmethod
  def from_dict(cls, d):
    d = dict(d)
    kw = { "id": d.pop("id"), "kind": AttackKind(d.pop("kind")) }
    if "attacker_pose" in d: kw["attacker_pose"] = Pose2(**d.pop("attacker_pose"))
    if "frame" in d: kw["frame"] = AttackerFrame(d.pop("frame"))
    if "patch_classes" in d: kw["patch_classes"] = frozenset(d.pop("patch_classes"))
    if "sector" in d: kw["sector"] = tuple(d.pop("sector"))
    if "active_window" in d:
      t0, t1 = d.pop("active_window")
      kw["active_window"] = (t0, math.inf if t1 is None else t1)
    return cls(**kw, **d)

  @property
  def sensor(self): return self.kind.sensor

  def is_active(self, t): return self.active_window[0] <= t <= self.active_window[1]

  def position(self, ego_pose):
    ''' World position of the attacker. '''
    if self.frame is AttackerFrame.Ego:
      return ego_pose.to_world(self.attacker_pose.x, self.attacker_pose.y)
    return self.attacker_pose.x, self.attacker_pose.y


@dataclasses.dataclass(frozen=True)
class AttackRecord:
  ''' What the attack layer did during one tick. '''
  time: float
  active: tuple = ()
  extra_noise: float = -math.inf
  ghosts: int = 0
  suppressed_classes: tuple = ()
  blinded_sectors: tuple = ()

  def _JSONEncoder(self): return dataclasses.asdict(self)


def jammer_power_at_receiver(spec, ego_pose, cfg):
  '''One-way link budget from the attacker to the victim radar, in
     dBm. Distances below 0.5 m are clamped.'''
  assert spec.sensor == Sensor.Radar, f"Attack {spec.id} ({spec.kind.value}) does not transmit to the radar."
  if spec.tx_power == -math.inf: return -math.inf
  x, y = spec.position(ego_pose)
  d = max(0.5, math.hypot(x - ego_pose.x, y - ego_pose.y))
  return spec.tx_power + spec.antenna_gain + cfg.antenna_gain \
    + 10*math.log10(cfg.wavelength**2 / ((4*math.pi)**2 * d**2))


def true_mio(world, lane_halfwidth):
  ''' Nearest in-path body ahead of the ego, with its relative geometry, or (None, None). '''
  best = (None, None)
  for body in world.others():
    g = world.relative(body)
    if in_path(g["forward"], g["left"], lane_halfwidth) and (best[1] is None or g["range"] < best[1]["range"]):
      best = (body, g)
  return best


def deception_ghost(s, world, cfg, lane_halfwidth):
  '''Radar ghost of a range or velocity deception attack, or None.

     With an in-path object the ghost copies its azimuth: range
     deception shifts its range by spoof_range_offset, velocity
     deception reports spoof_velocity at its true range. In an empty
     lane the ghost is a phantom straight ahead at spoof_range_offset
     from the ego (none if that is not positive), stationary for range
     deception.
  '''
  ego = world.ego
  body, g = true_mio(world, lane_halfwidth)
  if body is None:
    if s.spoof_range_offset <= 0: return None
    g = { "range": 0., "azimuth": 0., "range_rate": -ego.speed }

  if s.kind is AttackKind.RadarRangeDeception:
    ghost_range, rr = g["range"] + s.spoof_range_offset, g["range_rate"]
  elif body is None:
    ghost_range, rr = s.spoof_range_offset, s.spoof_velocity
  else:
    ghost_range, rr = g["range"], s.spoof_velocity

  snr = jammer_power_at_receiver(s, ego.pose, cfg) - cfg.noise_floor
  return Detection(Sensor.Radar, min(cfg.max_range, max(0., ghost_range)), g["azimuth"], range_rate=rr, snr=snr,
                   timestamp=world.time, source=f"ghost:{s.id}")


def compile_interference(specs, world, cfgs, lane_halfwidth=1.8):
  '''Interference for the current frame from all attacks active at
     world.time. cfgs maps Sensor -> sensor config for the sensors the
     ego carries.

     Returns a single Interference whose fields each address one sensor
     (extra_noise and ghosts the radar, suppressed_classes the camera,
     blinded_sectors the LiDAR).
  '''
  jam, ghosts, suppressed, sectors = [], [], set(), []
  ego = world.ego

  for s in specs:
    if not s.is_active(world.time): continue
    assert s.sensor in cfgs, f"Attack {s.id} targets {s.sensor.value}, which the ego does not carry."
    cfg = cfgs[s.sensor]

    if s.kind is AttackKind.RadarDenialJamming:
      jam.append(jammer_power_at_receiver(s, ego.pose, cfg))

    elif s.kind in (AttackKind.RadarRangeDeception, AttackKind.RadarVelocityDeception):
      ghost = deception_ghost(s, world, cfg, lane_halfwidth)
      if ghost is not None: ghosts.append(ghost)

    elif s.kind is AttackKind.CameraAdversarialPatch:
      if s.patch_target is not None:
        target = world.body(s.patch_target)
        x, y = target.pose.x, target.pose.y
      else:
        x, y = s.position(ego.pose)
      fwd, left = ego.pose.to_local(x, y)
      if abs(math.atan2(left, fwd)) <= cfg.fov/2 and math.hypot(fwd, left) <= cfg.max_range:
        suppressed.update(s.patch_classes)

    elif s.kind is AttackKind.LidarBlinding:
      sectors.append(tuple(s.sector))

  return Interference(extra_noise=power_sum_dbm(*jam) if jam else -math.inf,
                      ghost_detections=tuple(ghosts),
                      suppressed_classes=frozenset(suppressed),
                      blinded_sectors=tuple(sectors))


def attack_record(specs, world, interference):
  return AttackRecord(time=world.time,
                      active=tuple(s.id for s in specs if s.is_active(world.time)),
                      extra_noise=interference.extra_noise,
                      ghosts=len(interference.ghost_detections),
                      suppressed_classes=tuple(sorted(interference.suppressed_classes)),
                      blinded_sectors=interference.blinded_sectors)
