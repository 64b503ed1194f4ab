'''
Sensor models producing Detection lists from a WorldState.

  * Radar: monostatic power budget per range bin, exponential noise,
    cell-averaging CFAR.
  * Camera: geometric detector with a range dependent detection
    probability and class labels.
  * LiDAR: ray-cast sector scanner whose returns are clustered into
    detections.

Each model takes an Interference (see aebsim.attacks) describing what
attackers do to it during the current frame.
'''

from aebsim._metadata import __version__ # noqa: F401

import enum
import math
import dataclasses
from typing import Optional

import numpy as np
import shapely
from shapely.geometry import Point

from aebsim.helpers import config_defaults


class Sensor(enum.Enum):
  Radar = "Radar"
  Camera = "Camera"
  Lidar = "Lidar"

  @property
  def key(self): return self.value.lower()


@dataclasses.dataclass(frozen=True)
class Detection:
  sensor: Sensor
  range: float
  azimuth: float
  range_rate: Optional[float] = None
  class_label: Optional[str] = None
  snr: Optional[float] = None
  timestamp: float = 0.
  source: Optional[str] = None # Ground-truth attribution: body id, "ghost:<attack id>" or None for noise

  def __post_init__(self):
    assert self.range >= 0, f"Negative detection range {self.range}."

  def _JSONEncoder(self): return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class Interference:
  extra_noise: float = -math.inf # dBm, summed with the radar noise floor in linear units
  ghost_detections: tuple = ()
  suppressed_classes: frozenset = frozenset()
  blinded_sectors: tuple = ()

  def is_identity(self):
    return self.extra_noise == -math.inf and len(self.ghost_detections) == 0 \
      and len(self.suppressed_classes) == 0 and len(self.blinded_sectors) == 0

NO_INTERFERENCE = Interference()


def dbm_to_mw(p): return 10**(np.asarray(p, dtype=float)/10)

def mw_to_dbm(p):
  with np.errstate(divide='ignore'): return 10*np.log10(p)

def power_sum_dbm(*powers):
  ''' Sum of powers given in dBm, in linear units. -inf entries contribute nothing. '''
  return float(mw_to_dbm(np.sum([ dbm_to_mw(p) for p in powers ])))


########################################################################
# Radar
########################################################################

@dataclasses.dataclass(frozen=True)
class CfarConfig:
  num_train: int = 8
  num_guard: int = 2
  pfa: float = 1e-4

  def __post_init__(self):
    assert self.num_train >= 1, "num_train must be >= 1."
    assert self.num_guard >= 0, "num_guard must be >= 0."
    assert 0 < self.pfa < 1, "pfa must be in (0, 1)."

  @property
  def alpha(self):
    ''' CA-CFAR threshold factor for 2*num_train exponential training cells. '''
    n = 2*self.num_train
    return n*(self.pfa**(-1/n) - 1)


@dataclasses.dataclass(frozen=True)
class RadarConfig:
  tx_power: float = 10.
  antenna_gain: float = 20.
  wavelength: float = 0.0039
  max_range: float = 100.
  range_bin_width: float = 0.5
  noise_floor: float = -125.
  fov: float = 0.7
  range_rate_sigma: float = 0.1
  range_refinement: bool = False
  cfar: CfarConfig = CfarConfig()

  def __post_init__(self):
    assert self.max_range > 0, "max_range must be positive."
    assert self.range_bin_width > 0, "range_bin_width must be positive."
    assert self.wavelength > 0, "wavelength must be positive."

  @classmethod
  def from_dict(cls, d):
    d = dict(d)
    cfar = CfarConfig(**d.pop("cfar")) if "cfar" in d else CfarConfig()
    return cls(**d, cfar=cfar)

  @property
  def num_bins(self): return math.ceil(self.max_range / self.range_bin_width)

  def bin_of(self, range): return int(range // self.range_bin_width)

  def bin_center(self, i): return (i + 0.5)*self.range_bin_width

  def in_fov(self, azimuth): return abs(azimuth) <= self.fov/2

DEFAULT_RADAR_CONFIG = config_defaults(RadarConfig())


def radar_received_power(cfg, target_range, rcs):
  ''' Monostatic radar equation, in dBm. Ranges below 0.5 m are clamped. '''
  assert target_range > 0, "target_range must be positive."
  if rcs == 0: return -math.inf
  r = max(0.5, target_range)
  return cfg.tx_power + 2*cfg.antenna_gain \
    + 10*math.log10(cfg.wavelength**2 * rcs / ((4*math.pi)**3 * r**4))


def _radar_returns(world, cfg):
  ''' [(bin, body, geometry, visible fraction)] for bodies the radar can see. '''
  returns = []
  for body in world.others():
    g = world.relative(body)
    if g["range"] <= 0 or g["range"] >= cfg.max_range or not cfg.in_fov(g["azimuth"]): continue
    frac = world.visibility[body.id]
    if frac > 0 and body.radar_cross_section > 0:
      returns.append((cfg.bin_of(g["range"]), body, g, frac))
  return returns


def _ghost_bins(cfg, interference):
  ghosts = {}
  for d in interference.ghost_detections:
    if d.sensor != Sensor.Radar or d.range >= cfg.max_range: continue
    ghosts.setdefault(cfg.bin_of(d.range), d)
  return ghosts


def build_power_profile(world, cfg, interference, rng):
  '''Received power per range bin (dBm): exponential noise around the
     (possibly jammed) floor, plus the return of every visible in-FOV
     body scaled by its visible fraction, plus radar ghosts.'''
  noise_mw = float(dbm_to_mw(cfg.noise_floor) + dbm_to_mw(interference.extra_noise))
  p = rng.exponential(noise_mw, cfg.num_bins)

  for i, body, g, frac in _radar_returns(world, cfg):
    p[i] += frac*dbm_to_mw(radar_received_power(cfg, g["range"], body.radar_cross_section))

  for i, d in _ghost_bins(cfg, interference).items():
    p[i] += dbm_to_mw(cfg.noise_floor + d.snr)

  return mw_to_dbm(p)


def cfar_detect(profile, cfar):
  '''Cell-averaging CFAR over a power profile given in dBm. Returns the
     indices of detected cells.

     Interior cells average num_train cells on each side, outside
     num_guard guard cells. Cells too close to an edge for a full
     window on one side use 2*num_train cells on the other side.
  '''
  p = dbm_to_mw(profile)
  n, T, G = len(p), cfar.num_train, cfar.num_guard
  assert n > 2*(T + G), f"Profile too short ({n} cells) for {T} training and {G} guard cells per side."

  c = np.concatenate([[0.], np.cumsum(p)])
  def window_sum(lo, hi): return c[np.clip(hi, 0, n)] - c[np.clip(lo, 0, n)]

  i = np.arange(n)
  lead_ok = i - G - T >= 0
  lag_ok = i + G + T < n

  noise = (window_sum(i - G - T, i - G) + window_sum(i + G + 1, i + G + T + 1)) / (2*T)

  # One-sided windows near the edges
  lo, hi = i + G + 1, np.minimum(n, i + G + 1 + 2*T)
  noise = np.where(~lead_ok & lag_ok, window_sum(lo, hi) / np.maximum(1, hi - lo), noise)
  lo, hi = np.maximum(0, i - G - 2*T), i - G
  noise = np.where(lead_ok & ~lag_ok, window_sum(lo, hi) / np.maximum(1, hi - lo), noise)

  # Neither side fits: everything outside the guard cells
  both_short = ~lead_ok & ~lag_ok
  if both_short.any():
    outside = window_sum(0, i - G) + window_sum(i + G + 1, n)
    count = np.maximum(0, i - G) + np.maximum(0, n - (i + G + 1))
    noise = np.where(both_short, outside / np.maximum(1, count), noise)

  return np.flatnonzero(p > cfar.alpha*noise).tolist()


def radar_sense(world, cfg, interference, rng):
  '''Detections of one radar frame. A detected bin holding a body reports
     the nearest such body (range = bin center, or the body's true range
     with range_refinement). A radar ghost in a detected bin adds its own
     detection, next to the body's if the bin holds one. Any other
     detected bin is a false alarm with a random in-FOV azimuth and a
     stationary-clutter range rate.'''
  profile = build_power_profile(world, cfg, interference, rng)
  bins = cfar_detect(profile, cfg.cfar)

  returns = {}
  for i, body, g, frac in sorted(_radar_returns(world, cfg), key=lambda r: r[2]["range"]):
    returns.setdefault(i, (body, g))
  ghosts = _ghost_bins(cfg, interference)

  noise_db = float(mw_to_dbm(dbm_to_mw(cfg.noise_floor) + dbm_to_mw(interference.extra_noise)))
  ego_speed = world.ego.speed
  dets = []
  for i in bins:
    snr = float(profile[i]) - noise_db
    if i in returns:
      body, g = returns[i]
      dets.append(Detection(Sensor.Radar, g["range"] if cfg.range_refinement else cfg.bin_center(i), g["azimuth"],
                            range_rate=g["range_rate"] + cfg.range_rate_sigma*rng.standard_normal(),
                            snr=snr, timestamp=world.time, source=body.id))
    if i in ghosts:
      g = ghosts[i]
      dets.append(Detection(Sensor.Radar, g.range if cfg.range_refinement else cfg.bin_center(i), g.azimuth,
                            range_rate=g.range_rate, snr=snr, timestamp=world.time, source=g.source))
    if i not in returns and i not in ghosts:
      az = rng.uniform(-cfg.fov/2, cfg.fov/2)
      dets.append(Detection(Sensor.Radar, cfg.bin_center(i), az,
                            range_rate=-ego_speed*math.cos(az) + cfg.range_rate_sigma*rng.standard_normal(),
                            snr=snr, timestamp=world.time))
  return dets


########################################################################
# Camera
########################################################################

@dataclasses.dataclass(frozen=True)
class CameraConfig:
  fov: float = 1.0
  max_range: float = 80.
  p_detect: tuple = ((0., 1.0), (40., 0.95), (60., 0.6), (80., 0.))
  min_visible_fraction: float = 0.5

  def __post_init__(self):
    assert self.max_range > 0, "max_range must be positive."
    assert all(0 <= p <= 1 for _, p in self.p_detect), "p_detect values must be probabilities."
    assert all(a[0] < b[0] for a, b in zip(self.p_detect[:-1], self.p_detect[1:])), "p_detect ranges must increase."

  @classmethod
  def from_dict(cls, d):
    d = dict(d)
    p_detect = tuple(tuple(p) for p in d.pop("p_detect", cls.p_detect))
    return cls(**d, p_detect=p_detect)

  def detection_probability(self, range):
    r, p = zip(*self.p_detect)
    return float(np.interp(range, r, p, right=0.))

DEFAULT_CAMERA_CONFIG = config_defaults(CameraConfig())


def camera_sense(world, cam_cfg, interference, rng):
  '''Classed detections of one camera frame. Bodies within FOV and
     max_range that are at least min_visible_fraction visible are
     detected with probability p_detect(range) * visible fraction.
     Classes suppressed by an adversarial patch are dropped after the
     draw, so the random stream does not depend on the attack.'''
  dets = []
  for body in world.others():
    g = world.relative(body)
    if abs(g["azimuth"]) > cam_cfg.fov/2 or g["range"] > cam_cfg.max_range: continue
    frac = world.visibility[body.id]
    if frac < cam_cfg.min_visible_fraction: continue

    detected = rng.random() < cam_cfg.detection_probability(g["range"])*frac
    if not detected or body.class_label in interference.suppressed_classes: continue
    dets.append(Detection(Sensor.Camera, g["range"], g["azimuth"], class_label=body.class_label,
                          timestamp=world.time, source=body.id))
  return dets


########################################################################
# LiDAR
########################################################################

@dataclasses.dataclass(frozen=True)
class LidarConfig:
  fov: float = 2.0944
  angular_resolution: float = 0.0087266 # 0.5 deg
  max_range: float = 80.
  cluster_gap: float = 1.0 # max range jump between adjacent rays of one cluster

  def __post_init__(self):
    assert self.max_range > 0, "max_range must be positive."
    assert self.angular_resolution > 0, "angular_resolution must be positive."

  @classmethod
  def from_dict(cls, d): return cls(**d)

  def ray_azimuths(self):
    n = int(math.floor(self.fov / self.angular_resolution + 1e-9))
    return -self.fov/2 + self.angular_resolution*np.arange(n + 1)

DEFAULT_LIDAR_CONFIG = config_defaults(LidarConfig())


def lidar_scan(world, lidar_cfg, interference):
  '''Per-ray first-hit range (inf for no return) and hit body index into
     world.others(). Rays in blinded sectors and hits on bodies with no
     visible fraction return nothing.'''
  ego = world.ego
  az = lidar_cfg.ray_azimuths()
  others = world.others()
  ranges = np.full(len(az), np.inf)
  hit_body = np.full(len(az), -1)
  if len(others) == 0: return az, ranges, hit_body

  ends = [ ego.pose.to_world(lidar_cfg.max_range*math.cos(a), lidar_cfg.max_range*math.sin(a)) for a in az ]
  rays = shapely.linestrings([ [[ego.pose.x, ego.pose.y], list(e)] for e in ends ])
  polys = np.array([ b.polygon for b in others ], dtype=object)

  hits = shapely.intersection(rays[:, None], polys[None, :])
  d = shapely.distance(Point(ego.pose.x, ego.pose.y), hits)
  d = np.where(np.isnan(d), np.inf, d)
  visible = np.array([ world.visibility[b.id] > 0 for b in others ])
  d[:, ~visible] = np.inf

  hit_body = np.where(np.isfinite(d.min(axis=1)), d.argmin(axis=1), -1)
  ranges = d.min(axis=1)

  blinded = np.zeros(len(az), dtype=bool)
  for lo, hi in interference.blinded_sectors: blinded |= (az >= lo) & (az <= hi)
  ranges[blinded] = np.inf
  hit_body[blinded] = -1
  return az, ranges, hit_body


def lidar_sense(world, lidar_cfg, interference):
  '''Detections of one LiDAR sweep: runs of adjacent rays with returns
     whose ranges differ by at most cluster_gap, reported at the
     centroid of their hit points.'''
  az, ranges, hit_body = lidar_scan(world, lidar_cfg, interference)
  others = world.others()

  clusters, current = [], []
  for i in range(len(az)):
    if not np.isfinite(ranges[i]) or ranges[i] > lidar_cfg.max_range:
      if current: clusters.append(current)
      current = []
      continue
    if current and abs(ranges[i] - ranges[current[-1]]) > lidar_cfg.cluster_gap:
      clusters.append(current)
      current = []
    current.append(i)
  if current: clusters.append(current)

  dets = []
  for c in clusters:
    fwd = float(np.mean(ranges[c]*np.cos(az[c])))
    left = float(np.mean(ranges[c]*np.sin(az[c])))
    ids, counts = np.unique(hit_body[c], return_counts=True)
    dets.append(Detection(Sensor.Lidar, math.hypot(fwd, left), math.atan2(left, fwd),
                          class_label="Unknown", timestamp=world.time,
                          source=others[int(ids[counts.argmax()])].id))
  return dets
