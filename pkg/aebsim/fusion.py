'''
Detection concatenation, M-of-N multi-object tracking and selection of
the most important object (MIO).

Tracks live in the ego polar frame. Position estimates are kept in
Cartesian ego coordinates (forward, left) so that smoothing moves an
estimate along a straight line towards the measurement.
'''

from aebsim._metadata import __version__ # noqa: F401

import copy
import enum
import math
import itertools
import collections
import dataclasses
from typing import Optional

from aebsim.helpers import config_defaults
from aebsim.sensors import Sensor


class TrackStatus(enum.Enum):
  Tentative = "Tentative"
  Confirmed = "Confirmed"
  Deleted = "Deleted"


@dataclasses.dataclass(frozen=True)
class TrackerConfig:
  m_confirm: int = 3
  n_window: int = 5
  gate_radius: float = 2.0
  miss_delete: Optional[int] = None # None = n_window
  smoothing: float = 0.5

  def __post_init__(self):
    assert 1 <= self.m_confirm <= self.n_window, f"Need 1 <= M <= N, got ({self.m_confirm}, {self.n_window})."
    assert self.gate_radius > 0, "gate_radius must be positive."
    assert 0 < self.smoothing <= 1, "smoothing must be in (0, 1]."
    assert self.miss_delete is None or self.miss_delete >= 1, "miss_delete must be >= 1."

  @property
  def deletion_misses(self): return self.n_window if self.miss_delete is None else self.miss_delete

DEFAULT_TRACKER_CONFIG = config_defaults(TrackerConfig())


class HitWindow:
  '''Sliding window of the last N hit/miss flags with an M-of-N
     confirmation latch.'''

  def __init__(self, m, n):
    self.m = m
    self._hits = collections.deque(maxlen=n)
    self.confirmed = False

  def push(self, hit):
    self._hits.append(bool(hit))
    if sum(self._hits) >= self.m: self.confirmed = True
    return self.confirmed

  def history(self): return tuple(self._hits)

  def consecutive_misses(self):
    return sum(1 for _ in itertools.takewhile(lambda h: not h, reversed(self._hits)))


@dataclasses.dataclass
class Track:
  id: int
  forward: float
  left: float
  range_rate: float
  hits: HitWindow
  status: TrackStatus
  last_update: float
  last_range: float
  class_label: Optional[str] = None
  misses: int = 0

  @property
  def range(self): return math.hypot(self.forward, self.left)

  @property
  def azimuth(self): return math.atan2(self.left, self.forward)

  @property
  def hit_history(self): return self.hits.history()

  def summary(self):
    return { "id": self.id, "status": self.status.value, "range": self.range,
             "azimuth": self.azimuth, "range_rate": self.range_rate,
             "class_label": self.class_label }


def polar_to_ego(range, azimuth):
  ''' (forward, left) of a polar measurement in the ego frame. '''
  return range*math.cos(azimuth), range*math.sin(azimuth)


def concatenate_detections(per_sensor, ego=None):
  '''Merge per-sensor detection lists into one list: radar first, then
     camera, then LiDAR, each by ascending range (then azimuth).

     per_sensor maps Sensor -> list of Detection. Detections are
     already in the ego polar frame, so no coordinate change is
     needed; ego is accepted for sensors mounted off the reference
     point, which none of the bundled ones are.
  '''
  order = [ Sensor.Radar, Sensor.Camera, Sensor.Lidar ]
  timestamps = { d.timestamp for dets in per_sensor.values() for d in dets }
  assert len(timestamps) <= 1, f"Detections from different frames: {sorted(timestamps)}"

  merged = []
  for s in order:
    merged.extend(sorted(per_sensor.get(s, []), key=lambda d: (d.range, d.azimuth)))
  return merged


def _detection_order(d):
  return ([ Sensor.Radar, Sensor.Camera, Sensor.Lidar ].index(d.sensor), d.range, d.azimuth)


def update_tracks(tracks, detections, cfg, now, id_source=None):
  '''One tracker period. Returns a new list of tracks; the inputs are
     not modified.

     Association is greedy nearest neighbour in the ego frame: all
     (track, detection) pairs within gate_radius are taken in order of
     increasing distance, ties going to the lower track id. Tracks that
     were already Deleted are dropped; tracks deleted in this period are
     returned once with status Deleted.
  '''
  tracks = [ copy.deepcopy(t) for t in tracks if t.status != TrackStatus.Deleted ]
  detections = sorted(detections, key=_detection_order)
  if id_source is None: id_source = itertools.count(max((t.id for t in tracks), default=0) + 1)

  det_xy = [ polar_to_ego(d.range, d.azimuth) for d in detections ]
  pairs = []
  for t in tracks:
    for j, (x, y) in enumerate(det_xy):
      dist = math.hypot(x - t.forward, y - t.left)
      if dist <= cfg.gate_radius: pairs.append((dist, t.id, j))
  pairs.sort()

  assigned_tracks, assigned_dets = {}, set()
  for _, tid, j in pairs:
    if tid in assigned_tracks or j in assigned_dets: continue
    assigned_tracks[tid] = j
    assigned_dets.add(j)

  b = cfg.smoothing
  for t in tracks:
    j = assigned_tracks.get(t.id)
    if j is None:
      t.hits.push(False)
      t.misses += 1
      if t.misses >= cfg.deletion_misses: t.status = TrackStatus.Deleted
      continue

    d = detections[j]
    x, y = det_xy[j]
    if d.range_rate is not None: rr = d.range_rate
    elif now > t.last_update: rr = (d.range - t.last_range) / (now - t.last_update)
    else: rr = t.range_rate

    t.forward = (1 - b)*t.forward + b*x
    t.left = (1 - b)*t.left + b*y
    t.range_rate = (1 - b)*t.range_rate + b*rr
    t.last_update, t.last_range, t.misses = now, d.range, 0
    if d.class_label is not None: t.class_label = d.class_label
    if t.hits.push(True): t.status = TrackStatus.Confirmed

  for j, d in enumerate(detections):
    if j in assigned_dets: continue
    hits = HitWindow(cfg.m_confirm, cfg.n_window)
    confirmed = hits.push(True)
    x, y = det_xy[j]
    tracks.append(Track(id=next(id_source), forward=x, left=y,
                        range_rate=d.range_rate if d.range_rate is not None else 0.,
                        hits=hits, status=TrackStatus.Confirmed if confirmed else TrackStatus.Tentative,
                        last_update=now, last_range=d.range, class_label=d.class_label))

  return tracks


def in_path(forward, left, lane_halfwidth):
  return forward > 0 and abs(left) <= lane_halfwidth


def select_mio(tracks, ego_lane_halfwidth):
  '''Nearest confirmed in-path track; ties go to the faster closing
     track, then to the lower id.'''
  candidates = [ t for t in tracks
                 if t.status == TrackStatus.Confirmed and in_path(t.forward, t.left, ego_lane_halfwidth) ]
  if len(candidates) == 0: return None
  return min(candidates, key=lambda t: (t.range, t.range_rate, t.id))
