'''
Planar kinematic world: ego longitudinal dynamics, scripted actors,
occlusion geometry and the crash predicate.

World frame: +x forward along the ego lane, +y to the left, headings
in radians from +x. Bodies are axis-aligned rectangles in their own
frame (length along the heading, width across it).
'''

from aebsim._metadata import __version__ # noqa: F401

import enum
import math
import dataclasses
from functools import cached_property
from typing import Optional

import numpy as np
import shapely
from shapely.geometry import Polygon, Point

from aebsim.helpers import ModelError
from aebsim.aeb import BrakeCommand

# Number of line-of-sight samples across the near face of a target
VISIBILITY_SAMPLES = 5


class BodyKind(enum.Enum):
  EgoVehicle = "EgoVehicle"
  Car = "Car"
  Pedestrian = "Pedestrian"
  Cyclist = "Cyclist"
  Obstruction = "Obstruction"


@dataclasses.dataclass(frozen=True)
class Pose2:
  x: float
  y: float
  heading: float = 0.

  def is_finite(self): return all(math.isfinite(v) for v in (self.x, self.y, self.heading))

  def to_local(self, x, y):
    ''' (forward, left) coordinates of the world point (x, y) in this pose's frame. '''
    dx, dy = x - self.x, y - self.y
    c, s = math.cos(self.heading), math.sin(self.heading)
    return c*dx + s*dy, -s*dx + c*dy

  def to_world(self, forward, left):
    c, s = math.cos(self.heading), math.sin(self.heading)
    return self.x + c*forward - s*left, self.y + s*forward + c*left


@dataclasses.dataclass(frozen=True)
class Waypoint:
  t: float
  x: float
  y: float
  heading: Optional[float] = None


@dataclasses.dataclass(frozen=True)
class Trajectory:
  '''Piecewise-linear scripted motion. The body holds still before the
     first and after the last waypoint.'''
  waypoints: tuple

  def __post_init__(self):
    assert len(self.waypoints) > 0, "A trajectory needs at least one waypoint."
    assert all(a.t < b.t for a, b in zip(self.waypoints[:-1], self.waypoints[1:])), "Waypoint times must increase strictly."

  def state_at(self, t):
    ''' Returns (Pose2, (vx, vy)) at time t. '''
    wps = self.waypoints
    if t < wps[0].t or len(wps) == 1 or t >= wps[-1].t:
      w = wps[0] if t < wps[0].t else wps[-1]
      return Pose2(w.x, w.y, w.heading if w.heading is not None else self._default_heading()), (0., 0.)

    i = max(j for j in range(len(wps) - 1) if wps[j].t <= t)
    a, b = wps[i], wps[i+1]
    f = (t - a.t) / (b.t - a.t)
    vx, vy = (b.x - a.x) / (b.t - a.t), (b.y - a.y) / (b.t - a.t)
    heading = a.heading if a.heading is not None else (math.atan2(vy, vx) if (vx, vy) != (0., 0.) else self._default_heading())
    return Pose2(a.x + f*(b.x - a.x), a.y + f*(b.y - a.y), heading), (vx, vy)

  def _default_heading(self):
    for a, b in zip(self.waypoints[:-1], self.waypoints[1:]):
      if (a.x, a.y) != (b.x, b.y): return math.atan2(b.y - a.y, b.x - a.x)
    return 0.


@dataclasses.dataclass(frozen=True)
class Body:
  id: str
  kind: BodyKind
  pose: Pose2
  velocity: tuple = (0., 0.)
  extent: tuple = (4.5, 1.8) # length, width
  radar_cross_section: float = 1.
  trajectory: Optional[Trajectory] = None

  def __post_init__(self):
    assert self.radar_cross_section >= 0, f"Body {self.id}: radar_cross_section must be >= 0."
    assert all(e >= 0 for e in self.extent), f"Body {self.id}: extent must be non-negative."

  @property
  def speed(self): return math.hypot(*self.velocity)

  @property
  def class_label(self):
    return { BodyKind.Car: "Car", BodyKind.Pedestrian: "Pedestrian",
             BodyKind.Cyclist: "Cyclist" }.get(self.kind, "Unknown")

  def corners(self):
    l, w = self.extent[0]/2, self.extent[1]/2
    return [ self.pose.to_world(f, s) for f, s in ((l, w), (-l, w), (-l, -w), (l, -w)) ]

  @cached_property
  def polygon(self):
    if self.extent[0] == 0 and self.extent[1] == 0: return Point(self.pose.x, self.pose.y)
    return Polygon(self.corners())

  def front_offset(self):
    ''' Distance from the reference point to the front face. '''
    return self.extent[0] / 2


@dataclasses.dataclass(frozen=True)
class WorldState:
  time: float
  bodies: tuple
  ego_id: str
  ego_command: BrakeCommand = BrakeCommand()
  visibility_samples: int = VISIBILITY_SAMPLES

  def __post_init__(self):
    assert sum(b.id == self.ego_id for b in self.bodies) == 1, f"Exactly one body must have id '{self.ego_id}'."

  @property
  def ego(self): return next(b for b in self.bodies if b.id == self.ego_id)

  def others(self): return [ b for b in self.bodies if b.id != self.ego_id ]

  def body(self, body_id): return next(b for b in self.bodies if b.id == body_id)

  @cached_property
  def visibility(self):
    ''' visible_fraction of every non-ego body, seen from the ego reference point. '''
    others = self.others()
    return { b.id: visible_fraction(self.ego.pose, b, [ o for o in others if o.id != b.id ], self.visibility_samples)
             for b in others }

  def relative(self, body):
    '''Range, azimuth and range rate of body seen from the ego
       reference point, plus its (forward, left) position in the ego frame.'''
    return relative_geometry(self.ego, body)

  def is_finite(self):
    return math.isfinite(self.time) and all(
      b.pose.is_finite() and all(math.isfinite(v) for v in b.velocity) for b in self.bodies)


def relative_geometry(ego, body):
  forward, left = ego.pose.to_local(body.pose.x, body.pose.y)
  rng = math.hypot(forward, left)
  az = math.atan2(left, forward)
  rvx, rvy = body.velocity[0] - ego.velocity[0], body.velocity[1] - ego.velocity[1]
  dx, dy = body.pose.x - ego.pose.x, body.pose.y - ego.pose.y
  range_rate = (dx*rvx + dy*rvy) / rng if rng > 0 else 0.
  return { "range": rng, "azimuth": az, "range_rate": range_rate,
           "forward": forward, "left": left }


def step_world(state, dt):
  '''Advance the world by dt seconds.

     The ego decelerates by its commanded deceleration (speed clamped
     at zero, exact stopping distance within the final step) and
     moves along its heading using trapezoidal integration. Scripted
     actors follow their trajectories; the others keep constant
     velocity.
  '''
  assert dt > 0, "dt must be positive."
  t = state.time + dt
  a = state.ego_command.decel

  new_bodies = []
  for b in state.bodies:
    if b.id == state.ego_id:
      v = b.speed
      v_new = max(0., v - a*dt)
      dist = v*v / (2*a) if (a > 0 and v - a*dt < 0) else (v + v_new)/2*dt
      x, y = b.pose.to_world(dist, 0.)
      c, s = math.cos(b.pose.heading), math.sin(b.pose.heading)
      new_bodies.append(dataclasses.replace(b, pose=Pose2(x, y, b.pose.heading), velocity=(v_new*c, v_new*s)))
    elif b.trajectory is not None:
      pose, vel = b.trajectory.state_at(t)
      new_bodies.append(dataclasses.replace(b, pose=pose, velocity=vel))
    elif b.velocity != (0., 0.):
      new_bodies.append(dataclasses.replace(b, pose=Pose2(b.pose.x + b.velocity[0]*dt,
                                                          b.pose.y + b.velocity[1]*dt,
                                                          b.pose.heading)))
    else:
      new_bodies.append(b)

  new_state = WorldState(time=t, bodies=tuple(new_bodies), ego_id=state.ego_id,
                         ego_command=state.ego_command, visibility_samples=state.visibility_samples)
  if not new_state.is_finite(): raise ModelError(f"Non-finite world state at t={t}.")
  return new_state


def near_face_points(observer, target, samples=VISIBILITY_SAMPLES):
  '''Sample points across the face of target that faces the observer:
     a segment perpendicular to the line of sight, at the target's
     nearest depth, spanning its projected width.'''
  cx, cy = target.pose.x, target.pose.y
  d = math.hypot(cx - observer.x, cy - observer.y)
  if d == 0 or (target.extent[0] == 0 and target.extent[1] == 0) or samples == 1:
    return np.array([[cx, cy]])

  ux, uy = (cx - observer.x)/d, (cy - observer.y)/d
  nx, ny = -uy, ux
  corners = np.array(target.corners()) - [cx, cy]
  depth = (corners @ [ux, uy]).min()
  across = corners @ [nx, ny]
  offsets = np.linspace(across.min(), across.max(), samples)
  return np.array([ [cx + ux*depth + nx*o, cy + uy*depth + ny*o] for o in offsets ])


def visible_fraction(observer, target, occluders, samples=VISIBILITY_SAMPLES):
  '''Fraction of sample points on the target's near face with an
     unobstructed line of sight from observer (a Pose2). Touching an
     occluder counts as blocked.'''
  assert all(o.id != target.id for o in occluders), "The target cannot occlude itself."
  points = near_face_points(observer, target, samples)
  if len(occluders) == 0: return 1.

  lines = shapely.linestrings([ [[observer.x, observer.y], list(p)] for p in points ])
  polys = np.array([ o.polygon for o in occluders ], dtype=object)
  blocked = shapely.intersects(lines[:, None], polys[None, :]).any(axis=1)
  return float((~blocked).sum()) / len(points)


def bodies_overlap(a, b):
  ''' True iff the closed rectangles of a and b intersect. '''
  return bool(a.polygon.intersects(b.polygon))


def separation(a, b):
  ''' Plan-view distance between the rectangles (0 when they overlap). '''
  return float(a.polygon.distance(b.polygon))
