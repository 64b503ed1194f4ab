'''
Verdict layer: the ground-truth (oracle) AEB channel, safety constraint
checks over run traces and outcome classification.
'''

from aebsim._metadata import __version__ # noqa: F401

import enum
import math
import logging
import dataclasses
from typing import Optional

from aebsim.aeb import AebStage, BrakeCommand, aeb_decide
from aebsim.fusion import Track, TrackStatus, HitWindow, polar_to_ego, select_mio
from aebsim.world import BodyKind, bodies_overlap, separation


class Outcome(enum.Enum):
  Safe = "Safe"
  Crash = "Crash"
  ConstraintViolated = "ConstraintViolated"
  StoppedTooSoon = "StoppedTooSoon"

# Most severe first; used for tie breaking in majority votes
SEVERITY = [ Outcome.Crash, Outcome.ConstraintViolated, Outcome.StoppedTooSoon, Outcome.Safe ]


@dataclasses.dataclass(frozen=True)
class SafetyConstraint:
  id: str
  description: str = ""
  trigger_distance: float = 18.
  max_latency: float = 0.2

  def __post_init__(self):
    assert self.trigger_distance > 0 and self.max_latency > 0, f"{self.id}: params must be positive."


@dataclasses.dataclass(frozen=True)
class ConstraintResult:
  constraint_id: str
  passed: bool
  violation_time: Optional[float] = None

  def _JSONEncoder(self): return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class TickRecord:
  tick: int
  world: object # WorldState
  detections: dict # Sensor -> list of Detection
  tracks: tuple # summaries of the confirmed tracks
  mio: Optional[dict]
  sensed: BrakeCommand
  oracle: BrakeCommand
  attacks: object # AttackRecord
  true_mio_range: Optional[float]
  min_separation: float
  overlap: Optional[str] # id of a body overlapping the ego

  @property
  def time(self): return self.world.time


@dataclasses.dataclass
class RunTrace:
  '''Append-only per-tick log of one run plus the parameters the
     verdict needs.'''
  scenario_name: str
  monitors: tuple = ()
  conflict_point: Optional[tuple] = None
  comfort_margin: float = 7.
  early_brake_tolerance: float = 0.5
  records: list = dataclasses.field(default_factory=list)
  terminated_by: Optional[str] = None

  def append(self, record):
    assert len(self.records) == 0 or record.time >= self.records[-1].time, "Trace records must be in time order."
    self.records.append(record)

  def __len__(self): return len(self.records)

  def first_brake_time(self, min_stage=AebStage.Partial1):
    return next((r.time for r in self.records if r.sensed.stage >= min_stage), None)


@dataclasses.dataclass(frozen=True)
class Verdict:
  outcome: Outcome
  violated_constraint: Optional[str] = None
  first_violation_time: Optional[float] = None
  min_separation: float = math.inf
  stop_position_margin: Optional[float] = None
  crash_time: Optional[float] = None
  first_brake_time: Optional[float] = None
  constraint_results: tuple = ()

  def __post_init__(self):
    assert self.outcome != Outcome.Crash or self.min_separation == 0, "A crash implies zero separation."

  def _JSONEncoder(self):
    d = dataclasses.asdict(self)
    d["outcome"] = self.outcome.value
    d["constraint_results"] = [ r._JSONEncoder() for r in self.constraint_results ]
    return d

  @classmethod
  def from_dict(cls, d):
    d = dict(d)
    d["outcome"] = Outcome(d["outcome"])
    d["constraint_results"] = tuple(ConstraintResult(**r) for r in d.get("constraint_results", []))
    return cls(**d)


########################################################################
# Ground truth helpers
########################################################################

def ego_geometry(world):
  '''(id of a body overlapping the ego or None, minimum separation to
     any body that is not an Obstruction).'''
  ego = world.ego
  overlap = next((b.id for b in world.others() if bodies_overlap(ego, b)), None)
  seps = [ separation(ego, b) for b in world.others() if b.kind != BodyKind.Obstruction ]
  return overlap, min(seps, default=math.inf)


def true_tracks(world):
  '''Confirmed tracks at the true position and range rate of every
     non-ego body, built with the same polar conversion the tracker
     uses.'''
  tracks = []
  for i, body in enumerate(world.others()):
    g = world.relative(body)
    fwd, left = polar_to_ego(g["range"], g["azimuth"])
    hits = HitWindow(1, 1)
    hits.push(True)
    tracks.append(Track(id=i, forward=fwd, left=left, range_rate=g["range_rate"], hits=hits,
                        status=TrackStatus.Confirmed, last_update=world.time, last_range=g["range"],
                        class_label=body.class_label))
  return tracks


def true_mio_range(world, lane_halfwidth=1.8):
  mio = select_mio(true_tracks(world), lane_halfwidth)
  return None if mio is None else mio.range


def oracle_decide(world, cfg, prev=BrakeCommand(), lane_halfwidth=1.8):
  ''' aeb_decide on the true nearest in-path body, ignoring occlusion and sensing. '''
  mio = select_mio(true_tracks(world), lane_halfwidth)
  return aeb_decide(mio, world.ego.speed, cfg, prev)


########################################################################
# Constraint checks
########################################################################

def check_sc1(trace, sc):
  '''SC1: when the nearest in-path object is within trigger_distance,
     the sensed channel must brake (Partial1 or stronger) within
     max_latency, or be standing still. A trace that ends inside the
     latency window while the ego is still moving and not braking
     fails.'''
  records = trace.records
  for i, r in enumerate(records):
    if r.true_mio_range is None or r.true_mio_range >= sc.trigger_distance: continue
    deadline = r.time + sc.max_latency + 1e-9
    # The full brake releases once the ego has stopped
    braked = any(q.sensed.stage >= AebStage.Partial1 or q.world.ego.speed == 0
                 for q in records[i:] if q.time <= deadline)
    if not braked:
      logging.debug(f"{sc.id} violated at t={r.time:.2f} s (range {r.true_mio_range:.2f} m).")
      return ConstraintResult(sc.id, False, r.time)
  return ConstraintResult(sc.id, True)


# Constraint id -> check(trace, constraint) -> ConstraintResult
CONSTRAINT_CHECKS = { "SC1": check_sc1 }

def register_constraint(constraint_id, check):
  CONSTRAINT_CHECKS[constraint_id] = check

def check_constraint(trace, sc):
  if sc.id not in CONSTRAINT_CHECKS:
    raise KeyError(f"No check registered for safety constraint '{sc.id}'.")
  return CONSTRAINT_CHECKS[sc.id](trace, sc)


########################################################################
# Verdict
########################################################################

def stop_position_margin(trace):
  ''' Distance from the ego's front face to the conflict point at the end of the run. '''
  if trace.conflict_point is None or len(trace) == 0: return None
  ego = trace.records[-1].world.ego
  fwd, _ = ego.pose.to_local(*trace.conflict_point)
  return fwd - ego.front_offset()


def oracle_quiet_until(trace, t):
  ''' True if the oracle stayed below Partial1 up to time t. '''
  return all(r.oracle.stage < AebStage.Partial1 for r in trace.records if r.time <= t + 1e-9)


def classify_outcome(trace):
  '''Crash if the ego ever overlapped a body; else ConstraintViolated if
     a registered constraint failed; else StoppedTooSoon if the ego
     stopped more than comfort_margin before the conflict point while
     the oracle had not yet braked; else Safe.'''
  assert len(trace) > 0, "Empty trace."
  results = tuple(check_constraint(trace, sc) for sc in trace.monitors)
  failures = sorted((r for r in results if not r.passed), key=lambda r: r.violation_time)
  first_failure = failures[0] if failures else None

  crash = next((r for r in trace.records if r.overlap is not None), None)
  min_sep = 0. if crash is not None else min(r.min_separation for r in trace.records)
  margin = stop_position_margin(trace)
  first_brake = trace.first_brake_time()

  common = dict(first_violation_time=first_failure.violation_time if first_failure else None,
                min_separation=min_sep, stop_position_margin=margin,
                first_brake_time=first_brake, constraint_results=results)

  if crash is not None:
    return Verdict(Outcome.Crash, crash_time=crash.time,
                   violated_constraint=first_failure.constraint_id if first_failure else None, **common)
  if first_failure is not None:
    return Verdict(Outcome.ConstraintViolated, violated_constraint=first_failure.constraint_id, **common)

  stopped = trace.records[-1].world.ego.speed == 0
  if stopped and margin is not None and margin > trace.comfort_margin and first_brake is not None \
     and oracle_quiet_until(trace, first_brake + trace.early_brake_tolerance):
    return Verdict(Outcome.StoppedTooSoon, **common)

  return Verdict(Outcome.Safe, **common)
