'''
Staged AEB controller: time to collision from the most important
object, forward collision warning, two partial braking stages and a
latching full brake.
'''

from aebsim._metadata import __version__ # noqa: F401

import enum
import dataclasses

from aebsim.helpers import config_defaults


class AebStage(enum.IntEnum):
  '''Ordered so that max() picks the stronger stage. Serialized by
     name ("None", "FCW", ...).'''
  NONE = 0
  FCW = 1
  Partial1 = 2
  Partial2 = 3
  Full = 4

  @property
  def label(self): return "None" if self is AebStage.NONE else self.name

  @classmethod
  def from_label(cls, label): return cls.NONE if label == "None" else cls[label]

  def _JSONEncoder(self): return self.label


@dataclasses.dataclass(frozen=True)
class BrakeCommand:
  stage: AebStage = AebStage.NONE
  decel: float = 0.

  def __post_init__(self):
    assert (self.decel == 0) == (self.stage <= AebStage.FCW), \
      f"decel must be zero exactly for stages None and FCW (got {self.stage.label}, {self.decel})."

  def _JSONEncoder(self): return { "stage": self.stage.label, "decel": self.decel }


@dataclasses.dataclass(frozen=True)
class AebConfig:
  enabled: bool = True
  fcw_reaction_time: float = 1.2
  partial1_decel: float = 3.8
  partial2_decel: float = 5.3
  full_decel: float = 9.8
  headway_offset: float = 3.7
  ttc_scale: tuple = (("fcw", 1.2), ("p1", 1.0), ("p2", 0.8), ("full", 0.6))

  def __post_init__(self):
    assert 0 < self.partial1_decel <= self.partial2_decel <= self.full_decel, \
      "Decelerations must satisfy 0 < partial1 <= partial2 <= full."
    scales = [ v for _, v in self.ttc_scale ]
    assert all(a > b for a, b in zip(scales[:-1], scales[1:])), "ttc_scale multipliers must decrease strictly across stages."

  @classmethod
  def from_dict(cls, d):
    d = dict(d)
    scale = { **dict(cls.ttc_scale), **d.pop("ttc_scale", {}) }
    return cls(**d, ttc_scale=tuple((k, scale[k]) for k in ("fcw", "p1", "p2", "full")))

  def to_dict(self):
    ''' Inverse of from_dict(). '''
    d = config_defaults(self)
    d["ttc_scale"] = dict(self.ttc_scale)
    return d

  def stage_decel(self, stage):
    return { AebStage.Partial1: self.partial1_decel,
             AebStage.Partial2: self.partial2_decel,
             AebStage.Full: self.full_decel }.get(stage, 0.)

  def thresholds(self, ego_speed):
    ''' TTC thresholds (s) per stage, weakest stage first. '''
    scale = dict(self.ttc_scale)
    return [
      (AebStage.FCW, scale["fcw"]*stopping_time(ego_speed, self.full_decel) + self.fcw_reaction_time),
      (AebStage.Partial1, scale["p1"]*stopping_time(ego_speed, self.partial1_decel)),
      (AebStage.Partial2, scale["p2"]*stopping_time(ego_speed, self.partial2_decel)),
      (AebStage.Full, scale["full"]*stopping_time(ego_speed, self.full_decel)),
    ]

DEFAULT_AEB_CONFIG = AebConfig().to_dict()


def compute_ttc(range, closing_speed):
  assert range >= 0, "range must be non-negative."
  return range / closing_speed if closing_speed > 0 else None

def stopping_time(ego_speed, decel):
  assert decel > 0, "decel must be positive."
  return ego_speed / decel

def command(stage, cfg):
  return BrakeCommand(stage, cfg.stage_decel(stage))


def aeb_decide(mio, ego_speed, cfg, prev=BrakeCommand()):
  '''Brake command for this tick.

     mio is the most important object (anything with range and
     range_rate attributes) or None. The gap used for TTC is the
     reference-point range minus cfg.headway_offset, clamped at zero.

     While the object is closing the stage never drops below prev.
     Without a closing object the brake releases, except that a Full
     brake stays latched until the ego has stopped.
  '''
  latched = prev.stage == AebStage.Full and ego_speed > 0

  ttc = None
  if mio is not None:
    ttc = compute_ttc(max(0., mio.range - cfg.headway_offset), -mio.range_rate)

  if ttc is None:
    return command(AebStage.Full if latched else AebStage.NONE, cfg)

  stage = AebStage.NONE
  for s, threshold in cfg.thresholds(ego_speed):
    if ttc < threshold: stage = max(stage, s)

  # A stopped ego releases the full brake
  if prev.stage != AebStage.Full or latched: stage = max(stage, prev.stage)
  return command(stage, cfg)
