'''
STPA-style hazard analysis: unsafe control actions from a control and
feedback structure, hazard scenarios from hint words, and attack
scenario templates from an attack catalog. Templates can be bound to an
operational scenario, which yields a runnable scenario or sweep.

Filter, hazard and hint-word applicability rules are data. A rule
("selector") is a dict whose optional keys ``actions``, ``sources``,
``targets``, ``categories`` and ``tags`` each list accepted values; a
selector matches when every key it has accepts the control action or
UCA category at hand. An empty selector matches everything.
'''

from aebsim._metadata import __version__ # noqa: F401

import os
import copy
import enum
import logging
import dataclasses
from typing import Optional

from aebsim.helpers import StpaError, BindingError, ScenarioError, canonical_hash, parse_path
from aebsim.sensors import Sensor
from aebsim.attacks import AttackKind
from aebsim.scenarios import FORMAT_VERSION, read_document, validate_document, normalize_scenario, \
  load_scenario, load_sweep, DEFAULT_SWEEP


class UcaCategory(enum.Enum):
  Providing = "Providing"
  NotProviding = "NotProviding"
  TooEarlyTooLate = "TooEarlyTooLate"
  StoppedTooSoonAppliedTooLong = "StoppedTooSoonAppliedTooLong"

  @property
  def phrase(self):
    return { UcaCategory.Providing: "provides",
             UcaCategory.NotProviding: "does not provide",
             UcaCategory.TooEarlyTooLate: "provides too early or too late",
             UcaCategory.StoppedTooSoonAppliedTooLong: "stops too soon or applies too long" }[self]

# Enumeration order within one control action
CATEGORY_ORDER = [ UcaCategory.Providing, UcaCategory.NotProviding,
                   UcaCategory.TooEarlyTooLate, UcaCategory.StoppedTooSoonAppliedTooLong ]

# AttackSpec fields an attack template can leave open
ATTACK_PARAMETERS = [ "attacker_pose", "frame", "tx_power", "antenna_gain", "spoof_range_offset",
                      "spoof_velocity", "patch_classes", "patch_target", "sector", "active_window" ]


def selector_matches(selector, action, category=None):
  ''' True if action (and category, if given) satisfy every key of selector. '''
  if "actions" in selector and action.id not in selector["actions"]: return False
  if "sources" in selector and action.source not in selector["sources"]: return False
  if "targets" in selector and action.target not in selector["targets"]: return False
  if "tags" in selector and not set(selector["tags"]) & set(action.tags): return False
  if "categories" in selector and category is not None and category.value not in selector["categories"]: return False
  return True


########################################################################
# Model
########################################################################

@dataclasses.dataclass(frozen=True)
class ControlAction:
  id: str
  source: str
  target: str
  label: str
  tags: tuple = ()

  def _JSONEncoder(self): return { **dataclasses.asdict(self), "tags": list(self.tags) }


@dataclasses.dataclass(frozen=True)
class FeedbackLink:
  source: str
  target: str
  label: str

  def _JSONEncoder(self): return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class ControlStructure:
  name: str
  components: tuple
  control_actions: tuple
  feedback_links: tuple = ()

  def __post_init__(self):
    comps = set(self.components)
    if len(comps) != len(self.components): raise StpaError("components: names must be unique.")
    ids = [ a.id for a in self.control_actions ]
    if len(set(ids)) != len(ids): raise StpaError("control_actions: ids must be unique.")
    for kind, links in (("control_actions", self.control_actions), ("feedback_links", self.feedback_links)):
      for i, l in enumerate(links):
        for end in (l.source, l.target):
          if end not in comps: raise StpaError(f"{kind}/{i}: '{end}' is not a declared component.")

    # Connectivity over the undirected action + feedback graph
    neighbors = { c: set() for c in self.components }
    for l in self.control_actions + self.feedback_links:
      neighbors[l.source].add(l.target)
      neighbors[l.target].add(l.source)
    if len(self.components) > 0:
      seen, todo = set(), [ self.components[0] ]
      while todo:
        c = todo.pop()
        if c in seen: continue
        seen.add(c)
        todo.extend(neighbors[c] - seen)
      if seen != comps:
        raise StpaError(f"components: not connected to '{self.components[0]}': {sorted(comps - seen)}.")

  def action(self, action_id):
    return next(a for a in self.control_actions if a.id == action_id)


@dataclasses.dataclass(frozen=True)
class Hazard:
  id: str
  description: str
  constraints: tuple = () # ids of the safety constraints that prevent the hazard
  applies_to: tuple = () # selectors; the hazard is linked to every UCA one of them matches


@dataclasses.dataclass(frozen=True)
class HintWord:
  id: str
  text: str
  applies_to: tuple = ({},)
  causes: dict = dataclasses.field(default_factory=dict) # UcaCategory -> tuple of caused events

  def applicable(self, uca):
    return uca.category in self.causes and any(selector_matches(s, uca.action, uca.category) for s in self.applies_to)


@dataclasses.dataclass(frozen=True)
class StpaModel:
  ''' Everything enumerate_ucas() and expand_hazard_scenarios() need, as loaded from one document. '''
  structure: ControlStructure
  hazards: tuple
  constraints: dict # id -> description
  filter_rules: tuple
  hint_words: tuple
  document: dict

  @property
  def hash(self): return canonical_hash(self.document)


def model_from_dict(doc):
  ''' StpaModel from a schema-valid document. Raises StpaError for cross-reference errors. '''
  structure = ControlStructure(
    name=doc["name"], components=tuple(doc["components"]),
    control_actions=tuple(ControlAction(a["id"], a["source"], a["target"], a["label"], tuple(a.get("tags", [])))
                          for a in doc["control_actions"]),
    feedback_links=tuple(FeedbackLink(**f) for f in doc.get("feedback_links", [])))
  constraints = { c["id"]: c["description"] for c in doc["safety_constraints"] }
  hazards = tuple(Hazard(h["id"], h["description"], tuple(h["constraints"]), tuple(h["applies_to"]))
                  for h in doc["hazards"])
  for i, h in enumerate(hazards):
    for c in h.constraints:
      if c not in constraints: raise StpaError(f"hazards/{i}/constraints: unknown safety constraint '{c}'.")
  hint_words = tuple(HintWord(w["id"], w["text"], tuple(w.get("applies_to", [{}])),
                              { UcaCategory(k): tuple(v) for k, v in w["causes"].items() })
                     for w in doc["hint_words"])
  for kind, items in (("hazards", hazards), ("hint_words", hint_words)):
    ids = [ x.id for x in items ]
    if len(set(ids)) != len(ids): raise StpaError(f"{kind}: ids must be unique.")
  return StpaModel(structure=structure, hazards=hazards, constraints=constraints,
                   filter_rules=tuple(doc.get("filter_rules", [])), hint_words=hint_words,
                   document=copy.deepcopy(doc))


def load_model(ref):
  ''' Load an STPA model document (dict, path or bundled name, e.g. "aeb_stpa_model"). '''
  doc = read_document(ref)
  validate_document(doc, "stpa_model")
  return model_from_dict(doc)


########################################################################
# Attack catalog
########################################################################

@dataclasses.dataclass(frozen=True)
class AttackType:
  id: str
  name: str
  caused_event: str
  sensor: Sensor
  attack_kind: Optional[AttackKind] = None # None if the simulator has no model for it
  parameters: tuple = () # AttackSpec fields left open
  fixed: dict = dataclasses.field(default_factory=dict) # AttackSpec fields the attack type pins
  description: str = ""
  references: tuple = ()

  def _JSONEncoder(self):
    return { "id": self.id, "name": self.name, "caused_event": self.caused_event,
             "sensor": self.sensor.key,
             "attack_kind": None if self.attack_kind is None else self.attack_kind.value,
             "parameters": list(self.parameters), "fixed": self.fixed,
             "description": self.description, "references": list(self.references) }

  @classmethod
  def from_dict(cls, d):
    return cls(id=d["id"], name=d["name"], caused_event=d["caused_event"],
               sensor=next(s for s in Sensor if s.key == d["sensor"]),
               attack_kind=None if d.get("attack_kind") is None else AttackKind(d["attack_kind"]),
               parameters=tuple(d.get("parameters", [])), fixed=copy.deepcopy(d.get("fixed", {})),
               description=d.get("description", ""), references=tuple(d.get("references", [])))


def load_catalog(ref):
  ''' Attack catalog document -> tuple of AttackType, in document order. '''
  doc = read_document(ref)
  validate_document(doc, "attack_catalog")
  types = tuple(AttackType.from_dict(a) for a in doc["attack_types"])
  ids = [ a.id for a in types ]
  if len(set(ids)) != len(ids): raise StpaError("attack_types: ids must be unique.")
  for i, a in enumerate(types):
    if a.attack_kind is not None and a.attack_kind.sensor != a.sensor:
      raise StpaError(f"attack_types/{i}/attack_kind: {a.attack_kind.value} does not target the {a.sensor.key}.")
    for p in list(a.parameters) + list(a.fixed):
      if p not in ATTACK_PARAMETERS: raise StpaError(f"attack_types/{i}: '{p}' is not an attack parameter.")
  return types


########################################################################
# UCAs and hazard scenarios
########################################################################

@dataclasses.dataclass(frozen=True)
class UnsafeControlAction:
  id: str
  action: ControlAction
  category: UcaCategory
  hazards: tuple
  rationale: str

  @property
  def tags(self): return self.action.tags

  def _JSONEncoder(self):
    return { "id": self.id, "action": self.action.id, "category": self.category.value,
             "hazards": list(self.hazards), "rationale": self.rationale, "tags": list(self.tags) }


def enumerate_ucas(structure, hazards, filter_rules=()):
  '''Control actions x the four UCA categories, minus the combinations a
     filter rule matches. Ordered by action declaration, then category.
     Each UCA is linked to the hazards whose applies_to selectors match.'''
  if len(structure.control_actions) == 0: raise StpaError("control_actions: nothing to analyze.")
  ucas = []
  for action in structure.control_actions:
    for category in CATEGORY_ORDER:
      if any(selector_matches(r, action, category) for r in filter_rules): continue
      linked = tuple(h.id for h in hazards if any(selector_matches(s, action, category) for s in h.applies_to))
      if len(linked) == 0: logging.warning(f"No hazard is linked to '{action.id}' / {category.value}.")
      ucas.append(UnsafeControlAction(
        id=f"UCA-{len(ucas)+1}", action=action, category=category, hazards=linked,
        rationale=f"{action.source} {category.phrase} '{action.label}' [{', '.join(linked)}]"))
  logging.debug(f"{len(ucas)} UCAs from {len(structure.control_actions)} control actions.")
  return ucas


@dataclasses.dataclass(frozen=True)
class HazardScenario:
  id: str
  uca: UnsafeControlAction
  hint_word: str
  cause: str
  cause_events: tuple

  def _JSONEncoder(self):
    return { "id": self.id, "uca": self.uca.id, "hint_word": self.hint_word,
             "cause": self.cause, "cause_events": list(self.cause_events) }


def expand_hazard_scenarios(ucas, hint_words):
  ''' One scenario per (UCA, applicable hint word), in UCA order and then hint word order. '''
  if len(hint_words) == 0: raise StpaError("hint_words: at least one hint word is needed.")
  scenarios = []
  for uca in ucas:
    for w in hint_words:
      if not w.applicable(uca): continue
      events = w.causes[uca.category]
      scenarios.append(HazardScenario(
        id=f"HS-{len(scenarios)+1}", uca=uca, hint_word=w.id, cause_events=tuple(events),
        cause=f"{w.text} ({', '.join(events) or 'no known cause'}) -> {uca.rationale}"))
  return scenarios


########################################################################
# Attack templates
########################################################################

@dataclasses.dataclass(frozen=True)
class AttackScenarioTemplate:
  id: str
  hazard_scenario: HazardScenario
  attack_types: tuple
  target_constraints: tuple
  hazards: tuple = () # Hazard objects of the UCA, for the traceability chain

  @property
  def parameters(self):
    ''' Unresolved AttackSpec fields, in attack type order. '''
    return tuple(dict.fromkeys(p for a in self.attack_types for p in a.parameters))

  def chain(self):
    ''' template -> hazard scenario -> UCA -> control action -> hazards. '''
    uca = self.hazard_scenario.uca
    return { "hazard_scenario": self.hazard_scenario,
             "uca": uca,
             "control_action": uca.action,
             "hazards": [ { "id": h.id, "description": h.description, "constraints": list(h.constraints) }
                          for h in self.hazards ] }

  def _JSONEncoder(self):
    return { "id": self.id,
             "hazard_scenario": self.hazard_scenario.id,
             "attack_types": list(self.attack_types),
             "parameters": { p: None for p in self.parameters },
             "target_constraints": list(self.target_constraints),
             "chain": self.chain() }

  @classmethod
  def from_dict(cls, d):
    '''Rebuild a template from its JSON form (chain included), e.g. as
       read from an analysis report.'''
    c = d["chain"]
    a = c["control_action"]
    action = ControlAction(a["id"], a["source"], a["target"], a["label"], tuple(a.get("tags", [])))
    u = c["uca"]
    uca = UnsafeControlAction(u["id"], action, UcaCategory(u["category"]), tuple(u["hazards"]), u["rationale"])
    s = c["hazard_scenario"]
    hs = HazardScenario(s["id"], uca, s["hint_word"], s["cause"], tuple(s["cause_events"]))
    hazards = tuple(Hazard(h["id"], h["description"], tuple(h["constraints"])) for h in c["hazards"])
    return cls(id=d["id"], hazard_scenario=hs,
               attack_types=tuple(AttackType.from_dict(t) for t in d["attack_types"]),
               target_constraints=tuple(d["target_constraints"]), hazards=hazards)


@dataclasses.dataclass(frozen=True)
class AttackLinks:
  '''Result of link_attacks(). Iterating yields the templates. Every
     (scenario, cause event) pair is either covered by a template or
     listed in unmatched_events; scenarios without any template are
     also listed in uncovered.'''
  templates: tuple
  uncovered: tuple # HazardScenario
  unmatched_events: tuple # (hazard scenario id, event)

  def __iter__(self): return iter(self.templates)
  def __len__(self): return len(self.templates)


def link_attacks(scenarios, catalog, hazards=()):
  '''One template per (hazard scenario, attack type whose caused_event is
     among the scenario's cause events). Targets are the safety
     constraints of the UCA's hazards, in hazard order.'''
  by_id = { h.id: h for h in hazards }
  templates, uncovered, unmatched = [], [], []
  for s in scenarios:
    linked = [ by_id[h] for h in s.uca.hazards if h in by_id ]
    targets = tuple(dict.fromkeys(c for h in linked for c in h.constraints))
    n = len(templates)
    for event in s.cause_events:
      matching = [ a for a in catalog if a.caused_event == event ]
      if len(matching) == 0: unmatched.append((s.id, event))
    for a in catalog:
      if a.caused_event not in s.cause_events: continue
      templates.append(AttackScenarioTemplate(id=f"AS-{len(templates)+1}", hazard_scenario=s,
                                              attack_types=(a,), target_constraints=targets,
                                              hazards=tuple(linked)))
    if len(templates) == n:
      logging.info(f"Hazard scenario {s.id} ({s.uca.id}) is not covered by any attack type.")
      uncovered.append(s)
  return AttackLinks(tuple(templates), tuple(uncovered), tuple(unmatched))


########################################################################
# Analysis report
########################################################################

@dataclasses.dataclass(frozen=True)
class StpaAnalysis:
  model: StpaModel
  catalog: tuple
  ucas: tuple
  scenarios: tuple
  links: AttackLinks

  @property
  def templates(self): return self.links.templates

  def counts(self):
    return { "ucas": len(self.ucas),
             "aeb_ucas": sum("AEB" in u.tags for u in self.ucas),
             "hazard_scenarios": len(self.scenarios),
             "templates": len(self.links.templates),
             "uncovered": len(self.links.uncovered),
             "unmatched_events": len(self.links.unmatched_events) }

  def _JSONEncoder(self):
    return { "format_version": FORMAT_VERSION,
             "aebsim_version": __version__,
             "model": self.model.structure.name,
             "model_hash": self.model.hash,
             "catalog_hash": canonical_hash(list(self.catalog)),
             "counts": self.counts(),
             "ucas": list(self.ucas),
             "hazard_scenarios": list(self.scenarios),
             "templates": list(self.links.templates),
             "uncovered": [ s.id for s in self.links.uncovered ],
             "unmatched_events": [ list(x) for x in self.links.unmatched_events ] }

  def table(self):
    ''' pandas DataFrame with one row per template: Hazard scenario | Attack | Target constraint. '''
    import pandas as pd
    rows = [ { "Template": t.id,
               "Hazard scenario": f"{t.hazard_scenario.id}: {t.hazard_scenario.uca.rationale}",
               "Attack": ", ".join(f"{a.id} {a.name}" for a in t.attack_types),
               "Target constraint": ", ".join(t.target_constraints) }
             for t in self.links.templates ]
    return pd.DataFrame(rows, columns=[ "Template", "Hazard scenario", "Attack", "Target constraint" ])

  def table_text(self):
    header = [ f"# aebsim {__version__}, model {self.model.structure.name} ({self.model.hash})" ]
    header += [ f"# {k} = {v}" for k, v in self.counts().items() ]
    return "\n".join(header) + "\n" + self.table().to_string(index=False) + "\n"


def analyze(model, catalog):
  ''' Full pipeline: UCAs, hazard scenarios and attack templates. '''
  ucas = enumerate_ucas(model.structure, model.hazards, model.filter_rules)
  scenarios = expand_hazard_scenarios(ucas, model.hint_words)
  links = link_attacks(scenarios, catalog, model.hazards)
  result = StpaAnalysis(model=model, catalog=tuple(catalog), ucas=tuple(ucas),
                        scenarios=tuple(scenarios), links=links)
  logging.info(f"STPA '{model.structure.name}': " + ", ".join(f"{k} {v}" for k, v in result.counts().items()))
  return result


########################################################################
# Binding templates to operational scenarios
########################################################################

@dataclasses.dataclass(frozen=True)
class Concretization:
  attacks: tuple # AttackSpec, with axis slots at their first value
  document: dict # scenario document, or sweep document if axes is nonempty
  axes: tuple = ()

  @property
  def is_sweep(self): return len(self.axes) > 0


def _set_slot(attack, key, value):
  keys = parse_path(key)
  d = attack
  for k in keys[:-1]:
    if k not in d: d[k] = { "x": 0., "y": 0. } if k == "attacker_pose" else {}
    d = d[k]
  d[keys[-1]] = value


def concretize(template, operational, slots=None):
  '''Embed template into an operational scenario.

     operational is either a scenario (dict, path or bundled name) plus
     slots, or a binding document { "scenario": ..., "slots": {...},
     "name", "base_seed", "repetitions" }. Slots map attack parameters
     (or sub-paths such as "attacker_pose/x") to a value, or to
     { "axis": [values], "name": ... } to sweep over it.

     Returns a Concretization holding a runnable scenario document, or a
     sweep document with the scenario inlined as its base. Raises
     BindingError if a parameter stays unbound, an attack type has no
     simulation model or targets a sensor the scenario does not use.
  '''
  op = read_document(operational)
  binding = {}
  if "scenario" in op and "ego" not in op:
    validate_document(op, "binding")
    binding = op
    base_ref = op["scenario"]
    if isinstance(base_ref, str) and not isinstance(operational, dict) and os.path.isfile(os.fspath(operational)):
      sibling = os.path.join(os.path.dirname(os.fspath(operational)), base_ref)
      if os.path.isfile(sibling): base_ref = sibling
    base = normalize_scenario(read_document(base_ref))
    slots = { **op.get("slots", {}), **(slots or {}) }
  else:
    base = normalize_scenario(op)
    slots = dict(slots or {})

  for key in slots:
    if parse_path(key)[0] not in ATTACK_PARAMETERS:
      raise BindingError(f"slots/{key}: not an attack parameter ({', '.join(ATTACK_PARAMETERS)}).")

  doc = copy.deepcopy(base)
  attacks, axes, missing = [], [], []
  for k, at in enumerate(template.attack_types):
    if at.attack_kind is None:
      raise BindingError(f"attack_types/{k}: {at.id} ({at.name}) has no simulation model.")
    if not doc["sensor_enable"][at.sensor.key]:
      raise BindingError(f"sensor_enable/{at.sensor.key}: {at.id} attacks the {at.sensor.key}, "
                         f"which scenario '{doc['name']}' does not use.")
    for p in at.parameters:
      if not any(parse_path(key)[0] == p for key in slots): missing.append(f"{at.id}.{p}")

    a = { "id": f"{template.id}-{at.id}", "kind": at.attack_kind.value, **copy.deepcopy(at.fixed) }
    index = len(doc["attacks"]) + len(attacks)
    for key, value in slots.items():
      if isinstance(value, dict) and "axis" in value:
        assert len(value["axis"]) > 0, f"slots/{key}: empty axis."
        _set_slot(a, key, copy.deepcopy(value["axis"][0]))
        axes.append({ "name": value.get("name", key), "path": f"attacks/{index}/{key}",
                      "values": copy.deepcopy(value["axis"]) })
      else:
        _set_slot(a, key, copy.deepcopy(value))
    attacks.append(a)

  if missing:
    raise BindingError(f"slots: unbound parameters of {template.id}: {', '.join(missing)}.")

  doc["attacks"] = doc["attacks"] + attacks
  doc["name"] = binding.get("name", f"{doc['name']}+{template.id}")
  doc["description"] = (f"{template.id}: " + "; ".join(f"{a.id} {a.name}" for a in template.attack_types)
                        + f" against {', '.join(template.target_constraints)}. " + doc["description"]).strip()
  try: scenario = load_scenario(doc)
  except ScenarioError as e: raise BindingError(f"{template.id}: {e}")
  specs = tuple(s for s in scenario.attacks if s.id in { a["id"] for a in attacks })

  if len(axes) == 0:
    logging.info(f"Bound {template.id} into scenario '{doc['name']}'.")
    return Concretization(attacks=specs, document=scenario.to_document())

  sweep = { "format_version": FORMAT_VERSION,
            "name": doc["name"],
            "description": doc["description"],
            "base": scenario.to_document(),
            "axes": axes,
            "base_seed": binding.get("base_seed", DEFAULT_SWEEP["base_seed"]),
            "repetitions": binding.get("repetitions", DEFAULT_SWEEP["repetitions"]) }
  try: load_sweep(sweep)
  except ScenarioError as e: raise BindingError(f"{template.id}: {e}")
  logging.info(f"Bound {template.id} into sweep '{doc['name']}' over {len(axes)} axes.")
  return Concretization(attacks=specs, document=sweep, axes=tuple(axes))


def find_template(ref, template_id=None):
  '''AttackScenarioTemplate from a template document, or from an
     analysis report (then template_id selects one).'''
  d = read_document(ref)
  if "templates" in d:
    if template_id is None: raise StpaError("A report holds many templates; pass a template id.")
    match = [ t for t in d["templates"] if t["id"] == template_id ]
    if len(match) == 0: raise StpaError(f"templates: no template '{template_id}'.")
    d = match[0]
  return AttackScenarioTemplate.from_dict(d)
