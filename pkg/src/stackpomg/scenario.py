"""Parametric attacker/defender model of a liquid-egg production line.

The defender (leader) runs the plant in full production (FP) or low
production with high alert (LP) and may end up shut down after detecting
an attack.  The attacker (follower) moves from its staging state O through
a pre-attack state PT_i to the attack state T_i for one of two targets.

All numbers in the default parameter file are illustrative values chosen
for this package; they are not taken from any published study.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .evaluator import rounded
from .history import enumerate_windows
from .model import (LEADER, FactoredObservation, ModelValidationError, PomgModel,
                    compose_dynamics)
from .policy import FiniteMemoryPolicy, deterministic_policy

LEADER_STATES = ("FP", "LP", "Shutdown")
LEADER_ACTIONS = ("full", "low")
LEADER_OBS = ("quiet", "alarm")
FOLLOWER_STATES = ("O", "PT1", "PT2", "T1", "T2")
FOLLOWER_ACTIONS = ("hold", "advance", "retreat")
FOLLOWER_OBS = ("sees_FP", "sees_LP", "sees_Shutdown")
CRITERIA = ("neg_productivity", "vulnerability")
ENUMERATION_CAP = 10**5


@dataclass
class ScenarioParams:
    beta: float = 0.85
    tau: int = 1
    # defender: probability that the requested production mode takes effect
    switch_prob: float = 1.0
    productivity: dict = field(default_factory=lambda: {"full": 1.0, "low": 0.6})
    # detection of an attack in progress (leads to Shutdown), per defender action
    detection: dict = field(default_factory=lambda: {"full": 0.2, "low": 0.9})
    # alarm signal when the attacker is armed (PT/T) after the step
    alarm: dict = field(default_factory=lambda: {"full": 0.0, "low": 0.5})
    false_alarm: dict = field(default_factory=lambda: {"full": 0.0, "low": 0.0})
    # interdiction sends an armed attacker back to O
    interdiction: dict = field(default_factory=lambda: {"full": 0.05, "low": 0.3})
    # attacker
    target_split: list = field(default_factory=lambda: [0.6, 0.4])
    advance_from_O: float = 0.7
    advance_from_PT: float = 0.6
    retreat_prob: float = 0.9
    error_prob: float = 0.05
    success: list = field(default_factory=lambda: [0.8, 0.6])
    lethal_packages: list = field(default_factory=lambda: [5.0, 9.0])
    effort_cost: float = 0.01
    # probability the attacker confuses FP with LP (Shutdown is always visible)
    follower_noise: float = 0.0

    def violations(self) -> list[str]:
        out = []

        def prob(name, v):
            if not (0.0 <= v <= 1.0):
                out.append(f"{name}={v} is not a probability")

        if not (0.0 <= self.beta < 1.0):
            out.append(f"beta={self.beta} outside [0, 1)")
        if self.tau < 1:
            out.append(f"tau={self.tau} must be at least 1")
        for name in ("switch_prob", "advance_from_O", "advance_from_PT", "retreat_prob",
                     "error_prob", "follower_noise"):
            prob(name, getattr(self, name))
        for name in ("detection", "alarm", "false_alarm", "interdiction", "productivity"):
            d = getattr(self, name)
            if set(d) != set(LEADER_ACTIONS):
                out.append(f"{name} must have keys {list(LEADER_ACTIONS)}")
                continue
            for a in LEADER_ACTIONS:
                if name == "productivity":
                    if d[a] < 0:
                        out.append(f"productivity[{a}]={d[a]} is negative")
                else:
                    prob(f"{name}[{a}]", d[a])
        for name in ("target_split", "success", "lethal_packages"):
            if len(getattr(self, name)) != 2:
                out.append(f"{name} needs one entry per target")
        if len(self.target_split) == 2 and abs(sum(self.target_split) - 1.0) > 1e-9:
            out.append(f"target_split sums to {sum(self.target_split)}")
        for i, v in enumerate(self.target_split):
            prob(f"target_split[{i}]", v)
        for i, v in enumerate(self.success):
            prob(f"success[{i}]", v)
        if any(v < 0 for v in self.lethal_packages):
            out.append("lethal_packages must be nonnegative")
        if self.interdiction_error_total() > 1.0 + 1e-12:
            out.append("interdiction + error probability exceeds 1")
        return out

    def interdiction_error_total(self) -> float:
        return max(self.interdiction.values()) + self.error_prob

    def validate(self) -> None:
        v = self.violations()
        if v:
            raise ModelValidationError(v)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioParams":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ModelValidationError([f"unknown parameter {k!r}" for k in sorted(unknown)])
        p = cls(**doc)
        p.validate()
        return p


def default_params() -> ScenarioParams:
    text = resources.files("stackpomg").joinpath("data/desk_params.json").read_text()
    return ScenarioParams.from_dict(json.loads(text))


def load_params(path) -> ScenarioParams:
    return ScenarioParams.from_dict(json.loads(Path(path).read_text()))


def dumps_params(p: ScenarioParams) -> str:
    return json.dumps(p.to_dict(), indent=1, sort_keys=True) + "\n"


def _transition(p: ScenarioParams) -> np.ndarray:
    FP, LP, SH = 0, 1, 2
    O, PT, T = 0, (1, 2), (3, 4)
    HOLD, ADV, RET = 0, 1, 2
    T6 = np.zeros((3, 5, 2, 3, 3, 5))
    for al, act in enumerate(LEADER_ACTIONS):
        target_mode = FP if act == "full" else LP
        for sl in (FP, LP):
            mode = np.zeros(3)
            mode[target_mode] += p.switch_prob
            mode[sl] += 1.0 - p.switch_prob
            for af in range(3):
                att = np.zeros((5, 5))  # [sf, sf'] ignoring detection
                att[O, O] = 1.0
                if af == ADV:
                    att[O] = 0.0
                    att[O, O] = 1.0 - p.advance_from_O
                    att[O, PT[0]] = p.advance_from_O * p.target_split[0]
                    att[O, PT[1]] = p.advance_from_O * p.target_split[1]
                for i in range(2):
                    stop = p.interdiction[act] + p.error_prob
                    row = np.zeros(5)
                    row[O] = stop
                    go = 1.0 - stop
                    if af == HOLD:
                        row[PT[i]] += go
                    elif af == ADV:
                        row[T[i]] += go * p.advance_from_PT
                        row[PT[i]] += go * (1.0 - p.advance_from_PT)
                    else:
                        row[O] += go * p.retreat_prob
                        row[PT[i]] += go * (1.0 - p.retreat_prob)
                    att[PT[i]] = row
                    att[T[i], O] = 1.0  # the attack executes and the team withdraws
                for sf in range(5):
                    if sf in T:
                        det = p.detection[act]
                        T6[sl, sf, al, af, SH, O] += det
                        T6[sl, sf, al, af, :, O] += (1.0 - det) * mode
                    else:
                        T6[sl, sf, al, af] += np.outer(mode, att[sf])
        # shutdown is absorbing and holds the attacker at O
        T6[SH, :, al, :, SH, O] = 1.0
    return T6


def _channels(p: ScenarioParams) -> FactoredObservation:
    lc = np.zeros((2, 3, 5, 2))  # [al, af, sf', zl']
    fc = np.zeros((2, 3, 3, 3))  # [al, af, sl', zf']
    for al, act in enumerate(LEADER_ACTIONS):
        for sf2 in range(5):
            pa = p.false_alarm[act] if sf2 == 0 else p.alarm[act]
            lc[al, :, sf2] = (1.0 - pa, pa)
        # production mode is misread with probability follower_noise; a shutdown is visible
        fc[al, :, 0] = (1.0 - p.follower_noise, p.follower_noise, 0.0)
        fc[al, :, 1] = (p.follower_noise, 1.0 - p.follower_noise, 0.0)
        fc[al, :, 2] = (0.0, 0.0, 1.0)
    return FactoredObservation(lc, fc)


def _costs(p: ScenarioParams):
    nprod = np.zeros((3, 5, 2, 3))
    vuln = np.zeros((3, 5, 2, 3))
    for al, act in enumerate(LEADER_ACTIONS):
        rate = p.productivity[act]
        for sl in (0, 1):
            nprod[sl, :, al, :] = -rate
            for i in range(2):
                vuln[sl, 3 + i, al, :] = (rate * (1.0 - p.detection[act])
                                          * p.success[i] * p.lethal_packages[i])
    fcost = -vuln.copy()
    fcost[:, :, :, 1] += p.effort_cost
    return nprod, vuln, fcost


def build_channels(params: ScenarioParams):
    """Transition kernel and factored observation channels of the scenario."""
    params.validate()
    return _transition(params), _channels(params)


def build_model(params: ScenarioParams | None = None) -> PomgModel:
    params = params or default_params()
    T, ch = build_channels(params)
    nprod, vuln, fcost = _costs(params)
    init = np.zeros((3, 5))
    init[0, 0] = 1.0
    return PomgModel(LEADER_STATES, FOLLOWER_STATES, LEADER_ACTIONS, FOLLOWER_ACTIONS,
                     LEADER_OBS, FOLLOWER_OBS,
                     compose_dynamics(T, ch.leader_channel, ch.follower_channel),
                     fcost, np.stack([nprod, vuln]), params.beta, params.tau, init,
                     criteria=CRITERIA)


class EnumerationCapExceeded(RuntimeError):
    pass


def enumerate_deterministic(model: PomgModel, cap: int = ENUMERATION_CAP) -> list[FiniteMemoryPolicy]:
    """Every deterministic leader policy, in lexicographic order of the action
    assigned to each window (windows in their canonical order)."""
    space = enumerate_windows(model, LEADER)
    nal = len(model.leader_actions)
    count = nal ** len(space)
    if count > cap:
        raise EnumerationCapExceeded(f"{count} deterministic policies exceed cap {cap}")
    return [deterministic_policy(space, nal, acts)
            for acts in itertools.product(range(nal), repeat=len(space))]


# -- decision support table ---------------------------------------------------

@dataclass
class DecisionTable:
    labels: list
    productivity: np.ndarray
    vulnerability: np.ndarray
    productivity_ratio: np.ndarray
    vulnerability_ratio: np.ndarray
    ratios_valid: bool = True
    note: str = ""
    policies: list = field(default_factory=list)

    def render(self) -> str:
        head = ("Policy", "Productivity", "Vulnerability")
        sub = ("", "ratio to maximum", "ratio to minimum") if self.ratios_valid else \
            ("", "absolute", "absolute")
        p = self.productivity_ratio if self.ratios_valid else self.productivity
        v = self.vulnerability_ratio if self.ratios_valid else self.vulnerability
        rows = [head, sub] + [(lab, f"{a:.3f}", f"{b:.3f}")
                              for lab, a, b in zip(self.labels, p, v)]
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        if self.note:
            lines.append(f"note: {self.note}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["policy", "productivity", "vulnerability", "productivity_ratio",
                    "vulnerability_ratio"])
        for row in zip(self.labels, self.productivity, self.vulnerability,
                       self.productivity_ratio, self.vulnerability_ratio):
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
        return buf.getvalue()

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.productivity) < 0)
                    and np.all(np.diff(self.vulnerability) < 0))


def decision_support_table(front) -> DecisionTable:
    """``front``: list of (policy, fitness) with fitness = (-productivity,
    vulnerability).  Entries with identical fitness collapse to the first."""
    if not front:
        raise ValueError("empty front")
    seen, items = set(), []
    for pol, fit in front:
        key = rounded(fit)
        if key not in seen:
            seen.add(key)
            items.append((pol, key))
    items.sort(key=lambda it: (it[1][0], it[1][1]))  # productivity descending
    prod = np.array([-k[0] for _, k in items])
    vul = np.array([k[1] for _, k in items])
    labels = [f"pi_{i + 1}" for i in range(len(items))]
    pmax, vmin = prod.max(), vul.min()
    ok, note = True, ""
    if pmax <= 0 or vmin <= 0:
        ok = False
        note = "ratios undefined (zero or negative reference value); absolute values shown"
        pr = np.full(len(items), np.nan)
        vr = np.full(len(items), np.nan)
    else:
        pr, vr = prod / pmax, vul / vmin
    return DecisionTable(labels, prod, vul, pr, vr, ok, note, [p for p, _ in items])
