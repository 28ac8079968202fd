"""3-DOF air-to-air engagement surrogate.

Point-mass aircraft against a scripted pursuer. Both sides carry a few
probabilistic-kill missiles and flares; each flare multiplies the kill
probability of every missile inbound on the dispenser by ``1 - flare_rho``.

Frame: x north, y east, z altitude. Heading is measured from north towards
east, so a positive turn command turns right.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from tart.pamdp import ActionSpec, HybridAction, validate_action

NOOP, FIRE, FLARE = 0, 1, 2
ACTION_SPEC = ActionSpec.uniform(3, [3, 3, 3])
RESOURCE_IDS = frozenset({FIRE, FLARE})
OBS_DIM = 16

INTERCEPT_RANGE = 50.0
MISSILE_LIFETIME = 30.0
KILL_REWARD = 5.0
TRACK_REWARD = 0.01


@dataclass(frozen=True)
class CombatConfig:
    dt: float = 0.1
    v_min: float = 150.0
    v_max: float = 400.0
    max_accel: float = 20.0
    max_turn_rate: float = 0.35
    max_climb_rate: float = 50.0
    missiles: int = 2
    flares: int = 4
    missile_speed: float = 600.0
    missile_pk: float = 0.7
    flare_rho: float = 0.5
    lock_cone: float = 0.35
    max_steps: int = 1500
    arena_radius: float = 10000.0
    floor: float = 500.0
    ceiling: float = 12000.0
    opp_cooldown: float = 10.0
    opp_gain: float = 2.0

    def validate(self) -> None:
        if not 0 < self.v_min < self.v_max:
            raise ValueError("need 0 < v_min < v_max")
        if not 0 < self.missile_pk <= 1:
            raise ValueError("missile_pk must be in (0, 1]")
        if not 0 < self.flare_rho < 1:
            raise ValueError("flare_rho must be in (0, 1)")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.missiles < 0 or self.flares < 0 or self.max_steps < 1:
            raise ValueError("counts must be non-negative and max_steps >= 1")


@dataclass
class AircraftState:
    pos: np.ndarray
    heading: float
    speed: float
    climb: float = 0.0

    def velocity(self) -> np.ndarray:
        return np.array([self.speed * math.cos(self.heading),
                         self.speed * math.sin(self.heading), self.climb])

    def copy(self) -> "AircraftState":
        return AircraftState(self.pos.copy(), self.heading, self.speed, self.climb)


@dataclass
class MissileState:
    pos: np.ndarray
    target: str  # "agent" or "opponent"
    alive: bool = True
    pk_current: float = 1.0
    age: float = 0.0


@dataclass
class CombatState:
    agent: AircraftState
    opponent: AircraftState
    missiles: list[MissileState] = field(default_factory=list)
    agent_missiles: int = 0
    agent_flares: int = 0
    opp_missiles: int = 0
    opp_flares: int = 0
    opp_cooldown_left: float = 0.0
    t: int = 0


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _bearing(src: AircraftState, dst_pos: np.ndarray) -> float:
    d = dst_pos - src.pos
    return math.atan2(d[1], d[0])


def ata(own: AircraftState, other_pos: np.ndarray) -> float:
    """Angle between own velocity and the line of sight to ``other_pos``, in [0, pi]."""
    los = other_pos - own.pos
    v = own.velocity()
    n = np.linalg.norm(los) * np.linalg.norm(v)
    if n == 0.0:
        return 0.0
    return float(math.acos(max(-1.0, min(1.0, float(np.dot(los, v) / n)))))


def body_frame(own: AircraftState, vec: np.ndarray) -> np.ndarray:
    """Express a world-frame offset as (forward, right, up) of ``own``."""
    c, s = math.cos(own.heading), math.sin(own.heading)
    return np.array([c * vec[0] + s * vec[1], -s * vec[0] + c * vec[1], vec[2]])


def integrate(cfg: CombatConfig, ac: AircraftState, turn: float, climb: float, throttle: float) -> AircraftState:
    """Forward-Euler point-mass update with a soft arena boundary."""
    horiz = math.hypot(ac.pos[0], ac.pos[1])
    if horiz > cfg.arena_radius:
        err = wrap_angle(math.atan2(-ac.pos[1], -ac.pos[0]) - ac.heading)
        turn = 1.0 if err > 0 else -1.0
    heading = wrap_angle(ac.heading + cfg.max_turn_rate * turn * cfg.dt)
    climb_rate = cfg.max_climb_rate * climb
    speed = min(cfg.v_max, max(cfg.v_min, ac.speed + cfg.max_accel * throttle * cfg.dt))
    pos = ac.pos + cfg.dt * np.array([speed * math.cos(heading), speed * math.sin(heading), climb_rate])
    if pos[2] < cfg.floor or pos[2] > cfg.ceiling:
        pos[2] = min(cfg.ceiling, max(cfg.floor, pos[2]))
        climb_rate = 0.0
    return AircraftState(pos, heading, speed, climb_rate)


def intercept_check(missile: MissileState, target: AircraftState, rng: np.random.Generator) -> bool:
    """Kill draw for a live missile; only inside the intercept range.

    A draw consumes the missile regardless of the outcome.
    """
    if not missile.alive:
        return False
    if float(np.linalg.norm(target.pos - missile.pos)) >= INTERCEPT_RANGE:
        return False
    missile.alive = False
    return bool(rng.random() < missile.pk_current)


def _fly_missile(cfg: CombatConfig, m: MissileState, target: AircraftState) -> None:
    d = target.pos - m.pos
    dist = float(np.linalg.norm(d))
    step = cfg.missile_speed * cfg.dt
    if dist <= step:
        m.pos = target.pos.copy()
    else:
        m.pos = m.pos + d * (step / dist)
    m.age += cfg.dt


def opponent_policy(cfg: CombatConfig, state: CombatState, seed: int) -> HybridAction:
    """Scripted pursuer: proportional heading control towards the agent.

    Fires when the agent sits inside its lock cone and the cooldown has
    elapsed; while a missile is inbound it flares with probability 0.5 per
    step. Randomness comes from a generator keyed on (seed, t).
    """
    opp, agent = state.opponent, state.agent
    err = wrap_angle(_bearing(opp, agent.pos) - opp.heading)
    turn = float(np.clip(cfg.opp_gain * err, -1.0, 1.0))
    dz = agent.pos[2] - opp.pos[2]
    climb = float(np.clip(dz / 500.0, -1.0, 1.0))
    mid = 0.5 * (cfg.v_min + cfg.v_max)
    throttle = float(np.clip((mid - opp.speed) / 50.0, -1.0, 1.0))
    params = (turn, climb, throttle)
    inbound = any(m.alive and m.target == "opponent" for m in state.missiles)
    if inbound and state.opp_flares > 0:
        rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, state.t])
        if rng.random() < 0.5:
            return HybridAction.make(FLARE, params)
    if (state.opp_missiles > 0 and state.opp_cooldown_left <= 0.0
            and ata(opp, agent.pos) <= cfg.lock_cone):
        return HybridAction.make(FIRE, params)
    return HybridAction.make(NOOP, params)


def _nearest_inbound(state: CombatState, target: str, own: AircraftState):
    best = None
    for m in state.missiles:
        if m.alive and m.target == target:
            r = float(np.linalg.norm(m.pos - own.pos))
            if best is None or r < best[0]:
                best = (r, m)
    return best


def observe(cfg: CombatConfig, state: CombatState) -> np.ndarray:
    """16-dim agent observation.

    0 speed, 1 heading/pi, 2 climb rate, 3 altitude, 4-6 opponent offset in
    body frame / arena radius, 7 closure rate / (2 v_max), 8 ATA/pi,
    9 aspect angle/pi, 10 opponent heading relative to own / pi,
    11 missiles left, 12 flares left, 13 own missiles in flight,
    14 nearest inbound missile range / (missile_speed * lifetime),
    15 its bearing relative to heading / pi. Slots 14-15 are -1 when nothing
    is inbound.
    """
    a, o = state.agent, state.opponent
    rel = o.pos - a.pos
    rng_ = float(np.linalg.norm(rel))
    body = body_frame(a, rel) / cfg.arena_radius
    closure = 0.0 if rng_ == 0 else -float(np.dot(o.velocity() - a.velocity(), rel)) / rng_
    aspect = ata(o, a.pos)  # angle off the opponent's nose
    own_in_flight = sum(1 for m in state.missiles if m.alive and m.target == "opponent")
    near = _nearest_inbound(state, "agent", a)
    if near is None:
        m_range, m_bearing = -1.0, -1.0
    else:
        m_range = near[0] / (cfg.missile_speed * MISSILE_LIFETIME)
        m_bearing = wrap_angle(_bearing(a, near[1].pos) - a.heading) / math.pi
    return np.array([
        (a.speed - cfg.v_min) / (cfg.v_max - cfg.v_min),
        a.heading / math.pi,
        a.climb / cfg.max_climb_rate,
        (a.pos[2] - cfg.floor) / (cfg.ceiling - cfg.floor),
        *body,
        closure / (2.0 * cfg.v_max),
        ata(a, o.pos) / math.pi,
        aspect / math.pi,
        wrap_angle(o.heading - a.heading) / math.pi,
        state.agent_missiles / max(1, cfg.missiles),
        state.agent_flares / max(1, cfg.flares),
        own_in_flight / max(1, cfg.missiles),
        m_range,
        m_bearing,
    ], dtype=np.float64)


def initial_state(cfg: CombatConfig, rng: np.random.Generator) -> CombatState:
    agent = AircraftState(np.array([0.0, 0.0, 6000.0]), float(rng.uniform(-math.pi, math.pi)), 250.0)
    bearing = float(rng.uniform(-math.pi, math.pi))
    dist = float(rng.uniform(4000.0, 7000.0))
    opp_pos = np.array([dist * math.cos(bearing), dist * math.sin(bearing), 6000.0 + rng.uniform(-500, 500)])
    opp = AircraftState(opp_pos, float(rng.uniform(-math.pi, math.pi)), 250.0)
    return CombatState(agent, opp, [], cfg.missiles, cfg.flares, cfg.missiles, cfg.flares, 0.0, 0)


def _apply_resource(cfg: CombatConfig, state: CombatState, side: str, a: HybridAction) -> tuple[bool, bool, bool]:
    """Resolve FIRE/FLARE for one side. Returns (fired, flared, wasted)."""
    own = state.agent if side == "agent" else state.opponent
    other = state.opponent if side == "agent" else state.agent
    other_name = "opponent" if side == "agent" else "agent"
    if a.discrete == FIRE:
        left = state.agent_missiles if side == "agent" else state.opp_missiles
        if left > 0 and ata(own, other.pos) <= cfg.lock_cone:
            state.missiles.append(MissileState(own.pos.copy(), other_name, True, cfg.missile_pk))
            if side == "agent":
                state.agent_missiles -= 1
            else:
                state.opp_missiles -= 1
                state.opp_cooldown_left = cfg.opp_cooldown
            return True, False, False
        return False, False, True
    if a.discrete == FLARE:
        left = state.agent_flares if side == "agent" else state.opp_flares
        if left > 0:
            for m in state.missiles:
                if m.alive and m.target == side:
                    m.pk_current *= (1.0 - cfg.flare_rho)
            if side == "agent":
                state.agent_flares -= 1
            else:
                state.opp_flares -= 1
            return False, True, False
        return False, False, True
    return False, False, False


def step(cfg: CombatConfig, state: CombatState, a: HybridAction, opp_action: HybridAction,
         rng: np.random.Generator) -> tuple[CombatState, float, bool, dict]:
    """Advance one tick. ``state`` is mutated and returned."""
    a, _ = validate_action(ACTION_SPEC, a)
    fired, flared, wasted = _apply_resource(cfg, state, "agent", a)
    opp_fired, opp_flared, _ = _apply_resource(cfg, state, "opponent", opp_action)

    state.agent = integrate(cfg, state.agent, *a.params)
    state.opponent = integrate(cfg, state.opponent, *opp_action.params)
    state.opp_cooldown_left = max(0.0, state.opp_cooldown_left - cfg.dt)

    agent_killed = opp_killed = False
    for m in state.missiles:
        if not m.alive:
            continue
        target = state.agent if m.target == "agent" else state.opponent
        _fly_missile(cfg, m, target)
        if intercept_check(m, target, rng):
            if m.target == "agent":
                agent_killed = True
            else:
                opp_killed = True
        elif m.age >= MISSILE_LIFETIME:
            m.alive = False
    state.missiles = [m for m in state.missiles if m.alive]
    state.t += 1

    reward = TRACK_REWARD * (1.0 - ata(state.agent, state.opponent.pos) / math.pi)
    if opp_killed:
        reward += KILL_REWARD
    if agent_killed:
        reward -= KILL_REWARD
    done = opp_killed or agent_killed or state.t >= cfg.max_steps
    info = {
        "fired": fired, "flared": flared, "wasted_resource": wasted,
        "resource_used": fired or flared,
        "opp_fired": opp_fired, "opp_flared": opp_flared,
        "agent_killed": agent_killed, "opponent_killed": opp_killed,
        "missiles_left": state.agent_missiles, "flares_left": state.agent_flares,
    }
    return state, reward, done, info


class CombatEnv:
    """Stateful wrapper with an instance-local, per-episode seeded RNG."""

    obs_dim = OBS_DIM
    action_spec = ACTION_SPEC
    resource_ids = RESOURCE_IDS
    name = "combat"

    def __init__(self, config: CombatConfig | None = None, seed: int = 0):
        self.config = config or CombatConfig()
        self.config.validate()
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.state: CombatState | None = None
        self._opp_seed = 0

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self._opp_seed = int(self.rng.integers(2**31 - 1))
        self.state = initial_state(self.config, self.rng)
        return observe(self.config, self.state)

    def step(self, a: HybridAction) -> tuple[np.ndarray, float, bool, dict]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        opp_a = opponent_policy(self.config, self.state, self._opp_seed)
        self.state, r, done, info = step(self.config, self.state, a, opp_a, self.rng)
        return observe(self.config, self.state), r, done, info

    def log_record(self) -> dict:
        s = self.state

        def ac(x: AircraftState) -> dict:
            return {"pos": x.pos.tolist(), "heading": x.heading, "speed": x.speed, "climb": x.climb}

        return {
            "t": s.t, "agent": ac(s.agent), "opponent": ac(s.opponent),
            "missiles": [{"pos": m.pos.tolist(), "target": m.target, "pk": m.pk_current, "age": m.age}
                         for m in s.missiles],
            "agent_missiles": s.agent_missiles, "agent_flares": s.agent_flares,
            "opp_missiles": s.opp_missiles, "opp_flares": s.opp_flares,
        }

    def signature(self) -> dict:
        return {"env": "combat", **asdict(self.config)}
