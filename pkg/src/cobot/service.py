"""Live planning sessions: the planner picks supportive actions, a human
answers each prompt, and the belief adapts between steps.

The robot side is deliberately blind: no ground-truth world state exists in a
session.  Progression lives entirely in the belief, driven by the human's
ok / error / done signals over the observation channel.

Wire protocol (version 1), shared by the WebSocket and the HTTP endpoints:

- server -> client: ``{"v": 1, "type": "state", "state": {...}}`` and
  ``{"v": 1, "type": "prompt", "prompt": {"action": ..., "legal_signals":
  [...]}}``.
- client -> server: ``{"type": "start", "config": {...}}``,
  ``{"type": "signal", "signal": "ok"|"error"|"done"}``, ``{"type":
  "reset"}``, plus the debug-only ``{"type": "inject_failure"}`` that fakes a
  robot-side manipulation failure.
"""
from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from random import Random
from typing import Mapping

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel

from .benchmarks import build_benchmark
from .htm import Htm, parse_htm_file, serialize_htm, validate_htm
from .model import (
    GenerativeModel,
    NoiseConfig,
    OBS_FAIL_ROBOT,
    OBS_FAIL_WRONG,
    OBS_NONE,
    A_WAIT,
    compile_model,
    obs_label,
    sample_step,
)
from .planner import (
    Belief,
    SearchConfig,
    belief_marginals,
    initial_belief,
    plan_action,
    update_belief,
)

PROTOCOL_VERSION = 1

PHASE_PLANNING = "planning"
PHASE_AWAITING = "awaiting_human"
PHASE_TERMINAL = "terminal"

SIGNAL_OK = "ok"
SIGNAL_ERROR = "error"
SIGNAL_DONE = "done"
SIGNAL_INJECT = "inject_failure"


class SessionError(Exception):
    pass


@dataclass
class LogRow:
    action: str
    obs: str
    p_hold: float | None
    reward: float


@dataclass
class Session:
    """One live episode: phase machine over planning / awaiting / terminal."""

    id: str
    htm: Htm
    plan_model: GenerativeModel
    filter_model: GenerativeModel
    search: SearchConfig
    seed: int
    pref_prior: float
    rng: Random
    belief: Belief
    phase: str = PHASE_PLANNING
    pending: int | None = None
    history: tuple[tuple[int, int], ...] = ()
    log: list[LogRow] = field(default_factory=list)
    total_reward: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    # -- operations ---------------------------------------------------------

    def advance(self) -> dict:
        """Plan the next action and hand the prompt to the human."""
        if self.phase != PHASE_PLANNING:
            raise SessionError(f"cannot plan while {self.phase}")
        action = plan_action(self.plan_model, self.belief, self.search, self.rng)
        self.pending = action
        self.phase = PHASE_AWAITING
        return self.prompt()

    def prompt(self) -> dict:
        if self.pending is None:
            raise SessionError("no outstanding prompt")
        return {
            "action": self.plan_model.action_label(self.pending),
            "legal_signals": self.legal_signals(),
        }

    def legal_signals(self) -> list[str]:
        if self.pending is None:
            return []
        if self.plan_model.actions[self.pending].kind == A_WAIT:
            return [SIGNAL_DONE, SIGNAL_ERROR]
        return [SIGNAL_OK, SIGNAL_ERROR]

    def handle_signal(self, signal: str) -> None:
        """Map the human's answer to an observation and adapt the belief."""
        if self.phase != PHASE_AWAITING or self.pending is None:
            raise SessionError("no prompt is awaiting an answer")
        action = self.pending
        is_wait = self.plan_model.actions[action].kind == A_WAIT
        if signal == SIGNAL_DONE and not is_wait:
            raise SessionError("'done' only answers a wait prompt")
        if signal == SIGNAL_OK and is_wait:
            raise SessionError("answer a wait prompt with 'done' (or 'error')")
        if signal in (SIGNAL_OK, SIGNAL_DONE):
            obs = OBS_NONE
        elif signal == SIGNAL_ERROR:
            obs = OBS_FAIL_WRONG
        elif signal == SIGNAL_INJECT:
            obs = OBS_FAIL_ROBOT
        else:
            raise SessionError(f"unknown signal {signal!r}")

        reward = self._display_reward(action, obs)
        self.belief = update_belief(
            self.filter_model, self.belief, action, obs, self.search, self.rng
        )
        self.history = self.history + ((action, obs),)
        summary = belief_marginals(self.filter_model, self.belief)
        p_hold = summary.pref_probs.get("hold")
        self.log.append(
            LogRow(
                action=self.plan_model.action_label(action),
                obs=obs_label(obs, with_kind=True),
                p_hold=None if p_hold is None else round(p_hold, 4),
                reward=reward,
            )
        )
        self.total_reward += reward
        self.pending = None
        self.phase = (
            PHASE_TERMINAL if summary.terminal_prob >= 1.0 else PHASE_PLANNING
        )

    def _display_reward(self, action: int, obs: int) -> float:
        """Reward of stepping the most-believed state; display bookkeeping
        only, the session never assumes a ground-truth state."""
        counts: dict = {}
        for p in self.belief.particles:
            counts[p] = counts.get(p, 0) + 1
        map_particle = min(
            (s for s, c in counts.items() if c == max(counts.values()))
        )
        if map_particle.pos >= len(self.plan_model.instances[map_particle.instance]):
            return 0.0
        display_rng = Random(f"{self.seed}:{len(self.log)}")
        _, _, reward = sample_step(self.plan_model, map_particle, action, display_rng)
        return reward

    def snapshot(self) -> dict:
        summary = belief_marginals(self.filter_model, self.belief)
        highlight = summary.map_leaf_name(self.filter_model)
        return {
            "session_id": self.id,
            "phase": self.phase,
            "prompt": self.prompt() if self.phase == PHASE_AWAITING else None,
            "marginals": {
                "prefs": {k: round(v, 4) for k, v in summary.pref_probs.items()},
                "objects": {k: round(v, 4) for k, v in summary.object_probs.items()},
                "position": [
                    {"instance": i, "pos": p, "prob": round(v, 4)}
                    for (i, p), v in summary.position_dist.items()
                ],
                "terminal_prob": round(summary.terminal_prob, 4),
            },
            "htm_highlight": highlight,
            "log": [
                {
                    "action": r.action,
                    "obs": r.obs,
                    "p_hold": r.p_hold,
                    "reward": r.reward,
                }
                for r in self.log
            ],
            "steps": len(self.log),
            "total_reward": self.total_reward,
            "seed": self.seed,
            "htm": json.loads(serialize_htm(self.htm)),
        }


def create_session(
    htm: Htm,
    *,
    search: SearchConfig | None = None,
    seed: int = 0,
    pref_prior: float = 0.5,
    noise: NoiseConfig | None = None,
    gamma: float = 0.95,
    session_id: str | None = None,
) -> Session:
    """Compile the model and initialize the belief from the preference prior."""
    diags = validate_htm(htm)
    if diags:
        raise SessionError("invalid task model: " + "; ".join(map(str, diags)))
    search = search if search is not None else SearchConfig()
    noise = noise if noise is not None else NoiseConfig.environment()
    base = compile_model(htm, gamma=gamma, pref_prior=pref_prior)
    filter_model = base.with_noise(noise)
    rng = Random(seed)
    belief = initial_belief(filter_model, search, rng, pref_prior)
    return Session(
        id=session_id or uuid.uuid4().hex[:12],
        htm=htm,
        plan_model=base.determinized(),
        filter_model=filter_model,
        search=search,
        seed=seed,
        pref_prior=pref_prior,
        rng=rng,
        belief=belief,
    )


# ---------------------------------------------------------------------------
# HTTP / WebSocket app


class StartRequest(BaseModel):
    benchmark: str | None = None
    benchmark_params: dict = {}
    htm_path: str | None = None
    seed: int = 0
    pref_prior: float = 0.5
    search: dict = {}
    noise: dict = {}


class SignalRequest(BaseModel):
    signal: str


def _state_message(session: Session) -> dict:
    return {"v": PROTOCOL_VERSION, "type": "state", "state": session.snapshot()}


def _prompt_message(session: Session) -> dict:
    return {"v": PROTOCOL_VERSION, "type": "prompt", "prompt": session.prompt()}


def _error_message(detail: str) -> dict:
    return {"v": PROTOCOL_VERSION, "type": "error", "detail": detail}


def _session_htm(req: StartRequest, default_config: dict) -> Htm:
    if req.htm_path:
        return parse_htm_file(req.htm_path)
    name = req.benchmark or default_config.get("benchmark", "table")
    params = req.benchmark_params or default_config.get("benchmark_params", {})
    return build_benchmark(name, **params)


def _start_session(req: StartRequest, default_config: dict) -> Session:
    htm = _session_htm(req, default_config)
    search_kwargs = dict(default_config.get("search", {}))
    search_kwargs.update(req.search)
    noise_kwargs = dict(default_config.get("noise", {}))
    noise_kwargs.update(req.noise)
    session = create_session(
        htm,
        search=SearchConfig(**search_kwargs),
        seed=req.seed,
        pref_prior=req.pref_prior,
        noise=NoiseConfig(**noise_kwargs) if noise_kwargs else None,
        gamma=default_config.get("gamma", 0.95),
    )
    session.advance()
    return session


def create_app(default_config: dict | None = None, static_dir: str | None = None) -> FastAPI:
    default_config = default_config or {}
    app = FastAPI(title="cobot session service")
    sessions: dict[str, Session] = {}
    app.state.sessions = sessions

    def _get(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return session

    @app.post("/sessions")
    def start(req: StartRequest) -> dict:
        try:
            session = _start_session(req, default_config)
        except (SessionError, ValueError, FileNotFoundError) as e:
            raise HTTPException(status_code=400, detail=str(e))
        sessions[session.id] = session
        return _state_message(session)

    @app.get("/sessions/{session_id}")
    def state(session_id: str) -> dict:
        return _state_message(_get(session_id))

    @app.post("/sessions/{session_id}/signal")
    def signal(session_id: str, req: SignalRequest) -> dict:
        session = _get(session_id)
        with session.lock:
            try:
                session.handle_signal(req.signal)
            except SessionError as e:
                raise HTTPException(status_code=409, detail=str(e))
            if session.phase == PHASE_PLANNING:
                session.advance()
        return _state_message(session)

    @app.post("/sessions/{session_id}/reset")
    def reset(session_id: str) -> dict:
        old = _get(session_id)
        fresh = create_session(
            old.htm,
            search=old.search,
            seed=old.seed,
            pref_prior=old.pref_prior,
            noise=old.filter_model.noise,
            session_id=old.id,
        )
        fresh.advance()
        sessions[old.id] = fresh
        return _state_message(fresh)

    @app.websocket("/ws")
    async def ws(socket: WebSocket) -> None:
        await socket.accept()
        session: Session | None = None
        try:
            while True:
                raw = await socket.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await socket.send_json(_error_message("malformed message"))
                    continue
                kind = msg.get("type")
                try:
                    if kind == "start":
                        req = StartRequest(**msg.get("config", {}))
                        session = _start_session(req, default_config)
                        sessions[session.id] = session
                    elif session is None:
                        await socket.send_json(_error_message("send start first"))
                        continue
                    elif kind == "signal":
                        with session.lock:
                            session.handle_signal(msg.get("signal", ""))
                            if session.phase == PHASE_PLANNING:
                                session.advance()
                    elif kind == "inject_failure":
                        with session.lock:
                            session.handle_signal(SIGNAL_INJECT)
                            if session.phase == PHASE_PLANNING:
                                session.advance()
                    elif kind == "reset":
                        session = _start_session(
                            StartRequest(
                                seed=session.seed, pref_prior=session.pref_prior
                            ),
                            default_config,
                        )
                        sessions[session.id] = session
                    else:
                        await socket.send_json(_error_message(f"unknown type {kind!r}"))
                        continue
                except (SessionError, ValueError) as e:
                    await socket.send_json(_error_message(str(e)))
                    continue
                await socket.send_json(_state_message(session))
                if session.phase == PHASE_AWAITING:
                    await socket.send_json(_prompt_message(session))
        except WebSocketDisconnect:
            return

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app
