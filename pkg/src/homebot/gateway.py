"""Service gateway: one live session exposed over HTTP or a scripted run.

The session owns the runtime and advances it from a single tick loop; HTTP
handlers never mutate state directly. They enqueue work onto the runtime's
control queue and read immutable snapshots published at the end of each
tick, so every response is internally consistent and at most one tick old.
"""

from __future__ import annotations

import json
import queue
import socket
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from .dialog import (
    BadTaskSchema,
    load_tasks,
    register_dialog_skills,
    validate_grammar_tasks,
)
from .executor import Deliberative
from .grammar import GrammarError, load_grammar
from .kb import KnowledgeBase
from .planning import BadDomain, load_domain
from .reactive import BadMachine, Executive, load_machines
from .runtime import Runtime
from .skills import DONE, SkillRegistry
from .skill_library import register_all
from .world import STATIC, BadScenario, load_scenario

DATA_DIR = Path(__file__).resolve().parent / "data"

DEFAULT_TICK_RATE = 20.0  # served ticks per second; logic is rate independent

_CLOSE = object()  # sentinel pushed to subscriber queues on shutdown


class GatewayError(Exception):
    pass


class ConfigError(GatewayError):
    def __init__(self, file: Union[Path, str], diagnostic: str):
        super().__init__(f"{file}: {diagnostic}")
        self.file = str(file)
        self.diagnostic = diagnostic


class PortUnavailable(GatewayError):
    def __init__(self, port: int):
        super().__init__(f"port {port} is unavailable")
        self.port = port


@dataclass(frozen=True)
class GatewayConfig:
    scenario: Union[Path, str]
    grammar: Union[Path, str] = DATA_DIR / "grammar.txt"
    domain: Union[Path, str] = DATA_DIR / "domain.json"
    machines: Union[Path, str] = DATA_DIR / "machines.json"
    tasks: Union[Path, str] = DATA_DIR / "tasks.json"
    host: str = "127.0.0.1"
    port: int = 8000


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def _read(path: Union[Path, str], label: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(path, f"cannot read {label}: {err}") from err


class Session:
    """A live runtime plus the machinery to observe and drive it.

    Ticks happen only through `tick_once`, called either by the loop thread
    started with `start` or directly by a scripted driver. Each tick appends
    the new trace and event records to every subscriber and replaces the
    state snapshot atomically.
    """

    def __init__(self, config: GatewayConfig):
        self.config = config
        self._subscribers: list[queue.SimpleQueue] = []
        self._sub_lock = threading.Lock()
        self._swap_lock = threading.RLock()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._build(config.scenario)

    # -- construction ------------------------------------------------------

    def _build(self, scenario: Union[Path, str]) -> None:
        config = self.config
        try:
            grammar = load_grammar(_read(config.grammar, "grammar"))
        except GrammarError as err:
            raise ConfigError(config.grammar, str(err)) from err
        try:
            tasks = load_tasks(Path(config.tasks))
        except (BadTaskSchema, OSError, json.JSONDecodeError) as err:
            raise ConfigError(config.tasks, str(err)) from err
        defects = validate_grammar_tasks(grammar, tasks)
        if defects:
            raise ConfigError(config.tasks, "; ".join(defects))
        try:
            domain = load_domain(Path(config.domain))
        except (BadDomain, OSError, json.JSONDecodeError) as err:
            raise ConfigError(config.domain, str(err)) from err
        try:
            machine_set = load_machines(Path(config.machines))
        except (BadMachine, OSError, json.JSONDecodeError) as err:
            raise ConfigError(config.machines, str(err)) from err

        kb = KnowledgeBase()
        try:
            world = load_scenario(scenario, kb)
        except (BadScenario, OSError, json.JSONDecodeError) as err:
            raise ConfigError(scenario, str(err)) from err

        registry = SkillRegistry()
        register_all(registry)
        register_dialog_skills(registry, grammar, tasks)
        rt = Runtime(world, kb, registry)
        rt.deliberative = Deliberative(domain)
        try:
            executive = Executive(machine_set, registry=registry, strict=True)
        except BadMachine as err:
            raise ConfigError(config.machines, str(err)) from err
        rt.executive = executive

        self.rt = rt
        self.executive = executive
        self.scenario_id = (
            Path(scenario).stem if not isinstance(scenario, dict) else "inline"
        )
        self._event_cursor = 0
        self._trace_cursor = 0
        self._transcript: list[dict] = []
        self._walls = sorted(
            [x, y]
            for x in range(world.grid.width)
            for y in range(world.grid.height)
            if world.grid.occ((x, y)) == STATIC
        )
        self._snapshot: dict = {}
        self._publish_snapshot()

    # -- ticking -------------------------------------------------------------

    def tick_once(self) -> list[str]:
        """Advance one tick; returns the NDJSON records it produced."""
        with self._swap_lock:
            tick = self.rt.now
            self.rt.tick()
            lines = self._collect(tick)
            self._publish_snapshot()
        self._emit(lines)
        return lines

    def start(self, rate: float = DEFAULT_TICK_RATE) -> None:
        interval = 1.0 / rate if rate > 0 else 0.0

        def loop() -> None:
            while not self._stop.is_set():
                self.tick_once()
                if interval:
                    self._stop.wait(interval)

        self._thread = threading.Thread(target=loop, name="session-tick", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
        self._close_streams()

    # -- event stream --------------------------------------------------------

    def subscribe(self) -> queue.SimpleQueue:
        q: queue.SimpleQueue = queue.SimpleQueue()
        with self._sub_lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.SimpleQueue) -> None:
        with self._sub_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def stream_from(self, q: queue.SimpleQueue) -> Iterator[str]:
        try:
            while True:
                try:
                    item = q.get(timeout=0.25)
                except queue.Empty:
                    if self._stop.is_set():
                        return
                    continue
                if item is _CLOSE:
                    return
                yield item + "\n"
        finally:
            self.unsubscribe(q)

    def event_stream(self) -> Iterator[str]:
        return self.stream_from(self.subscribe())

    def _emit(self, lines: list[str]) -> None:
        with self._sub_lock:
            subscribers = list(self._subscribers)
        for q in subscribers:
            for line in lines:
                q.put(line)

    def _close_streams(self) -> None:
        with self._sub_lock:
            subscribers = list(self._subscribers)
        for q in subscribers:
            q.put(_CLOSE)

    def _collect(self, tick: int) -> list[str]:
        records: list[dict] = []
        trace = self.executive.trace
        while self._trace_cursor < len(trace):
            r = trace[self._trace_cursor]
            self._trace_cursor += 1
            records.append(
                {
                    "kind": "executive",
                    "tick": r.tick,
                    "path": r.path,
                    "step": r.kind,
                    "detail": r.detail,
                }
            )
        log = self.rt.event_log
        while self._event_cursor < len(log):
            event = dict(log[self._event_cursor])
            self._event_cursor += 1
            event.setdefault("tick", tick)
            records.append(event)
            if event["kind"] == "dialog":
                self._transcript.append(
                    {
                        "speaker": event["speaker"],
                        "text": event["text"],
                        "tick": event["tick"],
                    }
                )
        return [_dumps(r) for r in records]

    # -- state snapshot --------------------------------------------------------

    def state(self) -> dict:
        with self._swap_lock:
            return self._snapshot

    def _accepting(self) -> bool:
        return any(
            inv.state != DONE and inv.goal.skill == "command_dialog"
            for inv in self.rt.invocations.values()
        )

    def _plan_view(self) -> Optional[dict]:
        episode = self.rt.deliberative.episode
        if episode is None:
            return None
        run = episode.run
        steps = [s.name for s in run.plan.steps] if run is not None else (
            [s.name for s in episode.plans[-1].steps] if episode.plans else []
        )
        return {
            "goal": str(episode.goal),
            "steps": steps,
            "current_step": run.index if run is not None and run.status is None else None,
            "plans": len(episode.plans),
            "status": episode.status.kind if episode.status is not None else "Running",
            "milestones": [
                {
                    "kind": m.kind,
                    "tick": m.tick,
                    "index": m.index,
                    "reason": m.reason,
                    "missing": [str(f) for f in m.missing],
                    "extra": [str(f) for f in m.extra],
                }
                for m in episode.milestones
            ],
        }

    def _publish_snapshot(self) -> None:
        rt = self.rt
        world = rt.world
        robot = world.robot
        holding = (
            world.objects[robot.holding].name if robot.holding is not None else None
        )
        snapshot = {
            "scenario": self.scenario_id,
            "tick": rt.now,
            "executive": {"path": self.executive.path(), "done": self.executive.done},
            "accepting_input": self._accepting(),
            "plan": self._plan_view(),
            "transcript": list(self._transcript),
            "world": {
                "width": world.grid.width,
                "height": world.grid.height,
                "walls": self._walls,
                "rooms": {name: list(box) for name, box in world.rooms.items()},
                "robot": {
                    "cell": list(robot.cell),
                    "heading": robot.heading,
                    "holding": holding,
                },
                "objects": {
                    obj.name: {
                        "cells": [list(c) for c in obj.footprint],
                        "category": obj.category,
                    }
                    for obj in world.objects.values()
                },
                "people": {
                    person.name: list(person.cell)
                    for person in world.people.values()
                },
            },
        }
        self._snapshot = snapshot

    # -- operator input ----------------------------------------------------------

    def handle_utterance(self, text: str) -> Optional[dict]:
        """Route operator text to the live dialog; None when nothing listens."""
        snapshot = self.state()
        if not snapshot["accepting_input"]:
            return None
        self.rt.post_operator_text(text)
        return {"accepted": True, "tick": snapshot["tick"]}

    def handle_tap(self) -> dict:
        """Queue a wrist tap for the next tick, same path as a scripted tap."""
        rt = self.rt
        rt.post(lambda: rt.world.inject({"kind": "tap", "tick": rt.now}))
        return {"accepted": True}

    def load_scenario_file(self, path: Union[Path, str]) -> dict:
        """Replace the world with a fresh scenario; streams restart."""
        with self._swap_lock:
            self._build(path)
        self._close_streams()
        return {"loaded": self.scenario_id, "tick": self.rt.now}


# -- HTTP surface -----------------------------------------------------------


def build_app(session: Session) -> FastAPI:
    app = FastAPI(title="homebot gateway")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.session = session

    @app.get("/api/state")
    def state() -> JSONResponse:
        return JSONResponse(session.state())

    @app.post("/api/utterance")
    def utterance(payload: dict) -> JSONResponse:
        text = payload.get("text")
        if not isinstance(text, str) or not text.strip():
            return JSONResponse(
                status_code=422,
                content={"error": "BadRequest", "detail": "body needs a text field"},
            )
        result = session.handle_utterance(text)
        if result is None:
            return JSONResponse(
                status_code=409,
                content={
                    "error": "NotAcceptingInput",
                    "detail": "no command dialog is listening; tap the wrist first",
                },
            )
        return JSONResponse(result)

    @app.post("/api/event/tap")
    def tap() -> JSONResponse:
        return JSONResponse(session.handle_tap())

    @app.get("/api/events")
    def events() -> StreamingResponse:
        # subscribe before the response starts so no tick falls in the gap
        q = session.subscribe()
        return StreamingResponse(
            session.stream_from(q), media_type="application/x-ndjson"
        )

    @app.post("/api/scenario/load")
    def scenario_load(payload: dict) -> JSONResponse:
        path = payload.get("path")
        if not isinstance(path, str) or not path.strip():
            return JSONResponse(
                status_code=422,
                content={"error": "BadRequest", "detail": "body needs a path field"},
            )
        try:
            return JSONResponse(session.load_scenario_file(path))
        except ConfigError as err:
            return JSONResponse(
                status_code=400,
                content={
                    "error": "ConfigError",
                    "file": err.file,
                    "detail": err.diagnostic,
                },
            )

    return app


def _probe_port(host: str, port: int) -> None:
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    except OSError as err:
        raise PortUnavailable(port) from err
    finally:
        probe.close()


def serve(config: GatewayConfig, rate: float = DEFAULT_TICK_RATE) -> None:
    """Validate the config, claim the port, then run until interrupted."""
    import uvicorn

    session = Session(config)
    _probe_port(config.host, config.port)
    session.start(rate)
    app = build_app(session)
    try:
        uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    finally:
        session.stop()


# -- scripted headless runs ---------------------------------------------------


def load_script(source: Union[Path, str, dict]) -> dict:
    """Script files carry a tick budget and timed operator inputs:
    {"ticks": 200, "inputs": [{"tick": 3, "kind": "tap"},
                              {"tick": 9, "kind": "utterance", "text": ...}]}
    """
    if isinstance(source, dict):
        data = source
        where = "script"
    else:
        where = str(source)
        try:
            data = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(source, f"cannot read script: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(where, "script must be a JSON object")
    ticks = data.get("ticks", 200)
    if not isinstance(ticks, int) or ticks <= 0:
        raise ConfigError(where, "ticks must be a positive integer")
    inputs = data.get("inputs", [])
    if not isinstance(inputs, list):
        raise ConfigError(where, "inputs must be a list")
    for entry in inputs:
        if not isinstance(entry, dict) or not isinstance(entry.get("tick"), int):
            raise ConfigError(where, f"bad input entry {entry!r}")
        kind = entry.get("kind")
        if kind == "utterance":
            if not isinstance(entry.get("text"), str):
                raise ConfigError(where, "utterance inputs need a text field")
        elif kind != "tap":
            raise ConfigError(where, f"unknown input kind {kind!r}")
    return {"ticks": ticks, "inputs": inputs}


def run_headless(
    config: GatewayConfig,
    script: Union[Path, str, dict],
    log_path: Optional[Union[Path, str]] = None,
) -> list[str]:
    """Run a fixed tick budget with scripted inputs; returns the NDJSON log.

    Records carry ticks, never wall-clock time, so identical configs and
    scripts reproduce the log byte for byte.
    """
    plan = load_script(script)
    session = Session(config)
    by_tick: dict[int, list[dict]] = {}
    for entry in plan["inputs"]:
        by_tick.setdefault(entry["tick"], []).append(entry)

    lines: list[str] = []
    for _ in range(plan["ticks"]):
        now = session.rt.now
        for entry in by_tick.get(now, ()):
            if entry["kind"] == "tap":
                session.rt.world.inject({"kind": "tap", "tick": now})
            else:
                accepted = session.handle_utterance(entry["text"])
                if accepted is None:
                    lines.append(
                        _dumps(
                            {
                                "kind": "input_rejected",
                                "tick": now,
                                "text": entry["text"],
                            }
                        )
                    )
        lines.extend(session.tick_once())
    if log_path is not None:
        Path(log_path).write_text("".join(line + "\n" for line in lines), "utf-8")
    return lines
