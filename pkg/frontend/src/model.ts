/**
 * Console model and reducers. Pure data in, new model out: every field is a
 * copy of something the gateway said, either in a `/api/state` snapshot or
 * in an `/api/events` record. Nothing here invents state.
 */

export type Connection = "connecting" | "connected" | "retrying";

export interface DialogTurn {
  speaker: string;
  text: string;
  tick: number;
}

export type StepStatus =
  | "pending"
  | "active"
  | "done"
  | "diverged"
  | "failed"
  | "preempted";

export interface PlanRow {
  name: string;
  status: StepStatus;
}

export interface PlanView {
  goal: string;
  rows: PlanRow[];
  activeIndex: number | null;
  plansGenerated: number;
  status: string;
  // row overrides learned from stream records (e.g. a preempt) that the
  // snapshot's milestone list does not carry; keyed by step index
  overrides: Record<number, StepStatus>;
}

export interface MapModel {
  width: number;
  height: number;
  walls: [number, number][];
  rooms: Record<string, [number, number, number, number]>;
  robot: { cell: [number, number]; heading: string; holding: string | null };
  objects: Record<string, { cells: [number, number][]; category: string | null }>;
  people: Record<string, [number, number]>;
}

export interface ConsoleModel {
  connection: Connection;
  lastError: string | null;
  scenario: string | null;
  tick: number;
  executivePath: string;
  executiveDone: string | null;
  acceptingInput: boolean;
  transcript: DialogTurn[];
  plan: PlanView | null;
  map: MapModel | null;
}

export type Snapshot = Record<string, any>;
export type StreamRecord = Record<string, any>;

export function initialModel(): ConsoleModel {
  return {
    connection: "connecting",
    lastError: null,
    scenario: null,
    tick: 0,
    executivePath: "",
    executiveDone: null,
    acceptingInput: false,
    transcript: [],
    plan: null,
    map: null,
  };
}

export function applyConnection(
  model: ConsoleModel, connection: Connection,
): ConsoleModel {
  return { ...model, connection };
}

export function applyError(model: ConsoleModel, text: string): ConsoleModel {
  return { ...model, lastError: text };
}

export function clearError(model: ConsoleModel): ConsoleModel {
  return { ...model, lastError: null };
}

function planFromSnapshot(
  snap: Snapshot, previous: PlanView | null,
): PlanView | null {
  const p = snap.plan;
  if (!p) {
    return null;
  }
  const rows: PlanRow[] = (p.steps as string[]).map((name) => ({
    name,
    status: "pending",
  }));
  for (const m of p.milestones ?? []) {
    const row = m.index == null ? undefined : rows[m.index];
    if (row === undefined) {
      continue;
    }
    if (m.kind === "ActionCompleted") {
      row.status = "done";
    } else if (m.kind === "Divergence") {
      row.status = "diverged";
    } else if (m.kind === "ActionFailed") {
      row.status = "failed";
    }
  }
  const active = p.current_step ?? null;
  const activeRow = active == null ? undefined : rows[active];
  if (activeRow !== undefined && activeRow.status === "pending") {
    activeRow.status = "active";
  }
  // overrides survive only while they describe the same plan
  const samePlan =
    previous !== null &&
    previous.goal === p.goal &&
    previous.plansGenerated === p.plans &&
    previous.rows.length === rows.length;
  const overrides = samePlan ? previous.overrides : {};
  for (const [index, status] of Object.entries(overrides)) {
    const row = rows[Number(index)];
    if (row !== undefined && row.status !== "done") {
      row.status = status;
    }
  }
  return {
    goal: p.goal,
    rows,
    activeIndex: active,
    plansGenerated: p.plans,
    status: p.status,
    overrides,
  };
}

function mapFromSnapshot(snap: Snapshot): MapModel | null {
  const w = snap.world;
  if (!w) {
    return null;
  }
  return {
    width: w.width,
    height: w.height,
    walls: w.walls,
    rooms: w.rooms,
    robot: w.robot,
    objects: w.objects,
    people: w.people,
  };
}

/** Full resync from `/api/state`; the snapshot is authoritative for every
 * pane, and the tick only ever moves forward. */
export function applySnapshot(model: ConsoleModel, snap: Snapshot): ConsoleModel {
  return {
    ...model,
    scenario: snap.scenario,
    tick: Math.max(model.tick, snap.tick),
    executivePath: snap.executive?.path ?? model.executivePath,
    executiveDone: snap.executive?.done ?? null,
    acceptingInput: Boolean(snap.accepting_input),
    transcript: (snap.transcript as DialogTurn[]).map((t) => ({ ...t })),
    plan: planFromSnapshot(snap, model.plan),
    map: mapFromSnapshot(snap),
  };
}

function appendTurn(transcript: DialogTurn[], turn: DialogTurn): DialogTurn[] {
  // stream records and snapshot resyncs overlap; keep one copy
  const seen = transcript.some(
    (t) => t.tick === turn.tick && t.speaker === turn.speaker && t.text === turn.text,
  );
  return seen ? transcript : [...transcript, turn];
}

/** One `/api/events` record. Dialog records extend the transcript, executive
 * records move the breadcrumb, milestones update the plan table. */
export function applyRecord(model: ConsoleModel, record: StreamRecord): ConsoleModel {
  const next: ConsoleModel = {
    ...model,
    tick: Math.max(model.tick, record.tick ?? 0),
  };
  if (record.kind === "dialog") {
    next.transcript = appendTurn(model.transcript, {
      speaker: record.speaker,
      text: record.text,
      tick: record.tick,
    });
  } else if (record.kind === "executive") {
    next.executivePath = record.path;
    if (record.step === "preempt" && model.plan !== null) {
      next.plan = markPreempted(model.plan);
    }
  } else if (record.kind === "milestone" && model.plan !== null) {
    next.plan = applyMilestone(model.plan, record);
  }
  return next;
}

function markPreempted(plan: PlanView): PlanView {
  if (plan.activeIndex == null) {
    return plan;
  }
  const rows = plan.rows.map((row, i) =>
    i === plan.activeIndex && row.status !== "done"
      ? { ...row, status: "preempted" as StepStatus }
      : row,
  );
  return {
    ...plan,
    rows,
    overrides: { ...plan.overrides, [plan.activeIndex]: "preempted" },
  };
}

function applyMilestone(plan: PlanView, record: StreamRecord): PlanView {
  const rows = plan.rows.map((row) => ({ ...row }));
  const row = record.index == null ? undefined : rows[record.index];
  if (row !== undefined) {
    if (record.milestone === "ActionCompleted") {
      row.status = "done";
    } else if (record.milestone === "Divergence") {
      row.status = "diverged";
    } else if (record.milestone === "ActionFailed") {
      row.status = "failed";
    }
  }
  let status = plan.status;
  if (record.milestone === "GoalAchieved") {
    status = "Achieved";
  } else if (record.milestone === "GoalAbandoned") {
    status = "Abandoned";
  }
  return { ...plan, rows, status };
}

/** A clarification is pending iff the robot spoke last and the gateway is
 * still listening for an answer. */
export function pendingClarification(model: ConsoleModel): boolean {
  const last = model.transcript[model.transcript.length - 1];
  return model.acceptingInput && last !== undefined && last.speaker === "robot";
}
