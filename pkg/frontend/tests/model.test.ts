/** Reducer contracts: ticks only move forward, panes mirror the gateway,
 * and the clarification flag tracks the conversation exactly. */

import { describe, expect, test } from "vitest";

import {
  ConsoleModel,
  applyError,
  applyRecord,
  applySnapshot,
  clearError,
  initialModel,
  pendingClarification,
} from "../src/model.js";

function snapshot(overrides: Record<string, any> = {}): Record<string, any> {
  return {
    scenario: "apartment",
    tick: 0,
    executive: { path: "top/idle", done: null },
    accepting_input: false,
    plan: null,
    transcript: [],
    world: {
      width: 5,
      height: 4,
      walls: [[0, 0]],
      rooms: { den: [1, 1, 3, 2] },
      robot: { cell: [1, 1], heading: "E", holding: null },
      objects: { coke: { cells: [[2, 2]], category: "drink" } },
      people: { alice: [3, 1] },
    },
    ...overrides,
  };
}

const planSnapshot = (overrides: Record<string, any> = {}) =>
  snapshot({
    plan: {
      goal: "holding(robot,coke)",
      steps: ["go(living_room,kitchen)", "pick(coke,kitchen)"],
      current_step: 0,
      plans: 1,
      status: "Running",
      milestones: [],
      ...overrides,
    },
  });

describe("tick monotonicity", () => {
  test("a stale snapshot cannot move the tick backwards", () => {
    let model = applyRecord(initialModel(), { kind: "speech", tick: 10 });
    expect(model.tick).toBe(10);
    model = applySnapshot(model, snapshot({ tick: 7 }));
    expect(model.tick).toBe(10);
    model = applySnapshot(model, snapshot({ tick: 12 }));
    expect(model.tick).toBe(12);
  });
});

describe("transcript", () => {
  const greeting = { kind: "dialog", speaker: "robot", text: "how can i help?", tick: 5 };

  test("stream records append and snapshot resyncs do not duplicate", () => {
    let model = applyRecord(initialModel(), greeting);
    expect(model.transcript).toHaveLength(1);
    model = applySnapshot(
      model,
      snapshot({ transcript: [{ speaker: "robot", text: "how can i help?", tick: 5 }] }),
    );
    model = applyRecord(model, greeting);
    expect(model.transcript).toHaveLength(1);
  });

  test("clarification pending iff the robot spoke last and input is open", () => {
    let model = initialModel();
    expect(pendingClarification(model)).toBe(false);

    model = applySnapshot(model, snapshot({ accepting_input: true }));
    model = applyRecord(model, greeting);
    expect(pendingClarification(model)).toBe(true);

    const answer = { kind: "dialog", speaker: "operator", text: "fetch the coke", tick: 8 };
    model = applyRecord(model, answer);
    expect(pendingClarification(model)).toBe(false);

    const question = { kind: "dialog", speaker: "robot", text: "which object should i fetch?", tick: 9 };
    model = applyRecord(model, question);
    expect(pendingClarification(model)).toBe(true);

    model = applySnapshot(model, snapshot({ accepting_input: false, tick: 20 }));
    expect(pendingClarification(model)).toBe(false);
  });
});

describe("plan table", () => {
  test("rows derive from snapshot milestones and the current step", () => {
    const model = applySnapshot(
      initialModel(),
      planSnapshot({
        current_step: 1,
        milestones: [{ kind: "ActionCompleted", tick: 3, index: 0 }],
      }),
    );
    expect(model.plan?.rows.map((r) => r.status)).toEqual(["done", "active"]);
    expect(model.plan?.goal).toBe("holding(robot,coke)");
  });

  test("stream milestones update rows and terminal status", () => {
    let model = applySnapshot(initialModel(), planSnapshot());
    model = applyRecord(model, { kind: "milestone", milestone: "ActionCompleted", tick: 4, index: 0 });
    expect(model.plan?.rows[0]?.status).toBe("done");
    model = applyRecord(model, { kind: "milestone", milestone: "GoalAchieved", tick: 9, index: null });
    expect(model.plan?.status).toBe("Achieved");
  });

  test("divergence marks its step", () => {
    let model = applySnapshot(initialModel(), planSnapshot());
    model = applyRecord(model, {
      kind: "milestone", milestone: "Divergence", tick: 6, index: 1,
      missing: ["holding(robot,coke)"], extra: [],
    });
    expect(model.plan?.rows[1]?.status).toBe("diverged");
  });

  test("a preempt record marks the active step and survives resync", () => {
    let model = applySnapshot(initialModel(), planSnapshot({ current_step: 1 }));
    model = applyRecord(model, {
      kind: "executive", tick: 7, path: "top/dialog/converse",
      step: "preempt", detail: "wrist_tap -> top:dialog",
    });
    expect(model.plan?.rows[1]?.status).toBe("preempted");
    expect(model.executivePath).toBe("top/dialog/converse");

    // the same plan seen again in a snapshot keeps the learned mark
    model = applySnapshot(model, planSnapshot({ current_step: null, status: "Abandoned" }));
    expect(model.plan?.rows[1]?.status).toBe("preempted");
    expect(model.plan?.status).toBe("Abandoned");

    // a new plan clears it
    model = applySnapshot(model, planSnapshot({ plans: 2 }));
    expect(model.plan?.rows[1]?.status).toBe("pending");
  });
});

describe("map and errors", () => {
  test("map model copies the snapshot world", () => {
    const model = applySnapshot(initialModel(), snapshot());
    expect(model.map?.width).toBe(5);
    expect(model.map?.robot.cell).toEqual([1, 1]);
    expect(model.map?.objects.coke?.cells).toEqual([[2, 2]]);
    expect(model.map?.people.alice).toEqual([3, 1]);
  });

  test("endpoint errors are stored verbatim and clearable", () => {
    const body = '{"error":"NotAcceptingInput","detail":"no command dialog is listening; tap the wrist first"}';
    let model = applyError(initialModel(), body);
    expect(model.lastError).toBe(body);
    model = clearError(model);
    expect(model.lastError).toBeNull();
  });

  test("reducers leave their inputs untouched", () => {
    const before: ConsoleModel = applySnapshot(initialModel(), planSnapshot());
    const frozen = JSON.stringify(before);
    applyRecord(before, { kind: "milestone", milestone: "ActionCompleted", tick: 4, index: 0 });
    applyRecord(before, { kind: "dialog", speaker: "robot", text: "hi", tick: 4 });
    applySnapshot(before, snapshot({ tick: 30 }));
    expect(JSON.stringify(before)).toBe(frozen);
  });
});
