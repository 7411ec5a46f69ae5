/**
 * Integration against a real gateway subprocess. These tests drive the same
 * code path the browser uses: GatewayClient for transport, the model
 * reducers for state. Test order matters; the first test relies on no wrist
 * tap having happened yet, and the parity test reloads the scenario.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, expect, test } from "vitest";

import { GatewayClient } from "../src/client.js";
import { LineSplitter, parseRecord } from "../src/ndjson.js";
import {
  applyConnection,
  applyError,
  applyRecord,
  applySnapshot,
  initialModel,
  pendingClarification,
  type ConsoleModel,
} from "../src/model.js";

const REPO_ROOT = fileURLToPath(new URL("../..", import.meta.url));
const SCENARIO = fileURLToPath(
  new URL("../../src/homebot/data/scenarios/apartment.json", import.meta.url),
);

let gateway: ChildProcess | null = null;
let base = "";

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function waitFor(
  check: () => boolean,
  timeoutMs: number,
  label: string,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (check()) {
      return;
    }
    await sleep(10);
  }
  throw new Error(`timed out waiting for ${label}`);
}

async function startGateway(): Promise<void> {
  let stderr = "";
  for (let attempt = 0; attempt < 4; attempt += 1) {
    const port = 20000 + Math.floor(Math.random() * 20000);
    const child = spawn(
      "python3",
      ["-m", "homebot.cli", "run", "--scenario", SCENARIO, "--port", String(port)],
      { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] },
    );
    stderr = "";
    child.stderr.on("data", (chunk) => {
      stderr += chunk;
    });
    const candidate = `http://127.0.0.1:${port}`;
    const deadline = Date.now() + 20000;
    while (Date.now() < deadline && child.exitCode === null) {
      try {
        const res = await fetch(`${candidate}/api/state`);
        if (res.ok) {
          await res.json();
          gateway = child;
          base = candidate;
          return;
        }
      } catch {
        // not listening yet
      }
      await sleep(100);
    }
    child.kill("SIGKILL");
  }
  throw new Error(`gateway failed to start: ${stderr}`);
}

beforeAll(async () => {
  await startGateway();
}, 100_000);

afterAll(() => {
  gateway?.kill("SIGKILL");
});

/** A console wired exactly like main.ts, plus probes for the guarantees the
 * view must keep: the tick never rewinds, and snapshots keep arriving on the
 * poll cadence. */
function startConsole() {
  const state = {
    model: initialModel(),
    errors: [] as string[],
    tickRewinds: 0,
    snapshotAt: [] as number[],
  };
  const observe = (next: ConsoleModel) => {
    if (next.tick < state.model.tick) {
      state.tickRewinds += 1;
    }
    state.model = next;
  };
  const client = new GatewayClient(base, {
    onSnapshot: (snap) => {
      state.snapshotAt.push(Date.now());
      observe(applySnapshot(state.model, snap));
    },
    onRecord: (record) => observe(applyRecord(state.model, record)),
    onConnection: (connection) => observe(applyConnection(state.model, connection)),
    onError: (text) => {
      state.errors.push(text);
      observe(applyError(state.model, text));
    },
  });
  client.start();
  return { client, state };
}

test("utterance with no dialog listening surfaces the gateway error verbatim", async () => {
  const { client, state } = startConsole();
  try {
    await waitFor(() => state.model.connection === "connected", 15000, "connect");
    expect(state.model.acceptingInput).toBe(false);
    expect(await client.sendUtterance("fetch the coke")).toBe(false);
    expect(state.errors).toHaveLength(1);
    const raw = state.errors[0]!;
    expect(state.model.lastError).toBe(raw);
    expect(JSON.parse(raw)).toEqual({
      error: "NotAcceptingInput",
      detail: "no command dialog is listening; tap the wrist first",
    });
  } finally {
    await client.stop();
  }
});

test("full command cycle: tap, greeting, command, plan to completion", async () => {
  const { client, state } = startConsole();
  try {
    await waitFor(() => state.model.connection === "connected", 15000, "connect");
    expect(await client.sendTap()).toBe(true);
    await waitFor(() => pendingClarification(state.model), 15000, "greeting");
    const greeting = state.model.transcript[state.model.transcript.length - 1];
    expect(greeting?.speaker).toBe("robot");
    expect(greeting?.text).toBe("how can i help?");
    expect(state.model.executivePath).toBe("top/dialog/converse");

    expect(await client.sendUtterance("fetch the coke")).toBe(true);
    await waitFor(() => state.model.plan !== null, 20000, "plan view");
    expect(state.model.plan!.goal).toBe("holding(robot,coke)");
    expect(state.model.plan!.rows.length).toBeGreaterThan(0);

    await waitFor(() => state.model.plan!.status === "Achieved", 45000, "goal achieved");
    expect(state.model.plan!.rows.every((row) => row.status === "done")).toBe(true);
    await waitFor(() => state.model.map?.robot.holding === "coke", 5000, "map holding");
    expect(
      state.model.transcript.some(
        (t) => t.speaker === "operator" && t.text === "fetch the coke",
      ),
    ).toBe(true);

    expect(state.errors).toEqual([]);
    expect(state.tickRewinds).toBe(0);
    // snapshots keep landing at the poll cadence, half the refresh budget
    const gaps = state.snapshotAt.slice(1).map((t, i) => t - state.snapshotAt[i]!);
    expect(gaps.length).toBeGreaterThanOrEqual(5);
    const sorted = [...gaps].sort((a, b) => a - b);
    expect(sorted[Math.floor(sorted.length / 2)]!).toBeLessThanOrEqual(500);
  } finally {
    await client.stop();
  }
});

function stableJson(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(stableJson).join(",")}]`;
  }
  if (value !== null && typeof value === "object") {
    const record = value as Record<string, unknown>;
    const body = Object.keys(record)
      .sort()
      .map((key) => `${JSON.stringify(key)}:${stableJson(record[key])}`)
      .join(",");
    return `{${body}}`;
  }
  return JSON.stringify(value);
}

/** Reload the scenario for a clean session, stream records, fire one tap,
 * and return the records from the tap event through the robot's opening
 * line, ticks shifted so the tap lands at zero. */
async function collectTapTrace(tap: () => Promise<void>): Promise<string[]> {
  const load = await fetch(`${base}/api/scenario/load`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ path: SCENARIO }),
  });
  expect(load.ok).toBe(true);

  const abort = new AbortController();
  const res = await fetch(`${base}/api/events`, { signal: abort.signal });
  expect(res.ok).toBe(true);
  const records: Record<string, any>[] = [];
  const pump = (async () => {
    const reader = res.body!.getReader();
    const splitter = new LineSplitter();
    const decoder = new TextDecoder();
    for (;;) {
      const { done, value } = await reader.read();
      if (done) {
        return;
      }
      for (const line of splitter.push(decoder.decode(value, { stream: true }))) {
        records.push(parseRecord(line));
      }
    }
  })().catch(() => undefined);

  await tap();
  await waitFor(
    () => records.some((r) => r.kind === "dialog" && r.speaker === "robot"),
    15000,
    "dialog opening after tap",
  );
  abort.abort();
  await pump;

  const start = records.findIndex((r) => r.kind === "tap");
  const end = records.findIndex((r) => r.kind === "dialog" && r.speaker === "robot");
  expect(start).toBeGreaterThanOrEqual(0);
  expect(end).toBeGreaterThan(start);
  const tapTick = records[start]!.tick as number;
  return records
    .slice(start, end + 1)
    .map((record) => stableJson({ ...record, tick: record.tick - tapTick }));
}

test("tap button and direct API tap leave identical gateway traces", async () => {
  const viaConsole = await collectTapTrace(async () => {
    const client = new GatewayClient(base, {
      onSnapshot: () => {},
      onRecord: () => {},
      onConnection: () => {},
      onError: (text) => {
        throw new Error(text);
      },
    });
    expect(await client.sendTap()).toBe(true);
  });
  const viaApi = await collectTapTrace(async () => {
    const res = await fetch(`${base}/api/event/tap`, { method: "POST" });
    expect(res.ok).toBe(true);
  });
  expect(viaConsole.length).toBeGreaterThanOrEqual(4);
  expect(viaConsole).toEqual(viaApi);
  expect(viaConsole.some((line) => line.includes("wrist_tap -> top:dialog"))).toBe(true);
});
