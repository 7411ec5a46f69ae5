/**
 * Browser entry point: one model, one client, one render pass per update.
 * The DOM is written only from here; everything else is pure.
 */

import { GatewayClient } from "./client.js";
import {
  ConsoleModel,
  applyConnection,
  applyError,
  applyRecord,
  applySnapshot,
  clearError,
  initialModel,
} from "./model.js";
import { renderMap, renderPlan, renderStatus, renderTranscript } from "./render.js";

function element(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el;
}

function main(): void {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("gateway") ?? "http://127.0.0.1:8000";

  let model: ConsoleModel = initialModel();
  const panes = {
    status: element("status"),
    transcript: element("transcript"),
    plan: element("plan"),
    map: element("map"),
  };

  const render = () => {
    panes.status.innerHTML = renderStatus(model);
    panes.transcript.innerHTML = renderTranscript(model);
    panes.plan.innerHTML = renderPlan(model.plan);
    panes.map.innerHTML = renderMap(model.map);
  };

  const update = (next: ConsoleModel) => {
    model = next;
    render();
  };

  const client = new GatewayClient(base, {
    onSnapshot: (snap) => update(applySnapshot(model, snap)),
    onRecord: (record) => update(applyRecord(model, record)),
    onConnection: (status) => update(applyConnection(model, status)),
    onError: (text) => update(applyError(model, text)),
  });

  const input = element("utterance") as HTMLInputElement;
  element("say").addEventListener("click", () => {
    const text = input.value.trim();
    if (text.length === 0) {
      return;
    }
    update(clearError(model));
    void client.sendUtterance(text).then((ok) => {
      if (ok) {
        input.value = "";
      }
    });
  });
  input.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") {
      element("say").click();
    }
  });
  element("tap").addEventListener("click", () => {
    update(clearError(model));
    void client.sendTap();
  });

  render();
  client.start();
}

main();
