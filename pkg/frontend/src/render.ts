/**
 * HTML renderers: model in, markup out. Pure string builders so the view
 * can be tested without a DOM; `main.ts` owns the actual elements.
 */

import {
  ConsoleModel,
  MapModel,
  PlanView,
  pendingClarification,
} from "./model.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderStatus(model: ConsoleModel): string {
  const crumb = model.executivePath.split("/").map(escapeHtml).join(" / ");
  const parts = [
    `<span class="badge ${model.connection}">${model.connection}</span>`,
    `<span class="scenario">${escapeHtml(model.scenario ?? "")}</span>`,
    `<span class="tick">tick ${model.tick}</span>`,
    `<span class="crumb">${crumb}</span>`,
  ];
  if (model.lastError !== null) {
    parts.push(`<span class="error">${escapeHtml(model.lastError)}</span>`);
  }
  return parts.join(" ");
}

export function renderTranscript(model: ConsoleModel): string {
  const lines = model.transcript.map(
    (t) =>
      `<li class="${escapeHtml(t.speaker)}">` +
      `<b>${escapeHtml(t.speaker)}</b>: ${escapeHtml(t.text)}</li>`,
  );
  const pending = pendingClarification(model)
    ? `<p class="pending">awaiting your answer</p>`
    : "";
  return `<ul>${lines.join("")}</ul>${pending}`;
}

export function renderPlan(plan: PlanView | null): string {
  if (plan === null) {
    return `<p class="empty">no plan</p>`;
  }
  const rows = plan.rows
    .map(
      (row, i) =>
        `<tr class="${row.status}"><td>${i}</td>` +
        `<td>${escapeHtml(row.name)}</td>` +
        `<td>${row.status}</td></tr>`,
    )
    .join("");
  return (
    `<p class="goal">${escapeHtml(plan.goal)} ` +
    `(${plan.status}, plan ${plan.plansGenerated})</p>` +
    `<table><tr><th>#</th><th>step</th><th>status</th></tr>${rows}</table>`
  );
}

/** Character map of the world: walls `#`, robot `R`, people `@`, objects
 * by their initial, free floor `.`. */
export function renderMap(map: MapModel | null): string {
  if (map === null) {
    return `<p class="empty">no map</p>`;
  }
  const grid: string[][] = Array.from({ length: map.height }, () =>
    Array.from({ length: map.width }, () => "."),
  );
  const put = (x: number, y: number, ch: string) => {
    if (grid[y] !== undefined && grid[y]![x] !== undefined) {
      grid[y]![x] = ch;
    }
  };
  for (const [x, y] of map.walls) {
    put(x, y, "#");
  }
  for (const name of Object.keys(map.objects).sort()) {
    for (const [x, y] of map.objects[name]!.cells) {
      put(x, y, (name[0] ?? "?").toUpperCase());
    }
  }
  for (const name of Object.keys(map.people).sort()) {
    const [x, y] = map.people[name]!;
    put(x, y, "@");
  }
  const [rx, ry] = map.robot.cell;
  put(rx, ry, "R");
  const held = map.robot.holding;
  const legendBits = [
    `robot R at ${rx},${ry} facing ${escapeHtml(map.robot.heading)}` +
      (held !== null ? ` holding ${escapeHtml(held)}` : ""),
    ...Object.keys(map.people)
      .sort()
      .map((n) => `${escapeHtml(n)} @`),
    ...Object.keys(map.objects)
      .sort()
      .map((n) => `${escapeHtml(n)} ${(n[0] ?? "?").toUpperCase()}`),
  ];
  return (
    `<pre class="grid">${grid.map((row) => row.join("")).join("\n")}</pre>` +
    `<p class="legend">${legendBits.join(" | ")}</p>`
  );
}
