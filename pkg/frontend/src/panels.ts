/**
 * Panel renderers. Every number shown comes straight out of a gateway
 * response body (raw values are also mirrored into data-* attributes for
 * the snapshot tests); the panels never re-aggregate records themselves.
 */

import { barChart, lineChart } from "./charts.js";
import type { DashboardFilters } from "./filters.js";
import { selectedGroup } from "./filters.js";
import type {
  OutstandingOrder,
  OutstandingResponse,
  TatGroupStats,
  TatResponse,
  VolumesResponse,
} from "./types.js";

export interface TrendPoint {
  ts: number;
  medianMs: number;
  p90Ms: number;
}

export function formatDuration(ms: number): string {
  if (ms < 1000) return `${Math.round(ms)}ms`;
  const totalSeconds = Math.round(ms / 1000);
  const h = Math.floor(totalSeconds / 3600);
  const m = Math.floor((totalSeconds % 3600) / 60);
  const s = totalSeconds % 60;
  if (h > 0) return `${h}h ${m}m`;
  if (m > 0) return `${m}m ${s}s`;
  return `${s}s`;
}

export function formatClock(ts: number): string {
  return new Date(ts).toISOString().replace("T", " ").slice(0, 19) + "Z";
}

function empty(el: HTMLElement, message: string): void {
  el.replaceChildren();
  const div = document.createElement("div");
  div.className = "empty-state";
  div.dataset.testid = "empty-state";
  div.textContent = message;
  el.appendChild(div);
}

function statBlock(label: string, testid: string, ms: number): HTMLElement {
  const wrap = document.createElement("div");
  wrap.className = "stat";
  const value = document.createElement("div");
  value.className = "stat-value";
  value.dataset.testid = testid;
  value.dataset.ms = String(ms);
  value.textContent = formatDuration(ms);
  const caption = document.createElement("div");
  caption.className = "stat-label";
  caption.textContent = label;
  wrap.append(value, caption);
  return wrap;
}

/** Pick the group the filters select from a grouped gateway response. */
export function groupForFilters<T>(
  groups: Record<string, T>,
  filters: DashboardFilters,
): T | null {
  return groups[selectedGroup(filters)] ?? null;
}

export function renderTatPanel(
  el: HTMLElement,
  response: TatResponse | null,
  filters: DashboardFilters,
  history: TrendPoint[],
): TatGroupStats | null {
  if (!response) {
    empty(el, "no data in this window");
    return null;
  }
  const stats = groupForFilters(response.groups, filters);
  if (!stats || stats.count === 0) {
    empty(el, "no completed orders in this window");
    return null;
  }
  el.replaceChildren();
  const row = document.createElement("div");
  row.className = "stat-row";
  row.append(
    statBlock("median TAT", "tat-median", stats.median_ms),
    statBlock("p90 TAT", "tat-p90", stats.p90_ms),
  );
  const count = document.createElement("div");
  count.className = "stat";
  const countValue = document.createElement("div");
  countValue.className = "stat-value";
  countValue.dataset.testid = "tat-count";
  countValue.textContent = String(stats.count);
  const countLabel = document.createElement("div");
  countLabel.className = "stat-label";
  countLabel.textContent = "completed";
  count.append(countValue, countLabel);
  row.appendChild(count);
  el.appendChild(row);
  if (history.length > 0) {
    el.appendChild(lineChart([
      { name: "median", color: "#2f81f7", points: history.map((p) => [p.ts, p.medianMs]) },
      { name: "p90", color: "#d29922", points: history.map((p) => [p.ts, p.p90Ms]) },
    ]));
  }
  return stats;
}

export interface OutstandingCallbacks {
  onSelect: (order: OutstandingOrder) => void;
  selectedId: string | null;
}

export function renderOutstandingPanel(
  el: HTMLElement,
  response: OutstandingResponse | null,
  callbacks: OutstandingCallbacks,
): void {
  if (!response) {
    empty(el, "no data in this window");
    return;
  }
  el.replaceChildren();
  const total = document.createElement("div");
  total.className = "panel-total";
  total.dataset.testid = "outstanding-total";
  total.dataset.count = String(response.total);
  total.textContent = `${response.total} outstanding`;
  el.appendChild(total);
  if (response.orders.length === 0) {
    empty(el, "nothing outstanding");
    return;
  }
  const table = document.createElement("table");
  table.dataset.testid = "outstanding-table";
  const head = table.createTHead().insertRow();
  for (const caption of ["order", "lab", "location", "status", "age"]) {
    const th = document.createElement("th");
    th.textContent = caption;
    head.appendChild(th);
  }
  const body = table.createTBody();
  const rows = [...response.orders].sort((a, b) => b.age_ms - a.age_ms);
  for (const order of rows) {
    const tr = body.insertRow();
    tr.dataset.orderId = order.order_id;
    tr.dataset.ageMs = String(order.age_ms);
    if (order.order_id === callbacks.selectedId) {
      tr.classList.add("selected");
    }
    tr.insertCell().textContent = order.order_id;
    tr.insertCell().textContent = order.lab_type_code;
    tr.insertCell().textContent = order.location;
    tr.insertCell().textContent = order.status;
    tr.insertCell().textContent = formatDuration(order.age_ms);
    tr.addEventListener("click", () => callbacks.onSelect(order));
  }
  el.appendChild(table);
}

export function renderVolumesPanel(
  el: HTMLElement,
  response: VolumesResponse | null,
  filters: DashboardFilters,
): void {
  if (!response) {
    empty(el, "no data in this window");
    return;
  }
  const counts = groupForFilters(response.groups, filters) ?? [];
  const totalCount = counts.reduce((a, b) => a + b, 0);
  el.replaceChildren();
  const total = document.createElement("div");
  total.className = "panel-total";
  total.dataset.testid = "volume-total";
  total.dataset.count = String(totalCount);
  total.textContent = `${totalCount} orders / ${formatDuration(response.bucket_ms)} buckets`;
  el.appendChild(total);
  if (totalCount === 0) {
    empty(el, "no orders in this window");
    return;
  }
  el.appendChild(barChart(counts));
}

/** Staleness badge fed by the last server_ts the client has seen. */
export function renderStaleness(el: HTMLElement, serverTs: number | null,
                                nowMs: number, stale: boolean): void {
  el.replaceChildren();
  const badge = document.createElement("span");
  badge.className = stale ? "staleness stale" : "staleness";
  badge.dataset.testid = "staleness";
  if (serverTs === null) {
    badge.textContent = "no data yet";
  } else {
    const age = Math.max(0, Math.round((nowMs - serverTs) / 1000));
    badge.dataset.serverTs = String(serverTs);
    badge.textContent = stale ? `STALE — last good ${age}s ago` : `updated ${age}s ago`;
  }
  el.appendChild(badge);
}

export type BannerState =
  | { kind: "login" }
  | { kind: "unavailable"; retrySeconds: number }
  | null;

export function renderBanner(el: HTMLElement, state: BannerState): void {
  el.replaceChildren();
  if (state === null) {
    return;
  }
  const banner = document.createElement("div");
  banner.className = `banner ${state.kind}`;
  banner.dataset.testid = `banner-${state.kind}`;
  if (state.kind === "login") {
    banner.textContent = "session rejected — enter a valid gateway token";
  } else {
    banner.textContent =
      `gateway unavailable — retrying in ${state.retrySeconds}s (showing last good data)`;
  }
  el.appendChild(banner);
}

export interface DetailState {
  order: OutstandingOrder | null;
  completed: { tatMs: number; status: string } | null;
  vanished: boolean;
}

export function renderDetailPane(el: HTMLElement, state: DetailState | null,
                                 nowMs: number): void {
  el.replaceChildren();
  if (!state || !state.order) {
    const hint = document.createElement("div");
    hint.className = "detail-hint";
    hint.textContent = "select an order to inspect its lifecycle";
    el.appendChild(hint);
    return;
  }
  const order = state.order;
  const title = document.createElement("h3");
  title.dataset.testid = "detail-order-id";
  title.textContent = order.order_id;
  el.appendChild(title);

  const copy = document.createElement("button");
  copy.textContent = "copy order id";
  copy.dataset.testid = "detail-copy";
  copy.addEventListener("click", () => {
    void navigator.clipboard?.writeText(order.order_id);
  });
  el.appendChild(copy);

  const dl = document.createElement("dl");
  const add = (label: string, value: string, testid?: string) => {
    const dt = document.createElement("dt");
    dt.textContent = label;
    const dd = document.createElement("dd");
    dd.textContent = value;
    if (testid) dd.dataset.testid = testid;
    dl.append(dt, dd);
  };
  add("ordered at", formatClock(order.order_ts));
  add("location", order.location);
  add("lab type", order.lab_type_code);
  if (state.completed) {
    add("status", state.completed.status, "detail-status");
    add("TAT", formatDuration(state.completed.tatMs), "detail-tat");
  } else {
    add("status", order.status, "detail-status");
    add("age", formatDuration(Math.max(0, nowMs - order.order_ts)), "detail-age");
  }
  el.appendChild(dl);

  if (state.vanished) {
    const note = document.createElement("div");
    note.className = "detail-notice";
    note.dataset.testid = "detail-vanished";
    note.textContent = "this order left the outstanding list between polls";
    el.appendChild(note);
  }
}
