/**
 * Bootstrap: read filters from the URL, wire the controls, start polling.
 * Gateway base URL and token come from localStorage (settable through the
 * login prompt) with ?gateway= as a first-run override.
 */

import { GatewayClient } from "./api.js";
import {
  DEFAULT_FILTERS,
  fromUrl,
  isPreset,
  normalize,
  toUrl,
  type DashboardFilters,
  type WindowPreset,
} from "./filters.js";
import {
  renderBanner,
  renderDetailPane,
  renderOutstandingPanel,
  renderStaleness,
  renderTatPanel,
  renderVolumesPanel,
  type DetailState,
  type TrendPoint,
} from "./panels.js";
import { PollLoop, type LoopStatus, type PanelData } from "./poll.js";
import type { OutstandingOrder } from "./types.js";

const TREND_CAPACITY = 120;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function main(): void {
  let filters: DashboardFilters = location.search
    ? fromUrl(location.search.slice(1))
    : { ...DEFAULT_FILTERS };
  const token = localStorage.getItem("vitallake.token") ?? "";
  const baseUrl =
    new URLSearchParams(location.search).get("gateway") ??
    localStorage.getItem("vitallake.gateway") ??
    location.origin;
  localStorage.setItem("vitallake.gateway", baseUrl);

  const client = new GatewayClient({ baseUrl, token });
  const trend: TrendPoint[] = [];
  let detail: DetailState | null = null;
  let selectedId: string | null = null;

  const panels = {
    tat: el("panel-tat"),
    outstanding: el("panel-outstanding"),
    volumes: el("panel-volumes"),
    detail: el("panel-detail"),
    staleness: el("staleness"),
    banner: el("banner"),
  };

  function selectOrder(order: OutstandingOrder): void {
    selectedId = order.order_id;
    detail = { order, completed: null, vanished: false };
    renderDetailPane(panels.detail, detail, Date.now());
    renderAll(loop.data);
  }

  function renderAll(data: PanelData): void {
    const stats = renderTatPanel(panels.tat, data.tat, filters, trend);
    if (stats && data.tat) {
      const last = trend[trend.length - 1];
      if (!last || last.ts !== data.tat.server_ts) {
        trend.push({ ts: data.tat.server_ts, medianMs: stats.median_ms, p90Ms: stats.p90_ms });
        if (trend.length > TREND_CAPACITY) trend.shift();
      }
    }
    renderOutstandingPanel(panels.outstanding, data.outstanding,
                           { onSelect: selectOrder, selectedId });
    renderVolumesPanel(panels.volumes, data.volumes, filters);
    if (detail?.order && data.outstanding) {
      const still = data.outstanding.orders.find(
        (o) => o.order_id === detail!.order!.order_id);
      if (still) {
        detail = { order: still, completed: null, vanished: false };
      } else if (!detail.vanished) {
        // left the outstanding list: completed (or out of window) since last poll
        detail = { ...detail, vanished: true };
      }
      renderDetailPane(panels.detail, detail, Date.now());
    }
    renderStaleness(panels.staleness, client.lastServerTs, Date.now(),
                    loop.status.kind === "unavailable");
  }

  function onStatus(status: LoopStatus): void {
    if (status.kind === "ok") {
      renderBanner(panels.banner, null);
    } else if (status.kind === "login") {
      renderBanner(panels.banner, { kind: "login" });
      const entered = prompt("gateway bearer token:");
      if (entered) {
        localStorage.setItem("vitallake.token", entered);
        location.reload();
      }
    } else {
      renderBanner(panels.banner, { kind: "unavailable", retrySeconds: status.retrySeconds });
      renderStaleness(panels.staleness, client.lastServerTs, Date.now(), true);
    }
  }

  const loop = new PollLoop(client, filters, {
    onData: (_panel, data) => renderAll(data),
    onStatus,
  });

  function applyFilters(next: DashboardFilters): void {
    filters = normalize(next);
    history.replaceState(null, "", `?${toUrl(filters)}`);
    syncControls();
    loop.setFilters(filters);
  }

  function syncControls(): void {
    (el("filter-location") as HTMLSelectElement).value = filters.location;
    (el("filter-labtype") as HTMLSelectElement).value = filters.labType;
    for (const button of document.querySelectorAll<HTMLButtonElement>("[data-window]")) {
      button.classList.toggle("active", isPreset(filters.window)
        && button.dataset.window === filters.window);
    }
    (el("filter-refresh") as HTMLInputElement).value = String(filters.refreshSeconds);
  }

  el("filter-location").addEventListener("change", (e) =>
    applyFilters({ ...filters, labType: "all",
                   location: (e.target as HTMLSelectElement).value }));
  el("filter-labtype").addEventListener("change", (e) =>
    applyFilters({ ...filters, location: "all",
                   labType: (e.target as HTMLSelectElement).value }));
  for (const button of document.querySelectorAll<HTMLButtonElement>("[data-window]")) {
    button.addEventListener("click", () =>
      applyFilters({ ...filters, window: button.dataset.window as WindowPreset }));
  }
  el("filter-refresh").addEventListener("change", (e) => {
    applyFilters({ ...filters,
                   refreshSeconds: Number((e.target as HTMLInputElement).value) });
    loop.start(); // re-arm the interval with the new cadence
  });

  history.replaceState(null, "", `?${toUrl(filters)}`);
  syncControls();
  renderDetailPane(panels.detail, null, Date.now());
  loop.start();
}

main();
