/**
 * The single rendering loop. Each tick issues at most one request per
 * panel; responses tagged with an older generation (filters changed in
 * flight) are discarded. A 503 keeps the last good data visible and
 * schedules a retry countdown; a 401 switches to the login state.
 */

import {
  AuthRequiredError,
  GatewayClient,
  GatewayUnavailableError,
} from "./api.js";
import type { DashboardFilters } from "./filters.js";
import { outstandingQuery, tatQuery, volumesQuery } from "./filters.js";
import type {
  OutstandingResponse,
  TatResponse,
  VolumesResponse,
} from "./types.js";

export type PanelName = "tat" | "outstanding" | "volumes";

export interface PanelData {
  tat: TatResponse | null;
  outstanding: OutstandingResponse | null;
  volumes: VolumesResponse | null;
}

export type LoopStatus =
  | { kind: "ok" }
  | { kind: "login" }
  | { kind: "unavailable"; retrySeconds: number };

export interface PollCallbacks {
  onData: (panel: PanelName, data: PanelData) => void;
  onStatus: (status: LoopStatus) => void;
}

const RETRY_SECONDS = 5;

export class PollLoop {
  readonly data: PanelData = { tat: null, outstanding: null, volumes: null };
  generation = 0;
  private readonly inflight = new Set<PanelName>();
  private readonly client: GatewayClient;
  private readonly callbacks: PollCallbacks;
  private readonly now: () => number;
  private filters: DashboardFilters;
  private timer: ReturnType<typeof setInterval> | null = null;
  status: LoopStatus = { kind: "ok" };

  constructor(client: GatewayClient, filters: DashboardFilters,
              callbacks: PollCallbacks, now: () => number = Date.now) {
    this.client = client;
    this.filters = filters;
    this.callbacks = callbacks;
    this.now = now;
  }

  setFilters(filters: DashboardFilters): void {
    this.filters = filters;
    this.generation += 1; // in-flight answers for the old filters are stale
    void this.tick();
  }

  start(): void {
    this.stop();
    void this.tick();
    this.timer = setInterval(() => void this.tick(), this.filters.refreshSeconds * 1000);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Issue one request per idle panel; resolves when all of them settle. */
  async tick(): Promise<void> {
    const nowMs = this.now();
    const gen = this.generation;
    const requests: Array<Promise<void>> = [];
    const panels: Array<[PanelName, () => Promise<PanelData[PanelName]>]> = [
      ["tat", () => this.client.tat(tatQuery(this.filters, nowMs))],
      ["outstanding", () => this.client.outstanding(outstandingQuery(this.filters, nowMs))],
      ["volumes", () => this.client.volumes(volumesQuery(this.filters, nowMs))],
    ];
    for (const [panel, fetcher] of panels) {
      if (this.inflight.has(panel)) {
        continue; // at most one in-flight request per panel
      }
      this.inflight.add(panel);
      requests.push(
        fetcher()
          .then((body) => {
            if (gen === this.generation) {
              (this.data as Record<PanelName, unknown>)[panel] = body;
              this.setStatus({ kind: "ok" });
              this.callbacks.onData(panel, this.data);
            }
          })
          .catch((err) => {
            if (gen !== this.generation) {
              return;
            }
            if (err instanceof AuthRequiredError) {
              this.setStatus({ kind: "login" });
            } else if (err instanceof GatewayUnavailableError) {
              // keep last good data visible; caller renders it marked stale
              this.setStatus({ kind: "unavailable", retrySeconds: RETRY_SECONDS });
            } else {
              throw err;
            }
          })
          .finally(() => {
            this.inflight.delete(panel);
          }),
      );
    }
    await Promise.all(requests);
  }

  private setStatus(status: LoopStatus): void {
    this.status = status;
    this.callbacks.onStatus(status);
  }
}
