/**
 * Snapshot checks against the recorded gateway fixture: the rendered TAT
 * median/p90, outstanding count, and volume totals must equal the values
 * the gateway answered with — the console adds no arithmetic of its own.
 */

import { beforeEach, describe, expect, it } from "vitest";

import fixture from "./fixtures/gateway.json";
import { DEFAULT_FILTERS, type DashboardFilters } from "../src/filters.js";
import {
  formatDuration,
  renderBanner,
  renderDetailPane,
  renderOutstandingPanel,
  renderStaleness,
  renderTatPanel,
  renderVolumesPanel,
} from "../src/panels.js";
import type { OutstandingResponse, TatResponse, VolumesResponse } from "../src/types.js";

const tatFixture = fixture.tat as unknown as TatResponse;
const tatByLocation = fixture.tat_by_location as unknown as TatResponse;
const outstandingFixture = fixture.outstanding as unknown as OutstandingResponse;
const volumesFixture = fixture.volumes as unknown as VolumesResponse;

let host: HTMLElement;

beforeEach(() => {
  host = document.createElement("div");
  document.body.replaceChildren(host);
});

describe("tat panel", () => {
  it("renders exactly the fixture median and p90", () => {
    renderTatPanel(host, tatFixture, DEFAULT_FILTERS, []);
    const median = host.querySelector<HTMLElement>('[data-testid="tat-median"]')!;
    const p90 = host.querySelector<HTMLElement>('[data-testid="tat-p90"]')!;
    const count = host.querySelector<HTMLElement>('[data-testid="tat-count"]')!;
    expect(Number(median.dataset.ms)).toBe(tatFixture.groups.all!.median_ms);
    expect(Number(p90.dataset.ms)).toBe(tatFixture.groups.all!.p90_ms);
    expect(count.textContent).toBe(String(tatFixture.groups.all!.count));
    expect(median.textContent).toBe(formatDuration(tatFixture.groups.all!.median_ms));
  });

  it("location filter picks that location's server-computed group", () => {
    const filters: DashboardFilters = { ...DEFAULT_FILTERS, location: "ED" };
    renderTatPanel(host, tatByLocation, filters, []);
    const median = host.querySelector<HTMLElement>('[data-testid="tat-median"]')!;
    expect(Number(median.dataset.ms)).toBe(tatByLocation.groups.ED!.median_ms);
  });

  it("draws the trend once history exists", () => {
    renderTatPanel(host, tatFixture, DEFAULT_FILTERS, [
      { ts: 1, medianMs: 60_000, p90Ms: 90_000 },
      { ts: 2, medianMs: 65_000, p90Ms: 99_000 },
    ]);
    const lines = host.querySelectorAll("polyline");
    expect(lines).toHaveLength(2);
  });

  it("explicit no-data state, never blank", () => {
    renderTatPanel(host, null, DEFAULT_FILTERS, []);
    expect(host.querySelector('[data-testid="empty-state"]')?.textContent)
      .toMatch(/no data/);
    renderTatPanel(host, { groups: {}, server_ts: 1 }, DEFAULT_FILTERS, []);
    expect(host.querySelector('[data-testid="empty-state"]')).not.toBeNull();
  });
});

describe("outstanding panel", () => {
  it("renders the fixture total and row count", () => {
    renderOutstandingPanel(host, outstandingFixture, { onSelect: () => {}, selectedId: null });
    const total = host.querySelector<HTMLElement>('[data-testid="outstanding-total"]')!;
    expect(Number(total.dataset.count)).toBe(outstandingFixture.total);
    const rows = host.querySelectorAll("tbody tr");
    expect(rows).toHaveLength(outstandingFixture.orders.length);
  });

  it("sorts rows by age descending", () => {
    renderOutstandingPanel(host, outstandingFixture, { onSelect: () => {}, selectedId: null });
    const ages = [...host.querySelectorAll<HTMLElement>("tbody tr")].map(
      (tr) => Number(tr.dataset.ageMs));
    const sorted = [...ages].sort((a, b) => b - a);
    expect(ages).toEqual(sorted);
  });

  it("click selects the order", () => {
    let picked: string | null = null;
    renderOutstandingPanel(host, outstandingFixture, {
      onSelect: (o) => { picked = o.order_id; },
      selectedId: null,
    });
    const first = host.querySelector<HTMLElement>("tbody tr")!;
    first.click();
    expect(picked).toBe(first.dataset.orderId);
  });
});

describe("volumes panel", () => {
  it("total equals the sum of the fixture's bucket counts", () => {
    const filters: DashboardFilters = { ...DEFAULT_FILTERS, location: "ED" };
    renderVolumesPanel(host, volumesFixture, filters);
    const total = host.querySelector<HTMLElement>('[data-testid="volume-total"]')!;
    const expected = volumesFixture.groups.ED!.reduce((a, b) => a + b, 0);
    expect(Number(total.dataset.count)).toBe(expected);
    const bars = host.querySelectorAll("rect.bar");
    expect(bars).toHaveLength(volumesFixture.groups.ED!.length);
    const barTotal = [...bars].reduce(
      (acc, bar) => acc + Number((bar as SVGElement).dataset.count), 0);
    expect(barTotal).toBe(expected);
  });

  it("empty window shows the no-data state", () => {
    renderVolumesPanel(host, { t0: 0, t1: 1, bucket_ms: 1, n_buckets: 1,
                               groups: {}, server_ts: 1 }, DEFAULT_FILTERS);
    expect(host.querySelector('[data-testid="empty-state"]')).not.toBeNull();
  });
});

describe("staleness and banners", () => {
  it("shows age from server_ts", () => {
    renderStaleness(host, 1000, 31_000, false);
    const badge = host.querySelector<HTMLElement>('[data-testid="staleness"]')!;
    expect(badge.textContent).toBe("updated 30s ago");
    expect(badge.dataset.serverTs).toBe("1000");
  });

  it("marks stale data during an outage", () => {
    renderStaleness(host, 1000, 63_000, true);
    expect(host.querySelector(".staleness.stale")!.textContent).toMatch(/STALE/);
  });

  it("unavailable banner carries the retry countdown", () => {
    renderBanner(host, { kind: "unavailable", retrySeconds: 5 });
    expect(host.querySelector('[data-testid="banner-unavailable"]')!.textContent)
      .toMatch(/retrying in 5s/);
    renderBanner(host, null);
    expect(host.childElementCount).toBe(0);
  });

  it("login banner on auth failure", () => {
    renderBanner(host, { kind: "login" });
    expect(host.querySelector('[data-testid="banner-login"]')).not.toBeNull();
  });
});

describe("detail pane", () => {
  const order = outstandingFixture.orders[0]!;

  it("shows lifecycle and age for an outstanding order", () => {
    renderDetailPane(host, { order, completed: null, vanished: false },
                     order.order_ts + order.age_ms);
    expect(host.querySelector('[data-testid="detail-order-id"]')!.textContent)
      .toBe(order.order_id);
    expect(host.querySelector('[data-testid="detail-status"]')!.textContent)
      .toBe(order.status);
    expect(host.querySelector('[data-testid="detail-age"]')!.textContent)
      .toBe(formatDuration(order.age_ms));
  });

  it("updates to final with TAT when completed during view", () => {
    renderDetailPane(host, { order, completed: { tatMs: 123_000, status: "final" },
                             vanished: false }, 0);
    expect(host.querySelector('[data-testid="detail-status"]')!.textContent).toBe("final");
    expect(host.querySelector('[data-testid="detail-tat"]')!.textContent)
      .toBe(formatDuration(123_000));
  });

  it("notes an order that vanished between polls", () => {
    renderDetailPane(host, { order, completed: null, vanished: true }, 0);
    expect(host.querySelector('[data-testid="detail-vanished"]')).not.toBeNull();
  });
});
