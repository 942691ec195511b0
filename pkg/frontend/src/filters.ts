/**
 * Dashboard filter state and its two lossless serializations: the URL
 * query string (shareable/restorable view state) and the gateway query
 * parameters each panel sends.
 *
 * Location and lab-type are alternative drill dimensions: the gateway
 * groups by one dimension per query, so selecting one resets the other
 * to "all" (the panels then pick the server-computed group, never
 * re-aggregate records client-side).
 */

export type WindowPreset = "1h" | "8h" | "24h" | "7d";

export interface CustomWindow {
  t0: number;
  t1: number;
}

export interface DashboardFilters {
  location: string; // "all" or a location code
  labType: string; // "all" or a lab type code
  window: WindowPreset | CustomWindow;
  refreshSeconds: number; // >= 2
}

export const PRESET_MS: Record<WindowPreset, number> = {
  "1h": 3_600_000,
  "8h": 8 * 3_600_000,
  "24h": 24 * 3_600_000,
  "7d": 7 * 24 * 3_600_000,
};

// bucket sizes that tile each preset window evenly
const PRESET_BUCKET_MS: Record<WindowPreset, number> = {
  "1h": 300_000,
  "8h": 1_800_000,
  "24h": 3_600_000,
  "7d": 21_600_000,
};

export const MIN_REFRESH_SECONDS = 2;

export const DEFAULT_FILTERS: DashboardFilters = {
  location: "all",
  labType: "all",
  window: "24h",
  refreshSeconds: 5,
};

export function isPreset(w: DashboardFilters["window"]): w is WindowPreset {
  return typeof w === "string";
}

export function normalize(f: DashboardFilters): DashboardFilters {
  const out = { ...f };
  if (out.refreshSeconds < MIN_REFRESH_SECONDS) {
    out.refreshSeconds = MIN_REFRESH_SECONDS;
  }
  if (!isPreset(out.window) && out.window.t0 >= out.window.t1) {
    out.window = "24h";
  }
  if (out.location !== "all" && out.labType !== "all") {
    out.labType = "all"; // one drill dimension at a time
  }
  return out;
}

export function windowBounds(f: DashboardFilters, nowMs: number): CustomWindow {
  if (isPreset(f.window)) {
    return { t0: nowMs - PRESET_MS[f.window], t1: nowMs + 1 };
  }
  return f.window;
}

export function bucketMs(f: DashboardFilters): number {
  if (isPreset(f.window)) {
    return PRESET_BUCKET_MS[f.window];
  }
  const span = f.window.t1 - f.window.t0;
  return Math.max(60_000, Math.ceil(span / 24 / 60_000) * 60_000);
}

/** The group_by dimension the active filters require, if any. */
export function groupBy(f: DashboardFilters): "location" | "lab_type_code" | null {
  if (f.location !== "all") return "location";
  if (f.labType !== "all") return "lab_type_code";
  return null;
}

/** The group key whose server-computed numbers the panels display. */
export function selectedGroup(f: DashboardFilters): string {
  if (f.location !== "all") return f.location;
  if (f.labType !== "all") return f.labType;
  return "all";
}

function withGroupBy(f: DashboardFilters, params: URLSearchParams): URLSearchParams {
  const dim = groupBy(f);
  if (dim) params.set("group_by", dim);
  return params;
}

export function tatQuery(f: DashboardFilters, nowMs: number): URLSearchParams {
  const { t0, t1 } = windowBounds(f, nowMs);
  return withGroupBy(f, new URLSearchParams({ t0: String(t0), t1: String(t1) }));
}

export function outstandingQuery(f: DashboardFilters, nowMs: number): URLSearchParams {
  const params = new URLSearchParams({ now: String(nowMs), older_than: "0" });
  return withGroupBy(f, params);
}

export function volumesQuery(f: DashboardFilters, nowMs: number): URLSearchParams {
  const { t0, t1 } = windowBounds(f, nowMs);
  const params = new URLSearchParams({
    t0: String(t0),
    t1: String(t1),
    bucket: String(bucketMs(f)),
  });
  return withGroupBy(f, params);
}

/** Filters -> URL query string; fromUrl(toUrl(f)) === f. */
export function toUrl(f: DashboardFilters): string {
  const params = new URLSearchParams();
  params.set("loc", f.location);
  params.set("lab", f.labType);
  params.set("win", isPreset(f.window) ? f.window : `${f.window.t0}-${f.window.t1}`);
  params.set("refresh", String(f.refreshSeconds));
  return params.toString();
}

export function fromUrl(query: string): DashboardFilters {
  const params = new URLSearchParams(query);
  const win = params.get("win") ?? DEFAULT_FILTERS.window;
  let window: DashboardFilters["window"];
  if (win === "1h" || win === "8h" || win === "24h" || win === "7d") {
    window = win;
  } else {
    const m = /^(\d+)-(\d+)$/.exec(String(win));
    window = m ? { t0: Number(m[1]), t1: Number(m[2]) } : DEFAULT_FILTERS.window;
  }
  return normalize({
    location: params.get("loc") ?? "all",
    labType: params.get("lab") ?? "all",
    window,
    refreshSeconds: Number(params.get("refresh") ?? DEFAULT_FILTERS.refreshSeconds),
  });
}
