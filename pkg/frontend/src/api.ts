/**
 * Thin typed client for the gateway. 401 and 5xx become typed errors so
 * the poll loop can show the login prompt or the retry banner; every
 * successful body's server_ts is kept for the staleness badge.
 */

import type {
  HealthResponse,
  OutstandingResponse,
  TatResponse,
  VolumesResponse,
} from "./types.js";

export interface GatewayConfig {
  baseUrl: string; // e.g. "http://localhost:8080"
  token: string;
}

export class AuthRequiredError extends Error {
  constructor() {
    super("gateway rejected the bearer token");
    this.name = "AuthRequiredError";
  }
}

export class GatewayUnavailableError extends Error {
  constructor(detail: string) {
    super(detail);
    this.name = "GatewayUnavailableError";
  }
}

export class BadQueryError extends Error {
  readonly field: string;
  constructor(field: string, message: string) {
    super(message);
    this.name = "BadQueryError";
    this.field = field;
  }
}

export type FetchLike = (url: string, init: RequestInit) => Promise<Response>;

export class GatewayClient {
  private readonly cfg: GatewayConfig;
  private readonly fetchFn: FetchLike;
  lastServerTs: number | null = null;

  constructor(cfg: GatewayConfig, fetchFn?: FetchLike) {
    this.cfg = cfg;
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  private async get<T extends { server_ts: number }>(
    path: string,
    params?: URLSearchParams,
  ): Promise<T> {
    const qs = params && [...params.keys()].length ? `?${params.toString()}` : "";
    const url = `${this.cfg.baseUrl}/api/v1${path}${qs}`;
    let response: Response;
    try {
      response = await this.fetchFn(url, {
        headers: { Authorization: `Bearer ${this.cfg.token}` },
      });
    } catch (err) {
      throw new GatewayUnavailableError(`gateway unreachable: ${String(err)}`);
    }
    if (response.status === 401 || response.status === 403) {
      throw new AuthRequiredError();
    }
    if (response.status === 400) {
      const body = await response.json().catch(() => ({}));
      throw new BadQueryError(body.field ?? "?", body.message ?? "bad query");
    }
    if (!response.ok) {
      throw new GatewayUnavailableError(`gateway answered ${response.status}`);
    }
    const body = (await response.json()) as T;
    this.lastServerTs = body.server_ts;
    return body;
  }

  tat(params: URLSearchParams): Promise<TatResponse> {
    return this.get<TatResponse>("/lab/tat", params);
  }

  outstanding(params: URLSearchParams): Promise<OutstandingResponse> {
    return this.get<OutstandingResponse>("/lab/outstanding", params);
  }

  volumes(params: URLSearchParams): Promise<VolumesResponse> {
    return this.get<VolumesResponse>("/lab/volumes", params);
  }

  health(): Promise<HealthResponse> {
    return this.get<HealthResponse>("/platform/health");
  }
}
