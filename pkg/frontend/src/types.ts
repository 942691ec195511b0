/** Shapes of the gateway's JSON responses (all carry server_ts). */

export interface TatGroupStats {
  count: number;
  mean_ms: number;
  median_ms: number;
  p90_ms: number;
}

export interface TatResponse {
  groups: Record<string, TatGroupStats>;
  server_ts: number;
}

export interface OutstandingOrder {
  order_id: string;
  pt_mrn: string;
  lab_type_code: string;
  location: string;
  order_ts: number;
  status: string;
  age_ms: number;
}

export interface OutstandingResponse {
  total: number;
  groups: Record<string, number>;
  orders: OutstandingOrder[];
  server_ts: number;
}

export interface VolumesResponse {
  t0: number;
  t1: number;
  bucket_ms: number;
  n_buckets: number;
  groups: Record<string, number[]>;
  server_ts: number;
}

export interface HealthResponse {
  status: string;
  queue_depths: Record<string, Record<string, number>>;
  server_ts: number;
}
