// Payload shapes of the workspace HTTP API. Field names mirror the server's
// JSON exactly; nothing here is computed client-side.

export interface GraphMeta {
  id: string;
  name: string;
  nodes: number;
  edges: number;
  edge_types: number;
  original_ids: Array<string | number>;
}

export interface GraphDetail extends GraphMeta {
  current_config: string | null;
  has_artifacts: boolean;
}

export interface JobStarted {
  job: string;
  status: string;
  config_hash: string;
}

export interface JobInfo {
  id: string;
  graph: string;
  status: "queued" | "running" | "done" | "error";
  config_hash: string;
  cached: boolean;
  error: string | null;
  summary: Record<string, unknown> | null;
}

export interface DendrogramData {
  config_hash: string;
  n: number;
  /** merge i joins clusters [a, b] at height h, creating cluster n + i */
  merges: Array<[number, number, number]>;
  leaf_order: number[];
  root_height: number;
}

export type EdgeColor = "blue" | "red" | "neutral";

export interface MetaEdge {
  a: number;
  b: number;
  mean_p: number;
  edge_count: number;
  color: EdgeColor;
}

export interface CoarseView {
  graph: string;
  config_hash: string;
  merge_level: number;
  community_level: number;
  blue_threshold: number;
  red_threshold: number;
  /** member node indices per meta-node */
  meta_nodes: number[][];
  sizes: number[];
  /** meta-node indices per community outline */
  communities: number[][];
  meta_edges: MetaEdge[];
}

export interface PvwJobRequest {
  method?: "integral" | "hat" | "bruteforce" | "gibbs";
  workers?: number;
  seed?: number;
  m?: number;
  p_in?: number;
  p_out?: number;
  sweeps?: number;
}
