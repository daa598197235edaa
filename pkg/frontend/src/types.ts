// Event records as the service emits them (trace file, REST, and SSE all
// share this shape).

export type EventKind =
  | "query_received"
  | "regions_detected"
  | "caption_ready"
  | "formulation_ready"
  | "subquestions_planned"
  | "search_issued"
  | "pages_fetched"
  | "pages_selected"
  | "response_summarized"
  | "knowledge_summarized"
  | "sufficiency_judged"
  | "answer_ready"
  | "error";

export interface TraceEvent {
  sequence_no: number;
  timestamp: string | number;
  kind: EventKind | string; // unknown kinds are tolerated and ignored
  payload: Record<string, unknown>;
}

export interface BoxPayload {
  x_min: number;
  y_min: number;
  x_max: number;
  y_max: number;
  confidence: number;
}

export interface RegionPayload {
  region_index: number;
  label: string;
  box: BoxPayload;
}

export interface SubQuestionPayload {
  node_id: string;
  ordinal: number;
  text: string;
}

export interface CandidatePayload {
  url: string;
  title: string;
}

export type Citation = [url: string, nodeId: string];
