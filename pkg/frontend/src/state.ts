// UI state as a pure function of the received event prefix. applyEvent never
// mutates its input, so replaying any prefix of a trace always produces the
// same view, and tests can diff states structurally.

import type {
  CandidatePayload,
  Citation,
  RegionPayload,
  SubQuestionPayload,
  TraceEvent,
} from "./types.js";

export type NodeState = "planned" | "searching" | "summarized";

export interface GraphNodeView {
  nodeId: string;
  level: number;
  label: string;
  state: NodeState;
  responseText?: string;
}

export interface RegionGraphView {
  nodes: Record<string, GraphNodeView>;
  edges: Array<[parent: string, child: string]>;
}

export interface EvidenceView {
  candidates: CandidatePayload[];
  selected: number[]; // 1-based indices into candidates
  fallback: boolean;
}

export interface AnswerView {
  text: string;
  citations: Citation[];
  usedRegions: number[];
  partial: boolean;
}

export interface UIState {
  status: "idle" | "running" | "done" | "failed";
  queryId: string | null;
  prompt: string;
  mode: string;
  imageSize: { width: number; height: number } | null;
  fallbackRegion: boolean;
  regions: RegionPayload[];
  captions: Record<number, string>;
  formulations: Record<number, string>;
  graphs: Record<number, RegionGraphView>;
  evidence: Record<string, EvidenceView>;
  knowledge: Record<number, { level: number; text: string }>;
  sufficiency: Record<number, { level: number; sufficient: boolean }>;
  answer: AnswerView | null;
  errorMessage: string | null;
  lastSequence: number;
}

export function initialState(): UIState {
  return {
    status: "idle",
    queryId: null,
    prompt: "",
    mode: "",
    imageSize: null,
    fallbackRegion: false,
    regions: [],
    captions: {},
    formulations: {},
    graphs: {},
    evidence: {},
    knowledge: {},
    sufficiency: {},
    answer: null,
    errorMessage: null,
    lastSequence: -1,
  };
}

function regionGraph(state: UIState, region: number): RegionGraphView {
  return state.graphs[region] ?? { nodes: {}, edges: [] };
}

function withNode(
  graph: RegionGraphView,
  nodeId: string,
  update: Partial<GraphNodeView> & { level?: number; label?: string },
): RegionGraphView {
  const existing = graph.nodes[nodeId] ?? {
    nodeId,
    level: update.level ?? 0,
    label: update.label ?? nodeId,
    state: "planned" as NodeState,
  };
  return {
    ...graph,
    nodes: { ...graph.nodes, [nodeId]: { ...existing, ...update, nodeId } },
  };
}

/** Apply one in-order event; unknown kinds are ignored with a console warning. */
export function applyEvent(state: UIState, event: TraceEvent): UIState {
  const p = event.payload as Record<string, any>;
  const next = { ...state, lastSequence: event.sequence_no };
  switch (event.kind) {
    case "query_received":
      return {
        ...initialState(),
        status: "running",
        queryId: String(p.query_id ?? ""),
        prompt: String(p.prompt_text ?? ""),
        mode: String(p.mode ?? ""),
        lastSequence: event.sequence_no,
      };
    case "regions_detected":
      return {
        ...next,
        imageSize: { width: Number(p.image_width), height: Number(p.image_height) },
        fallbackRegion: Boolean(p.fallback_used),
        regions: (p.regions ?? []) as RegionPayload[],
      };
    case "caption_ready":
      return {
        ...next,
        captions: { ...state.captions, [Number(p.region_index)]: String(p.text) },
      };
    case "formulation_ready":
      return {
        ...next,
        formulations: { ...state.formulations, [Number(p.region_index)]: String(p.text) },
      };
    case "subquestions_planned": {
      const region = Number(p.region_index);
      let graph = regionGraph(state, region);
      const parentId = String(p.parent_node_id);
      if (!(parentId in graph.nodes)) {
        graph = withNode(graph, parentId, { level: Number(p.level) - 1, label: parentId, state: "summarized" });
      }
      for (const sub of (p.subquestions ?? []) as SubQuestionPayload[]) {
        graph = withNode(graph, sub.node_id, {
          level: Number(p.level),
          label: sub.text,
          state: "planned",
        });
        graph = { ...graph, edges: [...graph.edges, [parentId, sub.node_id]] };
      }
      return { ...next, graphs: { ...state.graphs, [region]: graph } };
    }
    case "search_issued": {
      const region = Number(p.region_index);
      const graph = withNode(regionGraph(state, region), String(p.node_id), { state: "searching" });
      return { ...next, graphs: { ...state.graphs, [region]: graph } };
    }
    case "pages_fetched":
      return next;
    case "pages_selected":
      return {
        ...next,
        evidence: {
          ...state.evidence,
          [String(p.node_id)]: {
            candidates: (p.candidates ?? []) as CandidatePayload[],
            selected: (p.selected ?? []) as number[],
            fallback: Boolean(p.fallback),
          },
        },
      };
    case "response_summarized": {
      const region = Number(p.region_index);
      const graph = withNode(regionGraph(state, region), String(p.node_id), {
        state: "summarized",
        responseText: String(p.text),
      });
      return { ...next, graphs: { ...state.graphs, [region]: graph } };
    }
    case "knowledge_summarized":
      return {
        ...next,
        knowledge: {
          ...state.knowledge,
          [Number(p.region_index)]: { level: Number(p.level), text: String(p.text) },
        },
      };
    case "sufficiency_judged":
      return {
        ...next,
        sufficiency: {
          ...state.sufficiency,
          [Number(p.region_index)]: { level: Number(p.level), sufficient: Boolean(p.sufficient) },
        },
      };
    case "answer_ready":
      return {
        ...next,
        status: "done",
        answer: {
          text: String(p.text),
          citations: (p.citations ?? []) as Citation[],
          usedRegions: (p.used_regions ?? []) as number[],
          partial: Boolean(p.partial),
        },
      };
    case "error":
      return { ...next, status: "failed", errorMessage: String(p.message ?? "unknown error") };
    default:
      console.warn(`ignoring unknown event kind: ${event.kind}`);
      return next;
  }
}

/** Buffers out-of-order events and applies them strictly by sequence_no. */
export class EventSequencer {
  private pending = new Map<number, TraceEvent>();

  constructor(
    private state: UIState = initialState(),
    private onChange: (state: UIState) => void = () => {},
  ) {}

  current(): UIState {
    return this.state;
  }

  push(event: TraceEvent): UIState {
    this.pending.set(event.sequence_no, event);
    let nextSeq = this.state.lastSequence + 1;
    while (this.pending.has(nextSeq)) {
      const ready = this.pending.get(nextSeq)!;
      this.pending.delete(nextSeq);
      this.state = applyEvent(this.state, ready);
      this.onChange(this.state);
      nextSeq = this.state.lastSequence + 1;
    }
    return this.state;
  }
}

export function canAbort(state: UIState): boolean {
  return state.status === "running" && state.queryId !== null;
}

export function canFollowUp(state: UIState): boolean {
  return state.status === "done";
}

/** Badge text for the answer panel; empty string when there is no badge. */
export function answerBadge(state: UIState): string {
  if (state.answer?.partial) return "partial answer";
  if (state.status === "failed") return "failed";
  return "";
}
