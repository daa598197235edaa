// Layout model for one region's search graph, derived purely from state.

import type { RegionGraphView, GraphNodeView } from "./state.js";

export interface PositionedNode extends GraphNodeView {
  x: number; // column within its level, centered around 0
  y: number; // level
}

export interface GraphLayout {
  nodes: PositionedNode[];
  edges: Array<{ from: PositionedNode; to: PositionedNode }>;
  nodeCount: number;
  edgeCount: number;
}

export function layoutGraph(graph: RegionGraphView): GraphLayout {
  const byLevel = new Map<number, GraphNodeView[]>();
  for (const node of Object.values(graph.nodes)) {
    const bucket = byLevel.get(node.level) ?? [];
    bucket.push(node);
    byLevel.set(node.level, bucket);
  }
  const positioned = new Map<string, PositionedNode>();
  for (const [level, nodes] of byLevel) {
    nodes.sort((a, b) => a.nodeId.localeCompare(b.nodeId));
    nodes.forEach((node, i) => {
      positioned.set(node.nodeId, { ...node, x: i - (nodes.length - 1) / 2, y: level });
    });
  }
  const edges = [];
  for (const [from, to] of graph.edges) {
    const a = positioned.get(from);
    const b = positioned.get(to);
    if (a && b) edges.push({ from: a, to: b });
  }
  return {
    nodes: [...positioned.values()].sort((a, b) => a.nodeId.localeCompare(b.nodeId)),
    edges,
    nodeCount: positioned.size,
    edgeCount: edges.length,
  };
}
