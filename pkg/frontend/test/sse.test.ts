import { describe, expect, it, vi } from "vitest";

import { parseFrames, streamTraceEvents } from "../src/sse.js";
import type { TraceEvent } from "../src/types.js";

describe("frame parsing", () => {
  it("splits complete frames and keeps the remainder", () => {
    const buffer = 'id: 0\nevent: trace\ndata: {"a":1}\n\nid: 1\nevent: trace\ndata: {"b":';
    const { frames, rest } = parseFrames(buffer);
    expect(frames).toEqual([{ id: "0", event: "trace", data: '{"a":1}' }]);
    expect(rest).toContain('data: {"b":');
  });

  it("skips keepalive comments", () => {
    const { frames } = parseFrames(": keepalive\n\nevent: trace\ndata: {}\n\n");
    expect(frames).toHaveLength(1);
  });

  it("joins multi-line data", () => {
    const { frames } = parseFrames("event: trace\ndata: line1\ndata: line2\n\n");
    expect(frames[0]!.data).toBe("line1\nline2");
  });
});

function streamResponse(chunks: string[]): Response {
  const encoder = new TextEncoder();
  const body = new ReadableStream<Uint8Array>({
    start(controller) {
      for (const chunk of chunks) controller.enqueue(encoder.encode(chunk));
      controller.close();
    },
  });
  return new Response(body, { status: 200 });
}

describe("event streaming", () => {
  it("delivers parsed trace events across chunk boundaries", async () => {
    const frames =
      'id: 0\nevent: trace\ndata: {"sequence_no":0,"timestamp":"0","kind":"query_received","payload":{}}\n\n' +
      'id: 1\nevent: trace\ndata: {"sequence_no":1,"timestamp":"1","kind":"answer_ready","payload":{"text":"hi"}}\n\n';
    // split mid-frame to exercise buffering
    const fetchFn = vi.fn().mockResolvedValue(streamResponse([frames.slice(0, 70), frames.slice(70)]));
    const seen: TraceEvent[] = [];
    await streamTraceEvents("http://svc/v1/queries/q/events", (e) => seen.push(e), { fetchFn });
    expect(seen.map((e) => e.sequence_no)).toEqual([0, 1]);
    expect(seen[1]!.payload.text).toBe("hi");
  });

  it("raises on non-200 responses", async () => {
    const fetchFn = vi.fn().mockResolvedValue(new Response("nope", { status: 404 }));
    await expect(streamTraceEvents("u", () => {}, { fetchFn })).rejects.toThrow("HTTP 404");
  });
});
