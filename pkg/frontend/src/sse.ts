// Server-sent-events consumer on top of fetch, so it works with the same
// base URL handling and abort signals as the rest of the client.

import type { TraceEvent } from "./types.js";

export interface SseFrame {
  event: string;
  data: string;
  id?: string;
}

/** Split a raw SSE chunk buffer into complete frames; returns the remainder. */
export function parseFrames(buffer: string): { frames: SseFrame[]; rest: string } {
  const parts = buffer.split(/\r?\n\r?\n/);
  const rest = parts.pop() ?? "";
  const frames: SseFrame[] = [];
  for (const part of parts) {
    let event = "message";
    let id: string | undefined;
    const dataLines: string[] = [];
    for (const line of part.split(/\r?\n/)) {
      if (line.startsWith(":")) continue; // keepalive comment
      if (line.startsWith("event:")) event = line.slice(6).trim();
      else if (line.startsWith("data:")) dataLines.push(line.slice(5).trim());
      else if (line.startsWith("id:")) id = line.slice(3).trim();
    }
    if (dataLines.length > 0) frames.push({ event, data: dataLines.join("\n"), id });
  }
  return { frames, rest };
}

export async function streamTraceEvents(
  url: string,
  onEvent: (event: TraceEvent) => void,
  options: { fetchFn?: typeof fetch; signal?: AbortSignal } = {},
): Promise<void> {
  const fetchFn = options.fetchFn ?? fetch;
  const response = await fetchFn(url, { signal: options.signal });
  if (!response.ok) throw new Error(`event stream failed: HTTP ${response.status}`);
  if (!response.body) throw new Error("event stream has no body");

  const reader = response.body.getReader();
  const decoder = new TextDecoder("utf-8");
  let buffer = "";
  for (;;) {
    const { value, done } = await reader.read();
    if (done) break;
    buffer += decoder.decode(value, { stream: true });
    const { frames, rest } = parseFrames(buffer);
    buffer = rest;
    for (const frame of frames) {
      if (frame.event !== "trace") continue;
      try {
        onEvent(JSON.parse(frame.data) as TraceEvent);
      } catch (error) {
        console.warn("unparseable trace frame", error);
      }
    }
  }
}
